#include "a3/net.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "a3/error.hpp"
#include "a3/kernels.hpp"
#include "a3/masking.hpp"

namespace a3 {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("model config: " + what); };
  if (vocab_size < 1) fail("vocab_size must be positive");
  if (d_model < 1) fail("d_model must be positive");
  if (n_layers < 1) fail("n_layers must be positive");
  if (n_heads < 1) fail("n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (max_len < 2) fail("max_len must be at least 2");
  if (bos_id < 0 || bos_id >= vocab_size) fail("bos_id outside vocabulary");
  if (pad_id < 0 || pad_id >= vocab_size) fail("pad_id outside vocabulary");
}

ParamLayout ParamLayout::build(const ModelConfig& cfg) {
  cfg.validate();
  ParamLayout lay;
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.ffn_dim());
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    const std::size_t off = lay.total;
    lay.tensors.push_back({std::move(name), off, rows, cols});
    lay.total += rows * cols;
    return off;
  };
  lay.tok_emb = add("tok_emb", v, d);
  lay.pos_emb = add("pos_emb", static_cast<std::size_t>(cfg.max_len), d);
  lay.query_w = add("query_w", 1, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer ly{};
    ly.ln1_g = add(p + "ln1_g", 1, d);
    ly.ln1_b = add(p + "ln1_b", 1, d);
    ly.wq = add(p + "wq", d, d);
    ly.wk = add(p + "wk", d, d);
    ly.wv = add(p + "wv", d, d);
    ly.wo = add(p + "wo", d, d);
    ly.ln2_g = add(p + "ln2_g", 1, d);
    ly.ln2_b = add(p + "ln2_b", 1, d);
    ly.w1 = add(p + "w1", d, f);
    ly.b1 = add(p + "b1", 1, f);
    ly.w2 = add(p + "w2", f, d);
    ly.b2 = add(p + "b2", 1, d);
    lay.layers.push_back(ly);
  }
  lay.lnf_g = add("lnf_g", 1, d);
  lay.lnf_b = add("lnf_b", 1, d);
  lay.out_w = add("out_w", d, v);
  return lay;
}

template <typename T>
Params<T>::Params(const ModelConfig& cfg)
    : cfg_(cfg), layout_(ParamLayout::build(cfg)), data_(layout_.total, T(0)) {}

template <typename T>
std::span<T> Params<T>::tensor(std::string_view name) {
  for (const auto& t : layout_.tensors) {
    if (t.name == name) return {data_.data() + t.offset, t.size()};
  }
  throw ValidationError("unknown parameter tensor: " + std::string(name));
}

template <typename T>
std::span<const T> Params<T>::tensor(std::string_view name) const {
  return const_cast<Params*>(this)->tensor(name);
}

template <typename T>
void Params<T>::zero() {
  std::fill(data_.begin(), data_.end(), T(0));
}

template <typename T>
bool Params<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
}

template <typename To, typename From>
Params<To> params_cast(const Params<From>& p) {
  Params<To> out(p.config());
  auto src = p.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

Params<float> init_params(const ModelConfig& cfg, Rng& rng) {
  Params<float> p(cfg);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  for (const auto& t : p.layout().tensors) {
    auto span = p.tensor(t.name);
    const bool is_gain = t.name.ends_with("_g");
    const bool is_bias = t.name.ends_with("_b") || t.name.ends_with(".b1") ||
                         t.name.ends_with(".b2");
    if (t.name == "out_w" || is_bias) {
      std::fill(span.begin(), span.end(), 0.0f);
    } else if (is_gain) {
      std::fill(span.begin(), span.end(), 1.0f);
    } else {
      for (auto& x : span) x = static_cast<float>(rng.normal() * scale);
    }
  }
  return p;
}

template <typename T>
std::vector<double> softmax(std::span<const T> logits) {
  std::vector<double> p(logits.size());
  double mx = -INFINITY;
  for (T x : logits) mx = std::max(mx, static_cast<double>(x));
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += p[i];
  }
  for (auto& x : p) x /= sum;
  return p;
}

namespace {

template <typename T>
using Buf = std::vector<T>;

template <typename T>
struct StreamCache {
  Buf<T> ln1, ln1_mean, ln1_rstd;
  Buf<T> q, probs, ctx, h1;
  Buf<T> ln2, ln2_mean, ln2_rstd;
  Buf<T> f1, act;
};

// Activations of one forward pass, kept for the backward pass.
template <typename T>
struct Workspace {
  std::size_t n = 0;  // content rows (BOS + tokens)
  std::size_t m = 0;  // query rows (tokens)
  std::vector<int> ids;  // content-stream token ids, ids[0] = BOS
  Buf<std::uint8_t> mask_c, mask_q;
  std::vector<Buf<T>> xc, xq;  // residual stream inputs per layer (+ final)
  std::vector<Buf<T>> kc, vc;
  std::vector<StreamCache<T>> cc, qc;
  std::vector<bool> content_full;
  Buf<T> zf, zf_mean, zf_rstd;
  Buf<T> logits;
};

template <typename T>
void add_bias(std::size_t rows, std::size_t cols, const T* bias, T* x) {
  for (std::size_t i = 0; i < rows; ++i) {
    T* xi = x + i * cols;
    for (std::size_t j = 0; j < cols; ++j) xi[j] += bias[j];
  }
}

template <typename T>
void col_sum(std::size_t rows, std::size_t cols, const T* x, T* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += xi[j];
  }
}

// One transformer block for one stream: attention against keys/values
// (already projected from the content stream), then the feed-forward part.
template <typename T>
void block_forward(const Params<T>& p, const ParamLayout::Layer& ly, std::size_t rows,
                   std::size_t kv_rows, const Buf<T>& x, const Buf<T>& k, const Buf<T>& v,
                   const std::uint8_t* mask, StreamCache<T>& c, Buf<T>& out, bool ln1_done) {
  const auto& cfg = p.config();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.ffn_dim());
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  if (!ln1_done) {
    c.ln1.resize(rows * d);
    c.ln1_mean.resize(rows);
    c.ln1_rstd.resize(rows);
    kernels::layernorm_forward(rows, d, x.data(), p.at(ly.ln1_g), p.at(ly.ln1_b), c.ln1.data(),
                               c.ln1_mean.data(), c.ln1_rstd.data());
  }
  c.q.resize(rows * d);
  kernels::gemm_nn(rows, d, d, c.ln1.data(), p.at(ly.wq), c.q.data());
  c.probs.resize(heads * rows * kv_rows);
  c.ctx.resize(rows * d);
  kernels::attention_forward(AttentionShape{rows, kv_rows, d, heads}, c.q.data(), k.data(),
                             v.data(), mask, c.probs.data(), c.ctx.data());
  c.h1 = x;
  kernels::gemm_nn(rows, d, d, c.ctx.data(), p.at(ly.wo), c.h1.data(), true);
  c.ln2.resize(rows * d);
  c.ln2_mean.resize(rows);
  c.ln2_rstd.resize(rows);
  kernels::layernorm_forward(rows, d, c.h1.data(), p.at(ly.ln2_g), p.at(ly.ln2_b), c.ln2.data(),
                             c.ln2_mean.data(), c.ln2_rstd.data());
  c.f1.resize(rows * f);
  kernels::gemm_nn(rows, f, d, c.ln2.data(), p.at(ly.w1), c.f1.data());
  add_bias(rows, f, p.at(ly.b1), c.f1.data());
  c.act.resize(rows * f);
  kernels::gelu_forward(rows * f, c.f1.data(), c.act.data());
  out = c.h1;
  kernels::gemm_nn(rows, d, f, c.act.data(), p.at(ly.w2), out.data(), true);
  add_bias(rows, d, p.at(ly.b2), out.data());
}

// Backward through block_forward. dout is the gradient w.r.t. the block
// output; dx receives the gradient w.r.t. the block input (overwritten);
// dln1 receives the gradient w.r.t. the ln1 output from the query path only
// (the caller adds key/value contributions); dk/dv are accumulated.
template <typename T>
void block_backward(const Params<T>& p, Params<T>& g, const ParamLayout::Layer& ly,
                    std::size_t rows, std::size_t kv_rows, const Buf<T>& k, const Buf<T>& v,
                    const std::uint8_t* mask, const StreamCache<T>& c, const Buf<T>& dout,
                    Buf<T>& dx, Buf<T>& dln1, Buf<T>& dk, Buf<T>& dv) {
  const auto& cfg = p.config();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.ffn_dim());
  const auto heads = static_cast<std::size_t>(cfg.n_heads);

  Buf<T> dact(rows * f);
  kernels::gemm_nt(rows, f, d, dout.data(), p.at(ly.w2), dact.data());
  kernels::gemm_tn(f, d, rows, c.act.data(), dout.data(), g.at(ly.w2), true);
  col_sum(rows, d, dout.data(), g.at(ly.b2));
  Buf<T> df1(rows * f);
  kernels::gelu_backward(rows * f, c.f1.data(), dact.data(), df1.data());
  kernels::gemm_tn(d, f, rows, c.ln2.data(), df1.data(), g.at(ly.w1), true);
  col_sum(rows, f, df1.data(), g.at(ly.b1));
  Buf<T> dln2(rows * d);
  kernels::gemm_nt(rows, d, f, df1.data(), p.at(ly.w1), dln2.data());
  Buf<T> dh1 = dout;
  kernels::layernorm_backward(rows, d, dln2.data(), c.h1.data(), p.at(ly.ln2_g),
                              c.ln2_mean.data(), c.ln2_rstd.data(), dh1.data(), g.at(ly.ln2_g),
                              g.at(ly.ln2_b));

  Buf<T> dctx(rows * d);
  kernels::gemm_nt(rows, d, d, dh1.data(), p.at(ly.wo), dctx.data());
  kernels::gemm_tn(d, d, rows, c.ctx.data(), dh1.data(), g.at(ly.wo), true);
  Buf<T> dq(rows * d);
  kernels::attention_backward(AttentionShape{rows, kv_rows, d, heads}, c.q.data(), k.data(),
                              v.data(), mask, c.probs.data(), dctx.data(), dq.data(), dk.data(),
                              dv.data());
  kernels::gemm_tn(d, d, rows, c.ln1.data(), dq.data(), g.at(ly.wq), true);
  dln1.resize(rows * d);
  kernels::gemm_nt(rows, d, d, dq.data(), p.at(ly.wq), dln1.data());
  dx = std::move(dh1);
}

template <typename T>
void run_forward(const Params<T>& p, std::span<const int> tokens, const Grouping& g,
                 bool content_states, Workspace<T>& ws) {
  const auto& cfg = p.config();
  const auto& lay = p.layout();
  if (tokens.empty()) throw LengthError("forward: empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_tokens())) {
    throw LengthError("forward: " + std::to_string(tokens.size()) +
                      " tokens exceed the context of " + std::to_string(cfg.max_tokens()));
  }
  require_valid(g, tokens.size());
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw ValidationError("forward: token id " + std::to_string(t) + " outside vocabulary");
    }
  }

  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto nl = static_cast<std::size_t>(cfg.n_layers);
  const std::size_t m = tokens.size();
  const std::size_t n = m + 1;
  ws.n = n;
  ws.m = m;

  const MaskPair masks = make_mask_pair(g, true);
  ws.mask_c.assign(masks.content.row(0), masks.content.row(0) + n * n);
  // Query rows exist only for real positions; the sentinel row is dropped.
  ws.mask_q.assign(masks.query.row(1), masks.query.row(1) + m * n);

  ws.ids.resize(n);
  ws.ids[0] = cfg.bos_id;
  std::copy(tokens.begin(), tokens.end(), ws.ids.begin() + 1);

  ws.xc.assign(nl + 1, {});
  ws.xq.assign(nl + 1, {});
  ws.kc.assign(nl, {});
  ws.vc.assign(nl, {});
  ws.cc.assign(nl, {});
  ws.qc.assign(nl, {});
  ws.content_full.assign(nl, true);
  ws.content_full[nl - 1] = content_states;

  auto& x0 = ws.xc[0];
  x0.resize(n * d);
  for (std::size_t j = 0; j < n; ++j) {
    const T* te = p.at(lay.tok_emb) + static_cast<std::size_t>(ws.ids[j]) * d;
    const T* pe = p.at(lay.pos_emb) + j * d;
    for (std::size_t c = 0; c < d; ++c) x0[j * d + c] = te[c] + pe[c];
  }
  auto& q0 = ws.xq[0];
  q0.resize(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    const T* w = p.at(lay.query_w);
    const T* pe = p.at(lay.pos_emb) + (i + 1) * d;
    for (std::size_t c = 0; c < d; ++c) q0[i * d + c] = w[c] + pe[c];
  }

  for (std::size_t l = 0; l < nl; ++l) {
    const auto& ly = lay.layers[l];
    auto& cc = ws.cc[l];
    cc.ln1.resize(n * d);
    cc.ln1_mean.resize(n);
    cc.ln1_rstd.resize(n);
    kernels::layernorm_forward(n, d, ws.xc[l].data(), p.at(ly.ln1_g), p.at(ly.ln1_b),
                               cc.ln1.data(), cc.ln1_mean.data(), cc.ln1_rstd.data());
    ws.kc[l].resize(n * d);
    ws.vc[l].resize(n * d);
    kernels::gemm_nn(n, d, d, cc.ln1.data(), p.at(ly.wk), ws.kc[l].data());
    kernels::gemm_nn(n, d, d, cc.ln1.data(), p.at(ly.wv), ws.vc[l].data());
    if (ws.content_full[l]) {
      block_forward(p, ly, n, n, ws.xc[l], ws.kc[l], ws.vc[l], ws.mask_c.data(), cc,
                    ws.xc[l + 1], true);
    }
    block_forward(p, ly, m, n, ws.xq[l], ws.kc[l], ws.vc[l], ws.mask_q.data(), ws.qc[l],
                  ws.xq[l + 1], false);
  }

  ws.zf.resize(m * d);
  ws.zf_mean.resize(m);
  ws.zf_rstd.resize(m);
  kernels::layernorm_forward(m, d, ws.xq[nl].data(), p.at(lay.lnf_g), p.at(lay.lnf_b),
                             ws.zf.data(), ws.zf_mean.data(), ws.zf_rstd.data());
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  ws.logits.resize(m * v);
  kernels::gemm_nn(m, v, d, ws.zf.data(), p.at(lay.out_w), ws.logits.data());
}

template <typename T>
bool finite(const Buf<T>& b) {
  return std::all_of(b.begin(), b.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
[[noreturn]] void throw_non_finite(const Workspace<T>& ws) {
  for (std::size_t l = 0; l + 1 < ws.xq.size(); ++l) {
    if (!finite(ws.xc[l + 1]) || !finite(ws.xq[l + 1]) || !finite(ws.kc[l]) ||
        !finite(ws.vc[l])) {
      throw NumericError("non-finite activations in layer " + std::to_string(l));
    }
  }
  throw NumericError("non-finite loss in output head");
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const Params<T>& params, std::span<const int> tokens, const Grouping& g,
                         bool content_states) {
  Workspace<T> ws;
  run_forward(params, tokens, g, content_states, ws);
  ForwardResult<T> out;
  out.rows = ws.m;
  out.vocab = static_cast<std::size_t>(params.config().vocab_size);
  out.logits = std::move(ws.logits);
  if (content_states) out.content = std::move(ws.xc.back());
  return out;
}

template <typename T>
double accumulate_grad(const Params<T>& params, std::span<const int> tokens, const Grouping& g,
                       Params<T>& grad, T scale) {
  const auto& cfg = params.config();
  const auto& lay = params.layout();
  if (!(grad.config() == cfg)) throw ShapeError("gradient buffer does not match parameters");

  Workspace<T> ws;
  run_forward(params, tokens, g, false, ws);

  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto nl = static_cast<std::size_t>(cfg.n_layers);
  const std::size_t m = ws.m, n = ws.n;

  // Cross-entropy and its gradient w.r.t. the logits.
  double loss = 0.0;
  Buf<T> dlogits(m * v);
  const T inv_m = scale / static_cast<T>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto probs = softmax(std::span<const T>(ws.logits.data() + i * v, v));
    const auto target = static_cast<std::size_t>(tokens[i]);
    loss -= std::log(probs[target]);
    for (std::size_t c = 0; c < v; ++c) {
      dlogits[i * v + c] = static_cast<T>(probs[c]) * inv_m;
    }
    dlogits[i * v + target] -= inv_m;
  }
  loss /= static_cast<double>(m);
  if (!std::isfinite(loss)) throw_non_finite(ws);

  kernels::gemm_tn(d, v, m, ws.zf.data(), dlogits.data(), grad.at(lay.out_w), true);
  Buf<T> dz(m * d);
  kernels::gemm_nt(m, d, v, dlogits.data(), params.at(lay.out_w), dz.data());
  Buf<T> dxq(m * d, T(0));
  kernels::layernorm_backward(m, d, dz.data(), ws.xq[nl].data(), params.at(lay.lnf_g),
                              ws.zf_mean.data(), ws.zf_rstd.data(), dxq.data(),
                              grad.at(lay.lnf_g), grad.at(lay.lnf_b));
  // The final content states feed nothing, so their gradient starts at zero.
  Buf<T> dxc(n * d, T(0));

  for (std::size_t l = nl; l-- > 0;) {
    const auto& ly = lay.layers[l];
    Buf<T> dk(n * d, T(0)), dv(n * d, T(0));

    Buf<T> dxq_in, dln1_q;
    block_backward(params, grad, ly, m, n, ws.kc[l], ws.vc[l], ws.mask_q.data(), ws.qc[l], dxq,
                   dxq_in, dln1_q, dk, dv);
    kernels::layernorm_backward(m, d, dln1_q.data(), ws.xq[l].data(), params.at(ly.ln1_g),
                                ws.qc[l].ln1_mean.data(), ws.qc[l].ln1_rstd.data(),
                                dxq_in.data(), grad.at(ly.ln1_g), grad.at(ly.ln1_b));

    const auto& cc = ws.cc[l];
    Buf<T> dxc_in, dln1_c;
    if (ws.content_full[l]) {
      block_backward(params, grad, ly, n, n, ws.kc[l], ws.vc[l], ws.mask_c.data(), cc, dxc,
                     dxc_in, dln1_c, dk, dv);
    } else {
      dxc_in = dxc;
      dln1_c.assign(n * d, T(0));
    }
    kernels::gemm_tn(d, d, n, cc.ln1.data(), dk.data(), grad.at(ly.wk), true);
    kernels::gemm_tn(d, d, n, cc.ln1.data(), dv.data(), grad.at(ly.wv), true);
    kernels::gemm_nt(n, d, d, dk.data(), params.at(ly.wk), dln1_c.data(), true);
    kernels::gemm_nt(n, d, d, dv.data(), params.at(ly.wv), dln1_c.data(), true);
    kernels::layernorm_backward(n, d, dln1_c.data(), ws.xc[l].data(), params.at(ly.ln1_g),
                                cc.ln1_mean.data(), cc.ln1_rstd.data(), dxc_in.data(),
                                grad.at(ly.ln1_g), grad.at(ly.ln1_b));
    dxc = std::move(dxc_in);
    dxq = std::move(dxq_in);
  }

  for (std::size_t j = 0; j < n; ++j) {
    T* te = grad.at(lay.tok_emb) + static_cast<std::size_t>(ws.ids[j]) * d;
    T* pe = grad.at(lay.pos_emb) + j * d;
    for (std::size_t c = 0; c < d; ++c) {
      te[c] += dxc[j * d + c];
      pe[c] += dxc[j * d + c];
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    T* w = grad.at(lay.query_w);
    T* pe = grad.at(lay.pos_emb) + (i + 1) * d;
    for (std::size_t c = 0; c < d; ++c) {
      w[c] += dxq[i * d + c];
      pe[c] += dxq[i * d + c];
    }
  }
  return loss;
}

template <typename T>
LossGrad<T> grad_loss(const Params<T>& params, std::span<const int> tokens, const Grouping& g) {
  LossGrad<T> out{0.0, Params<T>(params.config())};
  out.loss = accumulate_grad(params, tokens, g, out.grad, T(1));
  return out;
}

template class Params<float>;
template class Params<double>;
template Params<double> params_cast<double, float>(const Params<float>&);
template Params<float> params_cast<float, double>(const Params<double>&);
template Params<float> params_cast<float, float>(const Params<float>&);
template Params<double> params_cast<double, double>(const Params<double>&);
template ForwardResult<float> forward(const Params<float>&, std::span<const int>,
                                      const Grouping&, bool);
template ForwardResult<double> forward(const Params<double>&, std::span<const int>,
                                       const Grouping&, bool);
template double accumulate_grad(const Params<float>&, std::span<const int>, const Grouping&,
                                Params<float>&, float);
template double accumulate_grad(const Params<double>&, std::span<const int>, const Grouping&,
                                Params<double>&, double);
template LossGrad<float> grad_loss(const Params<float>&, std::span<const int>, const Grouping&);
template LossGrad<double> grad_loss(const Params<double>&, std::span<const int>,
                                    const Grouping&);
template std::vector<double> softmax(std::span<const float>);
template std::vector<double> softmax(std::span<const double>);

}  // namespace a3
