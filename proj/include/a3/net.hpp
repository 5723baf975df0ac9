#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "a3/grouping.hpp"
#include "a3/rng.hpp"

namespace a3 {

struct ModelConfig {
  int vocab_size = 257;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_len = 257;
  int bos_id = 0;
  // Placeholder written into positions that are not yet generated. It is
  // never visible to a prediction that is allowed to depend on that position.
  int pad_id = 0;

  int ffn_dim() const { return 4 * d_model; }
  // Longest token sequence a forward pass accepts (one slot goes to BOS).
  int max_tokens() const { return max_len - 1; }

  // Throws ValidationError.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

// Offsets of every parameter tensor inside one flat buffer.
struct ParamLayout {
  struct Layer {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::size_t tok_emb = 0, pos_emb = 0, query_w = 0, lnf_g = 0, lnf_b = 0, out_w = 0;
  std::vector<Layer> layers;
  std::vector<TensorInfo> tensors;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& cfg);
};

// All learnable arrays of the two-stream transformer in one flat buffer.
// Gradients use the same type, so optimizers and checks can walk both
// buffers in lockstep.
template <typename T>
class Params {
 public:
  Params() = default;
  explicit Params(const ModelConfig& cfg);  // zero-filled

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::size_t size() const { return data_.size(); }

  T* at(std::size_t offset) { return data_.data() + offset; }
  const T* at(std::size_t offset) const { return data_.data() + offset; }
  // Lookup by tensor name, e.g. "layer1.wq" or "out_w". Throws on unknown names.
  std::span<T> tensor(std::string_view name);
  std::span<const T> tensor(std::string_view name) const;

  void zero();
  bool all_finite() const;

  bool operator==(const Params& o) const { return cfg_ == o.cfg_ && data_ == o.data_; }

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<T> data_;
};

template <typename To, typename From>
Params<To> params_cast(const Params<From>& p);

// Matrices ~ N(0, 1/d_model), layer-norm gains 1, biases 0, output projection 0.
Params<float> init_params(const ModelConfig& cfg, Rng& rng);

template <typename T>
struct ForwardResult {
  std::size_t rows = 0;   // N
  std::size_t vocab = 0;
  std::vector<T> logits;  // N x vocab, row i predicts token i
  // (N+1) x d_model final content-stream states, row 0 = BOS. Filled only
  // when requested.
  std::vector<T> content;

  std::span<const T> row(std::size_t i) const { return {logits.data() + i * vocab, vocab}; }
};

// Query-stream logits for every position of tokens under grouping g. Throws
// LengthError when tokens do not fit the context and ValidationError when g
// does not partition the positions.
template <typename T>
ForwardResult<T> forward(const Params<T>& params, std::span<const int> tokens, const Grouping& g,
                         bool content_states = false);

// Mean token cross-entropy (nats) of tokens under g; the gradient of that
// loss times `scale` is added into grad. Throws NumericError naming the
// first layer with non-finite activations when the loss is not finite.
template <typename T>
double accumulate_grad(const Params<T>& params, std::span<const int> tokens, const Grouping& g,
                       Params<T>& grad, T scale = T(1));

template <typename T>
struct LossGrad {
  double loss = 0.0;
  Params<T> grad;
};

template <typename T>
LossGrad<T> grad_loss(const Params<T>& params, std::span<const int> tokens, const Grouping& g);

// Numerically stable softmax of one logits row, in double.
template <typename T>
std::vector<double> softmax(std::span<const T> logits);

}  // namespace a3
