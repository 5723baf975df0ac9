#include "a3/train.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "a3/error.hpp"

namespace a3 {

void CurriculumPlan::validate(const ModelConfig& cfg) const {
  bool any = false;
  for (double f : stage_fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ValidationError("plan: stage fractions must be >= 0");
    any = any || f > 0.0;
  }
  if (!any) throw ValidationError("plan: at least one stage fraction must be positive");
  if (stage_fractions[1] > 0.0 && stage2_sizes.empty()) {
    throw ValidationError("plan: stage 2 is enabled but stage2_sizes is empty");
  }
  for (int s : stage2_sizes) {
    if (s < 1 || s > cfg.max_len) throw ValidationError("plan: stage2 size out of range");
  }
  if (stage3_min < 1 || stage3_max < stage3_min || stage3_max > cfg.max_len) {
    throw ValidationError("plan: stage3 size range must lie within [1, max_len]");
  }
  if (warmup_steps < 0) throw ValidationError("plan: warmup_steps must be >= 0");
  if (!(lr > 0.0)) throw ValidationError("plan: lr must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("plan: weight_decay must be >= 0");
  if (batch_size < 1) throw ValidationError("plan: batch_size must be >= 1");
  if (seq_len < 1 || seq_len > cfg.max_tokens()) {
    throw ValidationError("plan: seq_len must be in [1, max_len - 1]");
  }
}

std::string Phase::describe() const {
  std::ostringstream os;
  os << "stage " << stage << ": " << steps << " steps, ";
  switch (stage) {
    case 1: os << "singleton groups"; break;
    case 2: os << "contiguous groups of size " << group_size; break;
    default: os << "permuted groups, size uniform in [" << size_min << ", " << size_max << "]";
  }
  return os.str();
}

std::vector<Phase> schedule(const CurriculumPlan& plan, std::size_t dataset_tokens) {
  const std::size_t per_epoch =
      dataset_tokens / (static_cast<std::size_t>(plan.batch_size) * static_cast<std::size_t>(plan.seq_len));
  if (dataset_tokens == 0) throw ValidationError("schedule: empty dataset, nothing to train on");

  auto steps_for = [&](double fraction) -> std::size_t {
    if (fraction <= 0.0) return 0;
    // Small epsilon keeps e.g. 0.2 * 100 from rounding down to 19.
    const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(per_epoch) + 1e-9));
    return std::max<std::size_t>(n, 1);
  };

  std::vector<Phase> out;
  if (auto n = steps_for(plan.stage_fractions[0])) out.push_back({1, n, 1, 1, 1});
  if (auto n = steps_for(plan.stage_fractions[1])) {
    std::vector<int> sizes = plan.stage2_sizes;
    std::sort(sizes.begin(), sizes.end());
    const std::size_t k = sizes.size();
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t share = n / k + (i < n % k ? 1 : 0);
      if (share > 0) out.push_back({2, share, sizes[i], sizes[i], sizes[i]});
    }
  }
  if (auto n = steps_for(plan.stage_fractions[2])) {
    out.push_back({3, n, 0, plan.stage3_min, plan.stage3_max});
  }
  return out;
}

Grouping sample_grouping(const Phase& phase, std::size_t n, Rng& rng, int* group_size) {
  int s = phase.group_size;
  Grouping g;
  switch (phase.stage) {
    case 1:
      s = 1;
      g = make_singleton(n);
      break;
    case 2:
      g = make_fixed(n, static_cast<std::size_t>(s));
      break;
    default:
      s = static_cast<int>(rng.range(phase.size_min, phase.size_max));
      g = make_permuted(n, static_cast<std::size_t>(s), rng);
  }
  if (group_size) *group_size = s;
  return g;
}

AdamW::AdamW(std::size_t n, AdamWConfig cfg) : cfg_(cfg), m_(n, 0.0f), v_(n, 0.0f) {}

void AdamW::step(std::span<float> params, std::span<const float> grads, double lr,
                 double weight_decay) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("AdamW: parameter/gradient size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(cfg_.eps);
  const auto decay = static_cast<float>(1.0 - lr * weight_decay);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(params.size());
  float* p = params.data();
  const float* g = grads.data();
  float* m = m_.data();
  float* v = v_.data();
#pragma omp parallel for simd if (n > (1 << 16)) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    p[i] = p[i] * decay - step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
  }
}

double warmup_lr(double base, std::size_t step_in_stage, int warmup_steps) {
  if (warmup_steps <= 0) return base;
  const double frac = static_cast<double>(step_in_stage + 1) / static_cast<double>(warmup_steps);
  return base * std::min(1.0, frac);
}

TrainResult train_run(const ModelConfig& cfg, const CurriculumPlan& plan,
                      const std::vector<std::vector<int>>& corpus, const CheckpointSink& sink,
                      std::ostream* progress) {
  cfg.validate();
  plan.validate(cfg);
  if (corpus.empty()) throw ValidationError("train_run: empty corpus");
  const auto n = static_cast<std::size_t>(plan.seq_len);
  for (const auto& seq : corpus) {
    if (seq.size() != n) throw LengthError("train_run: every sequence must have seq_len tokens");
    for (int t : seq) {
      if (t < 0 || t >= cfg.vocab_size) throw ValidationError("train_run: token id out of vocabulary");
    }
  }

  const auto phases = schedule(plan, corpus.size() * n);

  // Independent streams so that e.g. changing the schedule does not change the init.
  Rng init_rng(plan.seed);
  Rng data_rng(plan.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng group_rng(plan.seed ^ 0xd1b54a32d192ed03ULL);

  TrainResult res;
  res.params = init_params(cfg, init_rng);
  Params<float>& params = res.params;
  AdamW opt(params.size(), {plan.beta1, plan.beta2, plan.eps});

  const auto batch = static_cast<std::size_t>(plan.batch_size);
  std::vector<Params<float>> grads(batch, Params<float>(cfg));
  Params<float> total(cfg);
  std::vector<double> losses(batch);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();  // forces a shuffle before the first batch
  auto next_index = [&] {
    if (cursor == order.size()) {
      data_rng.shuffle(std::span<std::size_t>(order));
      cursor = 0;
    }
    return order[cursor++];
  };

  std::size_t step = 0;
  const float scale = 1.0f / static_cast<float>(batch);
  for (std::size_t pi = 0; pi < phases.size(); ++pi) {
    const Phase& phase = phases[pi];
    const bool stage_start = pi == 0 || phases[pi - 1].stage != phase.stage;
    std::size_t stage_step = 0;
    if (!stage_start) {
      for (std::size_t q = pi; q-- > 0 && phases[q].stage == phase.stage;) stage_step += phases[q].steps;
    }
    if (progress) *progress << "# " << phase.describe() << '\n';

    for (std::size_t s = 0; s < phase.steps; ++s, ++stage_step, ++step) {
      std::vector<std::size_t> idx(batch);
      std::vector<Grouping> groupings(batch);
      double size_sum = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        idx[b] = next_index();
        int gs = 1;
        groupings[b] = sample_grouping(phase, n, group_rng, &gs);
        size_sum += gs;
      }

      std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1) if (batch > 1 && omp_get_max_threads() > 1)
      for (std::size_t b = 0; b < batch; ++b) {
        try {
          grads[b].zero();
          losses[b] = accumulate_grad(params, corpus[idx[b]], groupings[b], grads[b], scale);
        } catch (...) {
#pragma omp critical
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);

      // Fixed-order reduction: identical sums regardless of thread count.
      auto tv = total.values();
      std::copy(grads[0].values().begin(), grads[0].values().end(), tv.begin());
      for (std::size_t b = 1; b < batch; ++b) {
        const auto gv = grads[b].values();
        const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(tv.size());
#pragma omp parallel for simd if (m > (1 << 16)) schedule(static)
        for (std::ptrdiff_t i = 0; i < m; ++i) tv[i] += gv[i];
      }

      double loss = 0;
      for (double l : losses) loss += l;
      loss /= static_cast<double>(batch);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at step " + std::to_string(step));
      }

      opt.step(params.values(), total.values(), warmup_lr(plan.lr, stage_step, plan.warmup_steps),
               plan.weight_decay);
      if (!params.all_finite()) {
        throw NumericError("parameters became non-finite at step " + std::to_string(step));
      }

      LossRecord rec{step, phase.stage, size_sum / static_cast<double>(batch), loss, batch * n};
      res.log.push_back(rec);
      if (progress && (step % 10 == 0)) {
        *progress << "step " << step << " stage " << phase.stage << " loss " << std::fixed
                  << std::setprecision(4) << loss << std::defaultfloat << '\n';
      }
    }

    const bool stage_end = pi + 1 == phases.size() || phases[pi + 1].stage != phase.stage;
    if (stage_end && sink) {
      sink(params, {TrainEvent::Kind::stage_end, phase.stage, step, group_rng.state()});
    }
  }
  if (sink) sink(params, {TrainEvent::Kind::final, phases.empty() ? 0 : phases.back().stage, step,
                          group_rng.state()});
  return res;
}

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& log) {
  os << "step,stage,s,loss\n";
  for (const auto& r : log) {
    os << r.step << ',' << r.stage << ',' << r.group_size << ',' << std::setprecision(9) << r.loss
       << std::defaultfloat << '\n';
  }
}

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ValidationError("config: unknown key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& dst) {
  if (auto it = obj.find(key); it != obj.end()) dst = it->get<T>();
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  TrainConfig tc;
  try {
    reject_unknown(root, {"model", "plan", "data", "out", "seed", "tokenizer"}, "");
    if (root.contains("model")) {
      const auto& m = root["model"];
      // vocab_size is not a key: it always comes from the tokenizer.
      reject_unknown(m, {"d_model", "n_layers", "n_heads", "max_len"}, "model.");
      read(m, "d_model", tc.model.d_model);
      read(m, "n_layers", tc.model.n_layers);
      read(m, "n_heads", tc.model.n_heads);
      read(m, "max_len", tc.model.max_len);
    }
    if (root.contains("plan")) {
      const auto& p = root["plan"];
      reject_unknown(p,
                     {"stage_fractions", "stage2_sizes", "stage3_min", "stage3_max", "warmup_steps",
                      "lr", "weight_decay", "beta1", "beta2", "eps", "batch_size", "seq_len"},
                     "plan.");
      if (p.contains("stage_fractions")) {
        const auto v = p["stage_fractions"].get<std::vector<double>>();
        if (v.size() != 3) throw ValidationError("config: plan.stage_fractions needs 3 values");
        std::copy(v.begin(), v.end(), tc.plan.stage_fractions.begin());
      }
      read(p, "stage2_sizes", tc.plan.stage2_sizes);
      read(p, "stage3_min", tc.plan.stage3_min);
      read(p, "stage3_max", tc.plan.stage3_max);
      read(p, "warmup_steps", tc.plan.warmup_steps);
      read(p, "lr", tc.plan.lr);
      read(p, "weight_decay", tc.plan.weight_decay);
      read(p, "beta1", tc.plan.beta1);
      read(p, "beta2", tc.plan.beta2);
      read(p, "eps", tc.plan.eps);
      read(p, "batch_size", tc.plan.batch_size);
      read(p, "seq_len", tc.plan.seq_len);
    }
    if (root.contains("data")) {
      reject_unknown(root["data"], {"path"}, "data.");
      tc.data_path = root["data"].value("path", std::string());
    }
    if (root.contains("out")) {
      reject_unknown(root["out"], {"dir"}, "out.");
      tc.out_dir = root["out"].value("dir", std::string("run"));
    }
    read(root, "seed", tc.plan.seed);
    read(root, "tokenizer", tc.tokenizer);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (tc.data_path.empty()) throw ValidationError("config: data.path is required");
  if (tc.tokenizer != "bytes" && tc.tokenizer != "chars") {
    throw ValidationError("config: tokenizer must be \"bytes\" or \"chars\"");
  }
  if (tc.data_path.is_relative() && !base_dir.empty()) tc.data_path = base_dir / tc.data_path;
  if (tc.out_dir.is_relative() && !base_dir.empty()) tc.out_dir = base_dir / tc.out_dir;
  return tc;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_train_config(os.str(), path.parent_path());
}

}  // namespace a3
