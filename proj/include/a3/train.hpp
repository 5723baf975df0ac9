#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "a3/grouping.hpp"
#include "a3/net.hpp"
#include "a3/rng.hpp"

namespace a3 {

struct CurriculumPlan {
  // Dataset epochs spent in stage 1 (singleton), 2 (fixed groups), 3 (permuted groups).
  std::array<double, 3> stage_fractions{0.2, 0.2, 1.0};
  std::vector<int> stage2_sizes{2, 4};
  int stage3_min = 1;
  int stage3_max = 4;
  int warmup_steps = 20;  // linear warmup at the start of every stage
  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  int seq_len = 256;
  std::uint64_t seed = 0;

  // Throws ValidationError.
  void validate(const ModelConfig& cfg) const;
};

struct Phase {
  int stage = 1;           // 1, 2 or 3
  std::size_t steps = 0;
  int group_size = 1;      // stages 1 and 2
  int size_min = 1;        // stage 3: group size drawn per sequence from [size_min, size_max]
  int size_max = 1;

  std::string describe() const;
};

// Throws ValidationError when the dataset is empty (nothing to schedule).
std::vector<Phase> schedule(const CurriculumPlan& plan, std::size_t dataset_tokens);

// Grouping for one training sequence of length n in the given phase. Stage 3
// draws both the group size and the permutation from rng.
Grouping sample_grouping(const Phase& phase, std::size_t n, Rng& rng, int* group_size = nullptr);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer with decoupled weight decay. Moments persist
// for the lifetime of the object (across curriculum stages).
class AdamW {
 public:
  AdamW(std::size_t n, AdamWConfig cfg = {});

  void step(std::span<float> params, std::span<const float> grads, double lr,
            double weight_decay);
  std::uint64_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<float> m_;
  std::vector<float> v_;
  std::uint64_t t_ = 0;
};

// Learning rate for 0-based step i within a stage.
double warmup_lr(double base, std::size_t step_in_stage, int warmup_steps);

struct LossRecord {
  std::size_t step = 0;
  int stage = 0;
  double group_size = 0;  // mean group size over the batch
  double loss = 0;        // mean token cross-entropy (nats)
  std::size_t tokens = 0; // loss terms in the batch
};

struct TrainEvent {
  enum class Kind { stage_end, final } kind = Kind::stage_end;
  int stage = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  std::string rng_state;
};

using CheckpointSink = std::function<void(const Params<float>&, const TrainEvent&)>;

struct TrainResult {
  Params<float> params;
  std::vector<LossRecord> log;
};

// Runs the schedule over packed sequences (all of length plan.seq_len).
// Gradients of a batch are computed in parallel with a fixed reduction
// order, so a run is reproducible for any thread count. On a non-finite
// loss the run stops with NumericError; checkpoints already handed to the
// sink are the last good state.
TrainResult train_run(const ModelConfig& cfg, const CurriculumPlan& plan,
                      const std::vector<std::vector<int>>& corpus, const CheckpointSink& sink = {},
                      std::ostream* progress = nullptr);

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& log);

struct TrainConfig {
  ModelConfig model;
  CurriculumPlan plan;
  std::filesystem::path data_path;
  std::filesystem::path out_dir = "run";
  // "bytes", or "chars" for a charset taken from the training data.
  std::string tokenizer = "bytes";
};

// JSON config with objects "model" (vocab size excluded; the tokenizer sets
// it) and "plan" plus "data": {"path"},
// "out": {"dir"}, "seed" and "tokenizer". Unknown keys are rejected. Relative paths are
// resolved against the config file's directory.
TrainConfig load_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config(const std::string& json_text,
                               const std::filesystem::path& base_dir = {});

}  // namespace a3
