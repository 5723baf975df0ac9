#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "a3/grouping.hpp"
#include "a3/net.hpp"
#include "a3/rng.hpp"

namespace a3 {

enum class Strategy { groupwise, dynamic };

// `ordered` scores every position equally, so the lowest index wins: with
// commit size 1 it decodes strictly left to right.
enum class Criterion { confidence, entropy, random, ordered };

// How dynamic decoding groups already-known tokens when it builds the
// grouping for the next forward pass.
//   ordered: the initial context is cut into group_size chunks and each
//            committed set becomes its own group, in commit order. Content
//            states of a token then depend only on what was known when it
//            was committed, matching the groupings seen in training.
//   merged:  all known tokens form a single context group.
enum class ContextMode { ordered, merged };

std::string to_string(Strategy s);
std::string to_string(Criterion c);
std::string to_string(ContextMode m);
Strategy parse_strategy(const std::string& s);
Criterion parse_criterion(const std::string& s);
ContextMode parse_context_mode(const std::string& s);

struct DecodeConfig {
  Strategy strategy = Strategy::groupwise;
  std::size_t group_size = 1;
  Criterion criterion = Criterion::confidence;
  double temperature = 1.5;
  double top_p = 0.95;
  bool greedy = false;
  std::size_t max_new = 32;
  std::uint64_t seed = 0;
  ContextMode context = ContextMode::ordered;

  // Throws ValidationError.
  void validate() const;
};

// dist must sum to 1 +- 1e-6 (ValidationError otherwise); non-finite entries
// raise NumericError. Greedy returns the argmax, lowest id on ties.
int sample_token(std::span<const double> dist, double temperature, double top_p, bool greedy,
                 Rng& rng);

struct PositionDist {
  int position = 0;
  std::vector<double> probs;
};

double criterion_score(std::span<const double> probs, Criterion c);

// Picks min(g, rows.size()) positions: highest max-probability, lowest
// entropy, a uniform subset, or the lowest indices. Ties go to the lower
// position. Returned ascending.
std::vector<int> select_commit(const std::vector<PositionDist>& rows, Criterion c, std::size_t g,
                               Rng& rng);

// A sequence in which some positions are known (prompt/context) and the rest
// are blanks to be generated.
struct Template {
  std::vector<int> tokens;  // value at blank positions is ignored
  std::vector<bool> known;

  static Template prompt_then_blanks(std::span<const int> prompt, std::size_t blanks);
  static Template infill(std::span<const int> left, std::size_t blanks, std::span<const int> right);
  std::vector<int> blank_positions() const;
  std::vector<int> known_positions() const;
};

struct CommitRecord {
  std::size_t iteration = 0;
  std::vector<int> positions;
  std::vector<double> scores;  // criterion score of each committed position
  std::size_t evaluated = 0;   // positions whose distributions this pass produced
};

struct DecodeResult {
  std::vector<int> tokens;
  std::vector<CommitRecord> trace;
  std::size_t forward_passes = 0;
  std::size_t evaluated_positions = 0;
  std::string warning;
};

// Algorithm: one forward pass per group after the prompt groups; every
// position of the group is sampled independently from its row. The known
// positions of tmpl must be exactly the first k0 groups of g.
DecodeResult groupwise_sample(const Params<float>& params, const Template& tmpl, const Grouping& g,
                              const DecodeConfig& cfg);

// Repeatedly predicts every blank conditioned on the known tokens, commits
// the min(group_size, |blanks|) best positions by the criterion and samples
// them. context_groups, when given, is the initial grouping of the known
// positions (it must cover exactly those positions).
DecodeResult dynamic_resample(const Params<float>& params, const Template& tmpl,
                              const DecodeConfig& cfg, const Grouping* context_groups = nullptr);

// Free generation of cfg.max_new tokens after prompt. Groupwise uses
// contiguous groups of cfg.group_size over both prompt and continuation.
DecodeResult generate(const Params<float>& params, std::span<const int> prompt,
                      const DecodeConfig& cfg);

// Fills `blanks` positions between left and right. Context groups come from
// make_infill (split into group_size chunks in ordered mode, one group in
// merged mode).
DecodeResult infill(const Params<float>& params, std::span<const int> left, std::size_t blanks,
                    std::span<const int> right, const DecodeConfig& cfg);

// CSV: iteration,positions,criterion,score (positions/scores space separated).
void write_trace_csv(std::ostream& os, const DecodeResult& res, Criterion c);

}  // namespace a3
