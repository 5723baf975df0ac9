#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "a3/grouping.hpp"
#include "a3/net.hpp"

namespace a3 {

struct EvalReport {
  double nll = 0;         // mean per-token negative log-likelihood, nats
  double perplexity = 1;  // exp(nll)
  std::string grouping;   // short description of the grouping used
  std::size_t tokens = 0;
  std::size_t context_length = 0;
};

template <typename T>
EvalReport sequence_nll(const Params<T>& params, std::span<const int> tokens, const Grouping& g);

// Mean NLL of tokens[prompt_len..] given the preceding tokens (singleton
// grouping); used to score generated continuations.
double continuation_nll(const Params<float>& params, std::span<const int> tokens,
                        std::size_t prompt_len);

// Total probability assigned to all vocab^n sequences under g, by exhaustive
// enumeration. Refuses (ValidationError) when vocab^n > 1e6 or vocab does not
// match the model.
template <typename T>
double joint_mass(const Params<T>& params, const Grouping& g, int vocab, std::size_t n);

struct RougeScores {
  double r1 = 0, r2 = 0, rl = 0;  // F1 of unigram, bigram and LCS overlap
};

// Empty candidate or reference gives zero scores.
template <typename Tok>
RougeScores rouge(std::span<const Tok> candidate, std::span<const Tok> reference);
// Whitespace-split words.
RougeScores rouge_words(std::string_view candidate, std::string_view reference);
std::vector<std::string> split_words(std::string_view text);

struct LengthRow {
  std::size_t length = 0;
  std::size_t slices = 0;
  double nll = 0;
};

// Every length L is scored over the same stretch of text: the first
// min(|tokens| / longest, max_slices) * longest tokens, cut into consecutive
// slices of L, averaging the singleton-grouping NLL. Lengths beyond the
// model context raise LengthError.
std::vector<LengthRow> length_sweep(const Params<float>& params, std::span<const int> tokens,
                                    const std::vector<std::size_t>& lengths,
                                    std::size_t max_slices = 64);

// max-min over mean, the relative spread of the sweep.
double relative_spread(const std::vector<LengthRow>& rows);

void write_length_csv(std::ostream& os, const std::vector<LengthRow>& rows);

}  // namespace a3
