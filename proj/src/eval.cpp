#include "a3/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "a3/error.hpp"

namespace a3 {

namespace {

std::string describe(const Grouping& g) {
  std::size_t largest = 0;
  for (const auto& grp : g.groups()) largest = std::max(largest, grp.size());
  std::ostringstream os;
  os << g.num_groups() << " groups, largest " << largest;
  return os.str();
}

template <typename T>
double log_prob(std::span<const T> row, int token) {
  double mx = -INFINITY;
  for (T x : row) mx = std::max(mx, static_cast<double>(x));
  double z = 0;
  for (T x : row) z += std::exp(static_cast<double>(x) - mx);
  return static_cast<double>(row[static_cast<std::size_t>(token)]) - mx - std::log(z);
}

}  // namespace

template <typename T>
EvalReport sequence_nll(const Params<T>& params, std::span<const int> tokens, const Grouping& g) {
  if (tokens.empty()) throw LengthError("sequence_nll: empty sequence");
  const auto fw = forward(params, tokens, g);
  double total = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) total -= log_prob(fw.row(i), tokens[i]);
  EvalReport r;
  r.nll = total / static_cast<double>(tokens.size());
  r.perplexity = std::exp(r.nll);
  r.grouping = describe(g);
  r.tokens = tokens.size();
  r.context_length = tokens.size();
  return r;
}

double continuation_nll(const Params<float>& params, std::span<const int> tokens,
                        std::size_t prompt_len) {
  if (prompt_len >= tokens.size()) throw LengthError("continuation_nll: nothing after the prompt");
  const auto fw = forward(params, tokens, make_singleton(tokens.size()));
  double total = 0;
  for (std::size_t i = prompt_len; i < tokens.size(); ++i) total -= log_prob(fw.row(i), tokens[i]);
  return total / static_cast<double>(tokens.size() - prompt_len);
}

template <typename T>
double joint_mass(const Params<T>& params, const Grouping& g, int vocab, std::size_t n) {
  if (vocab != params.config().vocab_size) {
    throw ValidationError("joint_mass: vocab does not match the model");
  }
  if (n == 0) throw LengthError("joint_mass: length must be positive");
  double count = 1;
  for (std::size_t i = 0; i < n; ++i) count *= vocab;
  if (count > 1e6) throw ValidationError("joint_mass: vocab^n exceeds the enumeration bound of 1e6");
  require_valid(g, n);

  const auto total = static_cast<std::size_t>(count);
  std::vector<int> seq(n, 0);
  double mass = 0;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      seq[i] = static_cast<int>(c % static_cast<std::size_t>(vocab));
      c /= static_cast<std::size_t>(vocab);
    }
    const auto fw = forward(params, seq, g);
    double lp = 0;
    for (std::size_t i = 0; i < n; ++i) lp += log_prob(fw.row(i), seq[i]);
    mass += std::exp(lp);
  }
  return mass;
}

namespace {

template <typename Tok>
double f1(double overlap, std::size_t cand, std::size_t ref) {
  if (overlap == 0 || cand == 0 || ref == 0) return 0;
  const double p = overlap / static_cast<double>(cand);
  const double r = overlap / static_cast<double>(ref);
  return 2 * p * r / (p + r);
}

template <typename Tok>
double ngram_f1(std::span<const Tok> cand, std::span<const Tok> ref, std::size_t n) {
  if (cand.size() < n || ref.size() < n) return 0;
  std::map<std::vector<Tok>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= ref.size(); ++i) {
    ++counts[std::vector<Tok>(ref.begin() + i, ref.begin() + i + n)];
  }
  std::size_t overlap = 0;
  for (std::size_t i = 0; i + n <= cand.size(); ++i) {
    auto it = counts.find(std::vector<Tok>(cand.begin() + i, cand.begin() + i + n));
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return f1<Tok>(static_cast<double>(overlap), cand.size() - n + 1, ref.size() - n + 1);
}

}  // namespace

template <typename Tok>
RougeScores rouge(std::span<const Tok> candidate, std::span<const Tok> reference) {
  RougeScores s;
  if (candidate.empty() || reference.empty()) return s;
  s.r1 = ngram_f1(candidate, reference, 1);
  s.r2 = ngram_f1(candidate, reference, 2);
  const std::size_t m = candidate.size(), k = reference.size();
  std::vector<std::size_t> prev(k + 1, 0), cur(k + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= k; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  s.rl = f1<Tok>(static_cast<double>(prev[k]), m, k);
  return s;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

RougeScores rouge_words(std::string_view candidate, std::string_view reference) {
  const auto c = split_words(candidate);
  const auto r = split_words(reference);
  return rouge<std::string>(c, r);
}

std::vector<LengthRow> length_sweep(const Params<float>& params, std::span<const int> tokens,
                                    const std::vector<std::size_t>& lengths, std::size_t max_slices) {
  std::vector<LengthRow> rows;
  if (lengths.empty()) return rows;
  const std::size_t longest = *std::max_element(lengths.begin(), lengths.end());
  for (std::size_t len : lengths) {
    if (len == 0 || len > static_cast<std::size_t>(params.config().max_tokens())) {
      throw LengthError("length_sweep: length " + std::to_string(len) + " outside [1, " +
                        std::to_string(params.config().max_tokens()) + "]");
    }
  }
  // Every length is evaluated over the same stretch of text.
  const std::size_t span = std::min(tokens.size() / longest, max_slices) * longest;
  if (span == 0) throw LengthError("length_sweep: not enough tokens for the longest length");
  for (std::size_t len : lengths) {
    LengthRow row{len, span / len, 0};
    for (std::size_t s = 0; s < row.slices; ++s) {
      const auto slice = tokens.subspan(s * len, len);
      row.nll += sequence_nll(params, slice, make_singleton(len)).nll;
    }
    row.nll /= static_cast<double>(row.slices);
    rows.push_back(row);
  }
  return rows;
}

double relative_spread(const std::vector<LengthRow>& rows) {
  if (rows.empty()) return 0;
  double lo = INFINITY, hi = -INFINITY, sum = 0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.nll);
    hi = std::max(hi, r.nll);
    sum += r.nll;
  }
  return (hi - lo) / (sum / static_cast<double>(rows.size()));
}

void write_length_csv(std::ostream& os, const std::vector<LengthRow>& rows) {
  os << "length,slices,nll_nats\n";
  for (const auto& r : rows) os << r.length << ',' << r.slices << ',' << r.nll << '\n';
}

template EvalReport sequence_nll(const Params<float>&, std::span<const int>, const Grouping&);
template EvalReport sequence_nll(const Params<double>&, std::span<const int>, const Grouping&);
template double joint_mass(const Params<float>&, const Grouping&, int, std::size_t);
template double joint_mass(const Params<double>&, const Grouping&, int, std::size_t);
template RougeScores rouge(std::span<const int>, std::span<const int>);
template RougeScores rouge(std::span<const std::string>, std::span<const std::string>);

}  // namespace a3
