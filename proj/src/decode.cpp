#include "a3/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>

#include "a3/error.hpp"

namespace a3 {

std::string to_string(Strategy s) { return s == Strategy::groupwise ? "groupwise" : "dynamic"; }

std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::confidence: return "confidence";
    case Criterion::entropy: return "entropy";
    case Criterion::random: return "random";
    case Criterion::ordered: return "ordered";
  }
  return "?";
}

std::string to_string(ContextMode m) { return m == ContextMode::ordered ? "ordered" : "merged"; }

Strategy parse_strategy(const std::string& s) {
  if (s == "groupwise") return Strategy::groupwise;
  if (s == "dynamic") return Strategy::dynamic;
  throw ValidationError("unknown strategy '" + s + "'");
}

Criterion parse_criterion(const std::string& s) {
  if (s == "confidence") return Criterion::confidence;
  if (s == "entropy") return Criterion::entropy;
  if (s == "random") return Criterion::random;
  if (s == "ordered") return Criterion::ordered;
  throw ValidationError("unknown criterion '" + s + "'");
}

ContextMode parse_context_mode(const std::string& s) {
  if (s == "ordered") return ContextMode::ordered;
  if (s == "merged") return ContextMode::merged;
  throw ValidationError("unknown context mode '" + s + "'");
}

void DecodeConfig::validate() const {
  if (group_size < 1) throw ValidationError("decode: group_size must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("decode: temperature must be positive");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("decode: top_p must be in (0, 1]");
  if (max_new < 1) throw ValidationError("decode: max_new must be >= 1");
}

int sample_token(std::span<const double> dist, double temperature, double top_p, bool greedy,
                 Rng& rng) {
  if (dist.empty()) throw ValidationError("sample_token: empty distribution");
  double sum = 0;
  for (double p : dist) {
    if (!std::isfinite(p)) throw NumericError("sample_token: non-finite probability");
    if (p < 0) throw ValidationError("sample_token: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("sample_token: distribution does not sum to 1");

  if (greedy) {
    return static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
  }

  // p^(1/T) == softmax(log p / T); zero-probability tokens stay impossible.
  const std::size_t v = dist.size();
  std::vector<double> q(v, 0.0);
  double max_lp = -INFINITY;
  for (std::size_t i = 0; i < v; ++i) {
    if (dist[i] > 0) max_lp = std::max(max_lp, std::log(dist[i]) / temperature);
  }
  double z = 0;
  for (std::size_t i = 0; i < v; ++i) {
    if (dist[i] > 0) {
      q[i] = std::exp(std::log(dist[i]) / temperature - max_lp);
      z += q[i];
    }
  }
  for (double& x : q) x /= z;

  std::vector<int> order(v);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return q[a] > q[b]; });
  std::size_t kept = 0;
  double mass = 0;
  while (kept < v) {
    mass += q[order[kept++]];
    if (mass >= top_p - 1e-12) break;
  }

  double u = rng.uniform() * mass;
  for (std::size_t i = 0; i < kept; ++i) {
    u -= q[order[i]];
    if (u < 0) return order[i];
  }
  // Rounding left u marginally positive: fall back to the last kept token
  // that has probability.
  for (std::size_t i = kept; i-- > 0;) {
    if (q[order[i]] > 0) return order[i];
  }
  return order[0];
}

double criterion_score(std::span<const double> probs, Criterion c) {
  switch (c) {
    case Criterion::confidence:
      return *std::max_element(probs.begin(), probs.end());
    case Criterion::entropy: {
      double h = 0;
      for (double p : probs) {
        if (p > 0) h -= p * std::log(p);
      }
      return -h;  // higher is better everywhere
    }
    default:
      return 0.0;
  }
}

namespace {

std::vector<int> select_scored(const std::vector<PositionDist>& rows, Criterion c, std::size_t g,
                               Rng& rng, std::vector<double>* chosen_scores) {
  std::vector<double> score(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    score[i] = c == Criterion::random ? rng.uniform() : criterion_score(rows[i].probs, c);
  }
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return rows[a].position < rows[b].position;
  });
  idx.resize(std::min(g, idx.size()));
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return rows[a].position < rows[b].position; });
  std::vector<int> out;
  for (std::size_t i : idx) {
    out.push_back(rows[i].position);
    if (chosen_scores) chosen_scores->push_back(score[i]);
  }
  return out;
}

std::vector<int> with_pads(const Template& tmpl, int pad) {
  std::vector<int> t = tmpl.tokens;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!tmpl.known[i]) t[i] = pad;
  }
  return t;
}

void check_template(const Template& tmpl, const ModelConfig& cfg) {
  if (tmpl.tokens.size() != tmpl.known.size()) {
    throw ValidationError("template: tokens and known flags differ in length");
  }
  if (tmpl.tokens.size() > static_cast<std::size_t>(cfg.max_tokens())) {
    throw LengthError("template of " + std::to_string(tmpl.tokens.size()) +
                      " positions exceeds the model context of " + std::to_string(cfg.max_tokens()));
  }
  for (std::size_t i = 0; i < tmpl.tokens.size(); ++i) {
    if (tmpl.known[i] && (tmpl.tokens[i] < 0 || tmpl.tokens[i] >= cfg.vocab_size)) {
      throw ValidationError("template: token id out of vocabulary at position " + std::to_string(i));
    }
  }
}

// Contiguous chunks of `size` over the given (ascending) positions.
void append_chunks(std::vector<std::vector<int>>& groups, const std::vector<int>& positions,
                   std::size_t size) {
  for (std::size_t i = 0; i < positions.size(); i += size) {
    const auto end = std::min(positions.size(), i + size);
    groups.emplace_back(positions.begin() + static_cast<std::ptrdiff_t>(i),
                        positions.begin() + static_cast<std::ptrdiff_t>(end));
  }
}

}  // namespace

std::vector<int> select_commit(const std::vector<PositionDist>& rows, Criterion c, std::size_t g,
                               Rng& rng) {
  return select_scored(rows, c, g, rng, nullptr);
}

Template Template::prompt_then_blanks(std::span<const int> prompt, std::size_t blanks) {
  Template t;
  t.tokens.assign(prompt.begin(), prompt.end());
  t.tokens.resize(prompt.size() + blanks, 0);
  t.known.assign(prompt.size(), true);
  t.known.resize(prompt.size() + blanks, false);
  return t;
}

Template Template::infill(std::span<const int> left, std::size_t blanks, std::span<const int> right) {
  Template t;
  t.tokens.assign(left.begin(), left.end());
  t.tokens.resize(left.size() + blanks, 0);
  t.tokens.insert(t.tokens.end(), right.begin(), right.end());
  t.known.assign(left.size(), true);
  t.known.resize(left.size() + blanks, false);
  t.known.resize(t.tokens.size(), true);
  return t;
}

std::vector<int> Template::blank_positions() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < known.size(); ++i) {
    if (!known[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> Template::known_positions() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < known.size(); ++i) {
    if (known[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

DecodeResult groupwise_sample(const Params<float>& params, const Template& tmpl, const Grouping& g,
                              const DecodeConfig& cfg) {
  cfg.validate();
  const auto& mc = params.config();
  check_template(tmpl, mc);
  const std::size_t n = tmpl.tokens.size();
  require_valid(g, n);

  std::size_t k0 = 0;
  while (k0 < g.num_groups() &&
         std::all_of(g[k0].begin(), g[k0].end(), [&](int i) { return tmpl.known[i]; })) {
    ++k0;
  }
  for (std::size_t k = k0; k < g.num_groups(); ++k) {
    for (int i : g[k]) {
      if (tmpl.known[i]) {
        throw ValidationError("groupwise_sample: prompt position " + std::to_string(i) +
                              " lies in group " + std::to_string(k) +
                              ", after the first group with blanks");
      }
    }
  }

  DecodeResult res;
  res.tokens = with_pads(tmpl, mc.pad_id);
  Rng rng(cfg.seed);
  for (std::size_t k = k0; k < g.num_groups(); ++k) {
    const auto fw = forward(params, res.tokens, g);
    ++res.forward_passes;
    std::vector<int> positions = g[k];
    std::sort(positions.begin(), positions.end());
    CommitRecord rec{k - k0, positions, {}, positions.size()};
    std::vector<int> sampled;
    for (int i : positions) {
      const auto probs = softmax(fw.row(static_cast<std::size_t>(i)));
      rec.scores.push_back(criterion_score(probs, cfg.criterion));
      sampled.push_back(sample_token(probs, cfg.temperature, cfg.top_p, cfg.greedy, rng));
    }
    for (std::size_t j = 0; j < positions.size(); ++j) res.tokens[positions[j]] = sampled[j];
    res.evaluated_positions += rec.evaluated;
    res.trace.push_back(std::move(rec));
  }
  return res;
}

DecodeResult dynamic_resample(const Params<float>& params, const Template& tmpl,
                              const DecodeConfig& cfg, const Grouping* context_groups) {
  cfg.validate();
  const auto& mc = params.config();
  check_template(tmpl, mc);

  DecodeResult res;
  res.tokens = with_pads(tmpl, mc.pad_id);
  std::vector<int> unfinished = tmpl.blank_positions();
  const std::vector<int> known = tmpl.known_positions();
  if (unfinished.empty()) {
    res.warning = "template has no blank positions; nothing to decode";
    return res;
  }

  std::vector<std::vector<int>> context;
  if (context_groups) {
    std::vector<int> covered;
    for (const auto& grp : context_groups->groups()) {
      if (grp.empty()) throw ValidationError("dynamic_resample: empty context group");
      covered.insert(covered.end(), grp.begin(), grp.end());
    }
    std::sort(covered.begin(), covered.end());
    if (covered != known) {
      throw ValidationError("dynamic_resample: context groups must cover exactly the known positions");
    }
    context = context_groups->groups();
    if (cfg.context == ContextMode::merged && context.size() > 1) context = {known};
  } else if (cfg.context == ContextMode::ordered) {
    append_chunks(context, known, cfg.group_size);
  } else if (!known.empty()) {
    context.push_back(known);
  }

  Rng rng(cfg.seed);
  for (std::size_t t = 0; !unfinished.empty(); ++t) {
    std::vector<std::vector<int>> groups = context;
    groups.push_back(unfinished);
    const Grouping g(std::move(groups));
    const auto fw = forward(params, res.tokens, g);
    ++res.forward_passes;

    std::vector<PositionDist> rows;
    rows.reserve(unfinished.size());
    for (int i : unfinished) rows.push_back({i, softmax(fw.row(static_cast<std::size_t>(i)))});

    CommitRecord rec;
    rec.iteration = t;
    rec.evaluated = unfinished.size();
    rec.positions = select_scored(rows, cfg.criterion, cfg.group_size, rng, &rec.scores);
    for (int i : rec.positions) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.position == i; });
      res.tokens[i] = sample_token(it->probs, cfg.temperature, cfg.top_p, cfg.greedy, rng);
    }

    std::vector<int> rest;
    std::set_difference(unfinished.begin(), unfinished.end(), rec.positions.begin(),
                        rec.positions.end(), std::back_inserter(rest));
    unfinished = std::move(rest);
    if (cfg.context == ContextMode::ordered) {
      context.push_back(rec.positions);
    } else {
      std::vector<int> merged = context.empty() ? std::vector<int>{} : context.front();
      merged.insert(merged.end(), rec.positions.begin(), rec.positions.end());
      std::sort(merged.begin(), merged.end());
      context = {merged};
    }
    res.evaluated_positions += rec.evaluated;
    res.trace.push_back(std::move(rec));
  }
  return res;
}

DecodeResult generate(const Params<float>& params, std::span<const int> prompt,
                      const DecodeConfig& cfg) {
  cfg.validate();
  const Template tmpl = Template::prompt_then_blanks(prompt, cfg.max_new);
  if (cfg.strategy == Strategy::dynamic) return dynamic_resample(params, tmpl, cfg);

  if (cfg.group_size > cfg.max_new) {
    throw ValidationError("decode: groupwise group_size must not exceed max_new");
  }
  std::vector<std::vector<int>> groups;
  append_chunks(groups, tmpl.known_positions(), cfg.group_size);
  append_chunks(groups, tmpl.blank_positions(), cfg.group_size);
  return groupwise_sample(params, tmpl, Grouping(std::move(groups)), cfg);
}

DecodeResult infill(const Params<float>& params, std::span<const int> left, std::size_t blanks,
                    std::span<const int> right, const DecodeConfig& cfg) {
  cfg.validate();
  const Template tmpl = Template::infill(left, blanks, right);
  InfillSpec spec;
  for (int i = 0; i < static_cast<int>(left.size()); ++i) spec.left.push_back(i);
  for (std::size_t j = 0; j < blanks; ++j) spec.middle.push_back(static_cast<int>(left.size() + j));
  for (std::size_t j = 0; j < right.size(); ++j) {
    spec.right.push_back(static_cast<int>(left.size() + blanks + j));
  }
  spec.group_size = cfg.group_size;
  spec.split_context = cfg.context == ContextMode::ordered;
  const auto ig = make_infill(spec);

  if (cfg.strategy == Strategy::groupwise) return groupwise_sample(params, tmpl, ig.grouping, cfg);
  const auto& all = ig.grouping.groups();
  const Grouping ctx(std::vector<std::vector<int>>(all.begin(),
                                                   all.begin() + static_cast<std::ptrdiff_t>(ig.k0)));
  return dynamic_resample(params, tmpl, cfg, &ctx);
}

void write_trace_csv(std::ostream& os, const DecodeResult& res, Criterion c) {
  os << "iteration,positions,criterion,score\n";
  for (const auto& r : res.trace) {
    os << r.iteration << ',';
    for (std::size_t i = 0; i < r.positions.size(); ++i) os << (i ? " " : "") << r.positions[i];
    os << ',' << to_string(c) << ',';
    for (std::size_t i = 0; i < r.scores.size(); ++i) os << (i ? " " : "") << r.scores[i];
    os << '\n';
  }
}

}  // namespace a3
