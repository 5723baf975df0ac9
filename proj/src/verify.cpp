#include "a3/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "a3/eval.hpp"
#include "a3/masking.hpp"

namespace a3 {

Grouping make_random_grouping(std::size_t n, Rng& rng) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<int>(perm));
  std::vector<std::vector<int>> groups;
  for (std::size_t i = 0; i < n;) {
    const auto size = static_cast<std::size_t>(rng.range(1, static_cast<std::int64_t>(n - i)));
    groups.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                        perm.begin() + static_cast<std::ptrdiff_t>(i + size));
    i += size;
  }
  return Grouping(std::move(groups));
}

template <typename T>
Params<T> randomized(const Params<T>& p, Rng& rng, double scale) {
  Params<T> out = p;
  for (T& x : out.values()) x = static_cast<T>(scale * rng.normal());
  return out;
}

SuiteResult verify_masks(std::size_t cases, std::size_t max_n, Rng& rng) {
  SuiteResult r{"mask information flow", true, ""};
  for (std::size_t c = 0; c < cases; ++c) {
    const auto n = static_cast<std::size_t>(rng.range(1, static_cast<std::int64_t>(max_n)));
    const Grouping g = make_random_grouping(n, rng);
    for (bool bos : {true, false}) {
      const auto report = check_flow(make_mask_pair(g, bos), g);
      if (!report.ok) {
        r.pass = false;
        r.detail = "case " + std::to_string(c) + ": " + report.message();
        return r;
      }
    }
  }
  r.detail = std::to_string(cases) + " random groupings, content and query masks match";
  return r;
}

SuiteResult verify_leakage(const Params<float>& params, std::size_t cases, std::size_t max_n,
                           double tol, Rng& rng) {
  SuiteResult r{"perturbation leakage", true, ""};
  const int vocab = params.config().vocab_size;
  max_n = std::min(max_n, static_cast<std::size_t>(params.config().max_tokens()));
  double worst = 0;
  std::size_t perturbations = 0, later_changed = 0, later_total = 0;
  for (std::size_t c = 0; c < cases; ++c) {
    const auto n = static_cast<std::size_t>(rng.range(1, static_cast<std::int64_t>(max_n)));
    const Grouping g = make_random_grouping(n, rng);
    const auto gid = g.group_ids();
    std::vector<int> tokens(n);
    for (int& t : tokens) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
    const auto base = forward(params, tokens, g);
    for (std::size_t j = 0; j < n; ++j) {
      if (vocab < 2) break;
      auto changed = tokens;
      changed[j] = static_cast<int>((tokens[j] + 1 + rng.below(static_cast<std::uint64_t>(vocab - 1))) % vocab);
      const auto out = forward(params, changed, g);
      ++perturbations;
      for (std::size_t i = 0; i < n; ++i) {
        double diff = 0;
        for (std::size_t v = 0; v < base.vocab; ++v) {
          diff = std::max(diff, std::abs(static_cast<double>(out.row(i)[v]) - base.row(i)[v]));
        }
        if (gid[i] <= gid[j]) {
          worst = std::max(worst, diff);
          if (diff > tol && r.pass) {
            r.pass = false;
            std::ostringstream os;
            os << "case " << c << ": perturbing position " << j << " (group " << gid[j]
               << ") moved logits of position " << i << " (group " << gid[i] << ") by " << diff;
            r.detail = os.str();
          }
        } else {
          ++later_total;
          if (diff > 0) ++later_changed;
        }
      }
    }
  }
  if (r.pass) {
    std::ostringstream os;
    os << cases << " cases, " << perturbations << " perturbations, max |diff| at groups <= k: "
       << worst << "; later positions affected: " << later_changed << "/" << later_total;
    r.detail = os.str();
  }
  return r;
}

SuiteResult verify_normalization(const Params<double>& params, const std::vector<Grouping>& groupings,
                                 std::size_t n, double tol) {
  SuiteResult r{"joint mass normalization", true, ""};
  std::ostringstream os;
  os.precision(10);
  double worst = 0;
  for (const auto& g : groupings) {
    const double mass = joint_mass(params, g, params.config().vocab_size, n);
    worst = std::max(worst, std::abs(mass - 1.0));
    os << mass << ' ';
  }
  r.pass = worst <= tol;
  os << "(max |mass - 1| = " << worst << ")";
  r.detail = os.str();
  return r;
}

GradCheckStats grad_check(const Params<double>& params, const std::vector<int>& tokens,
                          const Grouping& g, std::size_t coords, double rel_tol, Rng& rng, double h) {
  const auto analytic = grad_loss(params, tokens, g);
  std::vector<std::size_t> idx(params.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(std::min(coords, idx.size()));

  GradCheckStats st;
  Params<double> probe = params;
  for (std::size_t k : idx) {
    const double orig = probe.values()[k];
    probe.values()[k] = orig + h;
    const double up = grad_loss(probe, tokens, g).loss;
    probe.values()[k] = orig - h;
    const double down = grad_loss(probe, tokens, g).loss;
    probe.values()[k] = orig;
    const double fd = (up - down) / (2 * h);
    const double a = analytic.grad.values()[k];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-7});
    st.worst = std::max(st.worst, rel);
    ++st.checked;
    if (!(rel < rel_tol)) ++st.bad;
  }
  return st;
}

SuiteResult verify_gradients(const Params<double>& params, std::size_t n, std::size_t coords,
                             double rel_tol, double min_pass_fraction, Rng& rng) {
  SuiteResult r{"finite-difference gradients", true, ""};
  std::vector<int> tokens(n);
  for (int& t : tokens) {
    t = static_cast<int>(rng.below(static_cast<std::uint64_t>(params.config().vocab_size)));
  }
  std::ostringstream os;
  const std::pair<const char*, Grouping> cases[] = {
      {"singleton", make_singleton(n)},
      {"permuted", make_permuted(n, 2, rng)},
  };
  for (const auto& [name, g] : cases) {
    const auto st = grad_check(params, tokens, g, coords, rel_tol, rng);
    const double ok = static_cast<double>(st.checked - st.bad) / static_cast<double>(st.checked);
    if (ok < min_pass_fraction) r.pass = false;
    os << name << ": " << st.checked - st.bad << "/" << st.checked << " within " << rel_tol
       << " (worst " << st.worst << "); ";
  }
  r.detail = os.str();
  return r;
}

template Params<float> randomized(const Params<float>&, Rng&, double);
template Params<double> randomized(const Params<double>&, Rng&, double);

}  // namespace a3
