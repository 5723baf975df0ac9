#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "a3/grouping.hpp"
#include "a3/net.hpp"
#include "a3/rng.hpp"

namespace a3 {

// Outcome of one self-check; detail carries the measured numbers.
struct SuiteResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Uniformly shuffled positions cut into groups of random sizes in [1, n].
Grouping make_random_grouping(std::size_t n, Rng& rng);

// Copy of p with every tensor (including the zero-initialised output
// projection and layer-norm parameters) filled with N(0, scale^2) noise, so
// predictions are far from uniform.
template <typename T>
Params<T> randomized(const Params<T>& p, Rng& rng, double scale = 0.5);

// check_flow on `cases` random groupings (N <= max_n), with and without BOS.
SuiteResult verify_masks(std::size_t cases, std::size_t max_n, Rng& rng);

// For `cases` random (N <= max_n, grouping) pairs: perturbing any token of
// group k leaves every logit of groups <= k within tol.
SuiteResult verify_leakage(const Params<float>& params, std::size_t cases, std::size_t max_n,
                           double tol, Rng& rng);

// joint_mass = 1 +- tol for every grouping (over n positions).
SuiteResult verify_normalization(const Params<double>& params, const std::vector<Grouping>& groupings,
                                 std::size_t n, double tol);

struct GradCheckStats {
  std::size_t checked = 0;
  std::size_t bad = 0;
  double worst = 0;
};

// Central finite differences (step h) on `coords` sampled coordinates;
// a coordinate passes when |a - f| / max(|a|, |f|, 1e-7) < rel_tol.
GradCheckStats grad_check(const Params<double>& params, const std::vector<int>& tokens,
                          const Grouping& g, std::size_t coords, double rel_tol, Rng& rng,
                          double h = 1e-5);

SuiteResult verify_gradients(const Params<double>& params, std::size_t n, std::size_t coords,
                             double rel_tol, double min_pass_fraction, Rng& rng);

}  // namespace a3
