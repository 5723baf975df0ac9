#include <cmath>
#include <sstream>

#include "a3/error.hpp"
#include "a3/eval.hpp"
#include "a3/verify.hpp"
#include "doctest.h"

using namespace a3;

namespace {

ModelConfig cfg_with(int vocab, int max_len = 9) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_len = max_len;
  return c;
}

}  // namespace

TEST_CASE("uniform model scores ln V") {
  Rng rng(1);
  const auto p = init_params(cfg_with(4), rng);
  const std::vector<int> toks{0, 3, 2, 1, 1, 2};
  for (const Grouping& g : {make_singleton(6), make_fixed(6, 3), make_permuted(6, 2, rng)}) {
    const auto r = sequence_nll(p, toks, g);
    CHECK(std::abs(r.nll - std::log(4.0)) < 1e-6);
    CHECK(r.tokens == 6);
  }
  const auto rows = length_sweep(p, std::vector<int>(40, 1), {2, 4, 8});
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(std::abs(r.nll - std::log(4.0)) < 1e-6);
  CHECK(rows[0].slices == 20);
  CHECK(relative_spread(rows) < 1e-6);
  CHECK(length_sweep(p, std::vector<int>(40, 1), {}).empty());
  CHECK_THROWS_AS(length_sweep(p, std::vector<int>(40, 1), {9}), LengthError);
}

TEST_CASE("nll is invariant to index order within groups") {
  Rng rng(2);
  const auto p = randomized(init_params(cfg_with(5), rng), rng);
  const std::vector<int> toks{1, 4, 0, 2, 3, 3, 1};
  const auto a = sequence_nll(p, toks, Grouping({{6, 0, 2}, {1, 5}, {3, 4}}));
  const auto b = sequence_nll(p, toks, Grouping({{2, 6, 0}, {5, 1}, {4, 3}}));
  CHECK(std::abs(a.nll - b.nll) < 1e-6);
}

TEST_CASE("continuation nll matches the singleton suffix") {
  Rng rng(3);
  const auto p = randomized(init_params(cfg_with(5), rng), rng);
  const std::vector<int> toks{1, 4, 0, 2, 3};
  const auto out = forward(p, toks, make_singleton(5));
  double sum = 0;
  for (std::size_t i = 2; i < 5; ++i) sum -= std::log(softmax(out.row(i))[static_cast<std::size_t>(toks[i])]);
  CHECK(continuation_nll(p, toks, 2) == doctest::Approx(sum / 3).epsilon(1e-9));
}

TEST_CASE("joint mass is one under any grouping") {
  Rng rng(4);
  const auto p = params_cast<double>(randomized(init_params(cfg_with(4, 7), rng), rng));
  for (const Grouping& g : {make_singleton(5), make_fixed(5, 5), Grouping({{0, 1, 2}, {4}, {3}}),
                            make_random_grouping(5, rng)}) {
    CHECK(std::abs(joint_mass(p, g, 4, 5) - 1.0) < 1e-9);
  }
  const auto q = params_cast<double>(randomized(init_params(cfg_with(2, 3), rng), rng));
  CHECK(std::abs(joint_mass(q, make_singleton(1), 2, 1) - 1.0) < 1e-15);
  CHECK_THROWS_AS(joint_mass(p, make_singleton(5), 3, 5), ValidationError);
}

TEST_CASE("rouge examples") {
  const auto same = rouge_words("the cat sat", "the cat sat");
  CHECK(same.r1 == doctest::Approx(1.0));
  CHECK(same.r2 == doctest::Approx(1.0));
  CHECK(same.rl == doctest::Approx(1.0));
  const auto none = rouge_words("a b", "c d");
  CHECK(none.r1 == 0.0);
  CHECK(none.r2 == 0.0);
  CHECK(none.rl == 0.0);
  const auto ex = rouge_words("a b c", "a c d");
  CHECK(ex.r1 == doctest::Approx(2.0 / 3));
  CHECK(ex.r2 == 0.0);
  CHECK(ex.rl == doctest::Approx(2.0 / 3));
  CHECK(rouge_words("", "a").r1 == 0.0);
  const std::vector<int> a{1, 2, 3}, b{1, 2, 4};
  CHECK(rouge<int>(a, b).r2 == doctest::Approx(0.5));
  CHECK(split_words("  x  y\tz\n") == std::vector<std::string>{"x", "y", "z"});
}

TEST_CASE("length csv") {
  std::ostringstream os;
  write_length_csv(os, {{64, 2, 1.5}});
  CHECK(os.str().rfind("length,", 0) == 0);
}
