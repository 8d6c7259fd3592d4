#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "abd/metrics.hpp"

using namespace abd;

TEST_CASE("confusion counts") {
  std::vector<std::uint8_t> t{0, 1}, p{0, 1};
  auto cm = confusion(t, p);
  CHECK(cm.counts[0][0] == 1);
  CHECK(cm.counts[1][1] == 1);
  CHECK(cm.counts[0][1] == 0);
  CHECK(cm.counts[1][0] == 0);

  std::vector<std::uint8_t> t2{0, 0, 1, 1}, p2{1, 1, 0, 0};
  cm = confusion(t2, p2);
  CHECK(cm.counts[0][1] == 2);
  CHECK(cm.counts[1][0] == 2);

  std::vector<std::uint8_t> empty;
  CHECK_THROWS_AS(confusion(empty, empty), DataError);
  std::vector<std::uint8_t> one{0};
  CHECK_THROWS_AS(confusion(one, empty), DataError);
}

TEST_CASE("perfect prediction gives uar = uaf1 = 1") {
  ConfusionMatrix2 cm;
  cm.counts = {{{40, 0}, {0, 10}}};
  CHECK(uar(cm) == 1.0);
  CHECK(uaf1(cm) == 1.0);
}

TEST_CASE("hand-computed confusion matrix") {
  // class0: 80/100 correct, class1: 10/50 correct, all errors cross over.
  ConfusionMatrix2 cm;
  cm.counts = {{{80, 20}, {40, 10}}};
  CHECK(uar(cm) == Catch::Approx(0.5).margin(1e-9));
  CHECK(precision(cm, 0) == Catch::Approx(80.0 / 120.0).margin(1e-9));
  CHECK(precision(cm, 1) == Catch::Approx(10.0 / 30.0).margin(1e-9));
  CHECK(f1(cm, 0) == Catch::Approx(0.72727272727).margin(1e-9));
  CHECK(f1(cm, 1) == Catch::Approx(0.25).margin(1e-9));
  CHECK(uaf1(cm) == Catch::Approx(0.48863636364).margin(1e-9));
}

TEST_CASE("constant predictor on balanced truth scores uar 0.5") {
  ConfusionMatrix2 cm;
  cm.counts = {{{30, 0}, {30, 0}}};  // everything predicted idle
  CHECK(uar(cm) == 0.5);
}

TEST_CASE("metrics invariant under frame permutation") {
  std::mt19937_64 rng(0);
  std::vector<std::uint8_t> truth(200), pred(200);
  for (std::size_t i = 0; i < 200; ++i) {
    truth[i] = rng() % 2;
    pred[i] = rng() % 2;
  }
  auto base = confusion(truth, pred);
  std::vector<std::size_t> perm(200);
  for (std::size_t i = 0; i < 200; ++i) perm[i] = i;
  for (std::size_t i = 199; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
  std::vector<std::uint8_t> t2(200), p2(200);
  for (std::size_t i = 0; i < 200; ++i) {
    t2[i] = truth[perm[i]];
    p2[i] = pred[perm[i]];
  }
  auto shuffled = confusion(t2, p2);
  CHECK(uar(base) == uar(shuffled));
  CHECK(uaf1(base) == uaf1(shuffled));
}

TEST_CASE("zero-division conventions close degenerate cases") {
  ConfusionMatrix2 cm;
  cm.counts = {{{10, 0}, {0, 0}}};  // class 1 absent and never predicted
  CHECK(f1(cm, 1) == 0.0);
  CHECK(precision(cm, 1) == 0.0);
  CHECK(uaf1(cm) == 0.5);
}

TEST_CASE("aggregate single and identical folds") {
  FoldReport r;
  r.cm.counts = {{{80, 20}, {40, 10}}};
  auto s1 = aggregate({r});
  CHECK(s1.mean_uaf1 == s1.pooled_uaf1);
  CHECK(s1.mean_uar == s1.pooled_uar);
  auto s2 = aggregate({r, r});
  CHECK(s2.mean_uaf1 == Catch::Approx(s2.pooled_uaf1).margin(1e-15));
  CHECK(s2.n_folds == 2);
}

TEST_CASE("aggregate mean differs from pooled on unequal folds") {
  FoldReport a, b;
  a.cm.counts = {{{90, 10}, {5, 5}}};
  b.cm.counts = {{{10, 10}, {10, 70}}};
  auto s = aggregate({a, b});
  // Hand check: pooled confusion is the elementwise sum.
  ConfusionMatrix2 pooled;
  pooled.counts = {{{100, 20}, {15, 75}}};
  CHECK(s.pooled_uar == Catch::Approx(uar(pooled)).margin(1e-15));
  CHECK(s.pooled_uaf1 == Catch::Approx(uaf1(pooled)).margin(1e-15));
  CHECK(s.mean_uar == Catch::Approx(0.5 * (uar(a.cm) + uar(b.cm))).margin(1e-15));
  CHECK(s.mean_uar != s.pooled_uar);

  CHECK_THROWS_AS(aggregate({}), DataError);
}
