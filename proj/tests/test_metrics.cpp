#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "graphdive/metrics.hpp"
#include "graphdive/rng.hpp"

using namespace graphdive;

namespace {

// Pairwise definition: P(score_pos > score_neg) + 0.5 P(tie).
std::optional<double> brute_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 0.0 || y[j] != 0.0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  if (pairs == 0.0) return std::nullopt;
  return wins / pairs;
}

}  // namespace

TEST_CASE("roc_auc examples") {
  CHECK(*roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<double>{0, 0, 1, 1}) == 0.75);
  CHECK(*roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<double>{0, 0, 1, 1}) == 1.0);
  CHECK(*roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<double>{0, 0, 1, 1}) == 0.0);
  CHECK(*roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<double>{0, 1, 0, 1}) == 0.5);
  CHECK_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}));
  CHECK_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 0}));
  CHECK_FALSE(roc_auc(std::vector<double>{}, std::vector<double>{}));
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1}, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("roc_auc matches the pairwise definition") {
  Rng rng(12);
  double worst = 0.0;
  for (int it = 0; it < 200; ++it) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> s(n), y(n);
    // coarse scores so ties are common
    for (double& v : s) v = static_cast<double>(rng.below(6)) / 5.0;
    for (double& v : y) v = static_cast<double>(rng.below(2));
    const auto a = roc_auc(s, y);
    const auto b = brute_auc(s, y);
    REQUIRE(a.has_value() == b.has_value());
    if (a) worst = std::max(worst, std::abs(*a - *b));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("roc_auc invariances") {
  Rng rng(13);
  std::vector<double> s(300), y(300);
  for (double& v : s) v = rng.uniform(-3.0, 3.0);
  for (std::size_t i = 0; i < s.size(); ++i) y[i] = rng.uniform(0.0, 1.0) < 1.0 / (1.0 + std::exp(-s[i])) ? 1 : 0;
  const double base = *roc_auc(s, y);
  std::vector<double> mono(s.size()), neg(s.size()), flip(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    mono[i] = std::exp(2.0 * s[i]) + 5.0;
    neg[i] = -s[i];
    flip[i] = 1.0 - y[i];
  }
  CHECK(*roc_auc(mono, y) == doctest::Approx(base).epsilon(1e-14));
  CHECK(*roc_auc(neg, y) == doctest::Approx(1.0 - base).epsilon(1e-14));
  CHECK(*roc_auc(s, flip) == doctest::Approx(1.0 - base).epsilon(1e-14));
}

TEST_CASE("class_accuracy") {
  // y: 1 1 1 0 0 0 0 0 0 0, predictions at 0.5:
  // positives: .9 correct, .6 correct, .2 wrong -> 2/3
  // negatives: .1 .3 .49 correct, .5 .7 wrong, .0 .4 correct -> 5/7
  const std::vector<double> p{0.9, 0.6, 0.2, 0.1, 0.3, 0.49, 0.5, 0.7, 0.0, 0.4};
  const std::vector<double> y{1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  const auto a = class_accuracy(p, y, 1);
  CHECK(*a.minority == doctest::Approx(2.0 / 3.0));
  CHECK(*a.majority == doctest::Approx(5.0 / 7.0));
  const auto b = class_accuracy(p, y, 0);
  CHECK(*b.minority == doctest::Approx(5.0 / 7.0));
  CHECK(*b.majority == doctest::Approx(2.0 / 3.0));
  const auto c = class_accuracy(std::vector<double>{0.9}, std::vector<double>{1}, 1);
  CHECK(*c.minority == 1.0);
  CHECK_FALSE(c.majority);
}

TEST_CASE("minority_classes") {
  LabelSet ls;
  ls.values = Mat::from_rows({{1, 0, 1}, {0, 0, 1}, {0, 1, 0}, {0, 1, 1}});
  ls.mask = Mat(4, 3, 1.0);
  ls.mask(0, 1) = 0.0;
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  // task0: 1 pos / 3 neg; task1: 2 pos / 1 neg; task2: 3 pos / 1 neg
  CHECK(minority_classes(ls, rows) == std::vector<int>{1, 0, 0});
  const std::vector<std::size_t> half{0, 1};
  // task0 tie, task1 only a negative, task2 two positives
  CHECK(minority_classes(ls, half) == std::vector<int>{1, 1, 0});
}

TEST_CASE("evaluate_predictions") {
  LabelSet ls;
  ls.values = Mat::from_rows({{1, 0}, {0, 1}, {0, 0}, {1, 0}, {0, 1}});
  ls.mask = Mat(5, 2, 1.0);
  ls.mask(4, 1) = 0.0;
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
  const Mat probs = Mat::from_rows({{0.8, 0.1}, {0.3, 0.6}, {0.4, 0.7}, {0.2, 0.2}, {0.1, 0.9}});
  const std::vector<int> minority{1, 1};
  const auto rep = evaluate_predictions(probs, ls, rows, minority);
  REQUIRE(rep.tasks.size() == 2);
  // task 0: pos {.8,.2}, neg {.3,.4,.1}: wins .8>all (3), .2>.1 (1) -> 4/6
  CHECK(*rep.tasks[0].roc_auc == doctest::Approx(4.0 / 6.0));
  CHECK(rep.tasks[0].count == 5);
  CHECK(rep.tasks[0].accuracy == doctest::Approx(4.0 / 5.0));
  CHECK(*rep.tasks[0].minority_accuracy == doctest::Approx(0.5));
  CHECK(*rep.tasks[0].majority_accuracy == 1.0);
  // task 1 drops row 4: pos {.6}, neg {.1,.7,.2} -> 2/3
  CHECK(rep.tasks[1].count == 4);
  CHECK(*rep.tasks[1].roc_auc == doctest::Approx(2.0 / 3.0));
  CHECK(rep.tasks[1].accuracy == doctest::Approx(3.0 / 4.0));
  const double ce1 = -(std::log(0.9) + std::log(0.6) + std::log(0.3) + std::log(0.8)) / 4.0;
  CHECK(rep.tasks[1].cross_entropy == doctest::Approx(ce1).epsilon(1e-14));
  CHECK(*rep.mean_auc == doctest::Approx((4.0 / 6.0 + 2.0 / 3.0) / 2.0));
  CHECK(rep.mean_accuracy == doctest::Approx((0.8 + 0.75) / 2.0));
  CHECK_THROWS_AS(evaluate_predictions(probs, ls, std::vector<std::size_t>{0}, minority), std::invalid_argument);
}

TEST_CASE("mean over tasks skips undefined AUC") {
  LabelSet ls;
  ls.values = Mat::from_rows({{1, 1}, {0, 1}});
  ls.mask = Mat(2, 2, 1.0);
  const auto rep = evaluate_predictions(Mat::from_rows({{0.9, 0.5}, {0.1, 0.5}}), ls,
                                        std::vector<std::size_t>{0, 1}, std::vector<int>{1, 1});
  CHECK_FALSE(rep.tasks[1].roc_auc);
  CHECK(*rep.mean_auc == 1.0);
}

TEST_CASE("mean_std") {
  const auto r = mean_std(std::vector<double>{2, 4, 4, 4, 5, 5, 7, 9});
  CHECK(r.mean == 5.0);
  CHECK(r.stddev == 2.0);
  CHECK(r.n == 8);
  CHECK(mean_std(std::vector<double>{}).n == 0);
  CHECK(mean_std(std::vector<double>{3.5}).stddev == 0.0);
}

TEST_CASE("expert_usage") {
  SUBCASE("single expert has weight one for both classes") {
    const bool present[] = {true, true, true, true};
    const auto u = expert_usage(Mat(4, 1, 1.0), std::vector<double>{1, 0, 0, 1}, present);
    CHECK(u.weights(0, 0) == 1.0);
    CHECK(u.weights(1, 0) == 1.0);
    CHECK(u.count[0] == 2);
    CHECK(u.count[1] == 2);
  }
  SUBCASE("uniform gates") {
    const bool present[] = {true, true, true};
    const auto u = expert_usage(Mat(3, 4, 0.25), std::vector<double>{1, 0, 0}, present);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t z = 0; z < 4; ++z) CHECK(u.weights(c, z) == 0.25);
  }
  SUBCASE("hand averaged, missing rows skipped") {
    const Mat gates = Mat::from_rows({{0.9, 0.1}, {0.7, 0.3}, {0.2, 0.8}, {0.0, 1.0}});
    const bool present[] = {true, true, true, false};
    const auto u = expert_usage(gates, std::vector<double>{0, 0, 1, 1}, present);
    CHECK(u.count[0] == 2);
    CHECK(u.count[1] == 1);
    CHECK(u.weights(0, 0) == doctest::Approx(0.8));
    CHECK(u.weights(0, 1) == doctest::Approx(0.2));
    CHECK(u.weights(1, 1) == doctest::Approx(0.8));
    CHECK(u.argmax_expert(0) == 0);
    CHECK(u.argmax_expert(1) == 1);
    CHECK(u.dominant_class == std::vector<int>{0, 1});
  }
  SUBCASE("length mismatch") {
    const bool present[] = {true};
    CHECK_THROWS_AS(expert_usage(Mat(2, 2), std::vector<double>{0, 1}, present), std::invalid_argument);
  }
}
