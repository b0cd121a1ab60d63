#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <stdexcept>

#include "graphdive/autodiff.hpp"
#include "graphdive/gnn.hpp"
#include "graphdive/gradcheck.hpp"
#include "graphdive/numerics.hpp"
#include "graphdive/params.hpp"
#include "helpers.hpp"

using namespace graphdive;
using testutil::random_mat;

TEST_CASE("stable_softmax examples") {
  auto p = stable_softmax(std::vector<double>{0.0, 0.0}, 1.0);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
  for (double c : {-800.0, 0.0, 3.5, 900.0}) {
    for (double tau : {0.1, 1.0, 7.0}) {
      p = stable_softmax(std::vector<double>{c, c, c}, tau);
      for (double v : p) CHECK(std::abs(v - 1.0 / 3.0) < 1e-15);
    }
  }
  p = stable_softmax(std::vector<double>{std::log(2.0), 0.0}, 1.0);
  CHECK(std::abs(p[0] - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(p[1] - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("stable_softmax rejects bad input") {
  CHECK_THROWS_AS(stable_softmax(std::vector<double>{1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(stable_softmax(std::vector<double>{1.0}, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(stable_softmax(std::vector<double>{std::numeric_limits<double>::infinity(), 0.0}, 1.0), std::domain_error);
}

TEST_CASE("softmax normalization and shift invariance") {
  Rng rng(11);
  double worst_sum = 0.0, worst_shift = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const std::size_t k = 2 + rng.below(7);
    std::vector<double> v(k);
    for (double& x : v) x = rng.uniform(-50.0, 50.0);
    const double tau = (i % 3 == 0) ? 0.1 : (i % 3 == 1 ? 1.0 : 10.0);
    const auto p = stable_softmax(v, tau);
    double s = 0.0;
    for (double x : p) s += x;
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    if (i % 10 == 0) {
      const double c = rng.uniform(-100.0, 100.0);
      auto shifted = v;
      for (double& x : shifted) x += c;
      const auto q = stable_softmax(shifted, tau);
      for (std::size_t j = 0; j < k; ++j) worst_shift = std::max(worst_shift, std::abs(p[j] - q[j]));
    }
  }
  CHECK(worst_sum < 1e-12);
  CHECK(worst_shift < 1e-12);
}

TEST_CASE("sigmoid") {
  CHECK(sigmoid(0.0) == 0.5);
  const double tiny = sigmoid(-1000.0);
  CHECK(tiny > 0.0);
  CHECK(tiny <= 1e-300);
  CHECK(sigmoid(1000.0) < 1.0);
  CHECK(std::abs(sigmoid(std::log(3.0)) - 0.75) < 1e-15);
  CHECK(std::abs(sigmoid(2.0) + sigmoid(-2.0) - 1.0) < 1e-15);
}

TEST_CASE("log_sum_exp") {
  CHECK(log_sum_exp(std::vector<double>{0.0, 0.0}) == doctest::Approx(std::log(2.0)));
  CHECK(log_sum_exp(std::vector<double>{1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(std::isinf(log_sum_exp(std::vector<double>{})));
  CHECK(clip_prob(0.0) == kProbFloor);
  CHECK(clip_prob(1.0) == 1.0 - kProbFloor);
}

TEST_CASE("backward on closed-form losses") {
  Rng rng(2);
  ParamStore ps;
  ps.add("w", random_mat(3, 4, rng));
  SUBCASE("sum gives all-ones") {
    ad::Tape tape;
    ParamBinding bind(tape, ps);
    tape.backward(ad::sum(bind("w")));
    for (double g : ps[0].grad.data) CHECK(g == 1.0);
  }
  SUBCASE("half squared norm gives W") {
    ad::Tape tape;
    ParamBinding bind(tape, ps);
    const auto w = bind("w");
    tape.backward(ad::scale(ad::sum(ad::hadamard(w, w)), 0.5));
    CHECK(ps[0].grad == ps[0].value);
  }
  SUBCASE("non-scalar or non-finite loss throws") {
    ad::Tape tape;
    ParamBinding bind(tape, ps);
    CHECK_THROWS_AS(tape.backward(bind("w")), std::domain_error);
    const auto inf = tape.constant(Mat(1, 1, std::numeric_limits<double>::infinity()));
    CHECK_THROWS_AS(tape.backward(inf), std::domain_error);
  }
}

namespace {

// Checks one op: loss = sum(op(inputs) .* R) for a fixed random R.
double check_op(const std::function<ad::Var(ParamBinding&)>& op, ParamStore& ps, std::uint64_t seed) {
  Mat weights;
  LossFn fn = [&](ParamStore& p, bool with_grad) {
    ad::Tape tape;
    ParamBinding bind(tape, p, with_grad);
    const ad::Var out = op(bind);
    if (weights.empty()) {
      Rng r(seed);
      weights = random_mat(out.value().rows, out.value().cols, r);
    }
    const ad::Var loss = ad::sum(ad::hadamard(out, tape.constant(weights)));
    if (with_grad) tape.backward(loss);
    return loss.value()(0, 0);
  };
  return grad_check(fn, ps).max_rel_error;
}

}  // namespace

TEST_CASE("every tape op matches finite differences") {
  Rng rng(7);
  ParamStore ps;
  ps.add("a", random_mat(4, 6, rng));
  ps.add("b", random_mat(6, 3, rng));
  ps.add("c", random_mat(4, 6, rng));
  ps.add("row", random_mat(1, 6, rng));
  ps.add("s", random_mat(1, 1, rng));
  ps.add("g2", random_mat(2, 2, rng));
  Mat probs(4, 6);
  for (double& x : probs.data) x = rng.uniform(0.05, 0.95);
  ps.add("p", probs);
  Mat labels(4, 3);
  for (double& x : labels.data) x = static_cast<double>(rng.below(2));
  Mat labels6(4, 6);
  for (double& x : labels6.data) x = static_cast<double>(rng.below(2));
  Mat mask(4, 3, 1.0);
  mask(1, 2) = 0.0;
  mask(3, 0) = 0.0;

  using B = ParamBinding;
  const std::vector<std::pair<const char*, std::function<ad::Var(B&)>>> ops = {
      {"matmul", [](B& b) { return ad::matmul(b("a"), b("b")); }},
      {"add", [](B& b) { return ad::add(b("a"), b("c")); }},
      {"sub", [](B& b) { return ad::sub(b("a"), b("c")); }},
      {"hadamard", [](B& b) { return ad::hadamard(b("a"), b("c")); }},
      {"scale", [](B& b) { return ad::scale(b("a"), -1.7); }},
      {"add_row", [](B& b) { return ad::add_row(b("a"), b("row")); }},
      {"scale_by", [](B& b) { return ad::scale_by(b("a"), b("s")); }},
      {"relu", [](B& b) { return ad::relu(b("a")); }},
      {"sigmoid", [](B& b) { return ad::sigmoid(b("a")); }},
      {"gather_rows", [](B& b) { return ad::gather_rows(b("a"), {3, 0, 0, 2, 1}); }},
      {"scatter_rows", [](B& b) { return ad::scatter_rows(b("a"), {1, 0, 1, 2}, {0.5, 2.0, -1.0, 0.25}, 3); }},
      {"row_scale", [](B& b) { return ad::row_scale(b("a"), {1.0, -2.0, 0.5, 3.0}); }},
      {"segment_mean", [](B& b) { return ad::segment_mean(b("a"), {0, 1, 0, 0}, 2); }},
      {"concat_cols", [](B& b) { return ad::concat_cols({b("a"), b("c"), b("a")}); }},
      {"softmax_blocks", [](B& b) { return ad::softmax_blocks(b("a"), 3, 0.7); }},
      {"log_softmax_blocks", [](B& b) { return ad::log_softmax_blocks(b("a"), 2, 1.3); }},
      {"normalize_rows", [](B& b) { return ad::normalize_rows(b("a")); }},
      {"normalize_cols", [](B& b) { return ad::normalize_cols(b("a")); }},
      {"bernoulli_loglik", [&](B& b) { return ad::bernoulli_loglik(b("p"), labels); }},
      {"expert_mean", [](B& b) { return ad::expert_mean(b("p"), 2, 3); }},
      {"focal_terms", [&](B& b) { return ad::focal_terms(b("p"), labels6, 2.0); }},
      {"expert_dot", [](B& b) {
         return ad::expert_dot(b("a"), ad::Layout::TaskMajor, b("c"), ad::Layout::ExpertMajor, 2, 3);
       }},
      {"expert_dot shared", [](B& b) {
         return ad::expert_dot(ad::gather_rows(b("g2"), {0, 1, 1, 0}), ad::Layout::Shared,
                               b("c"), ad::Layout::ExpertMajor, 2, 3);
       }},
      {"masked_mean", [&](B& b) { return ad::masked_mean(ad::matmul(b("a"), b("b")), mask); }},
  };
  std::uint64_t seed = 100;
  for (const auto& [name, op] : ops) {
    const std::string label = name;
    CAPTURE(label);
    CHECK(check_op(op, ps, seed++) < 1e-6);
  }
}

TEST_CASE("op forward values") {
  ad::Tape tape;
  const auto a = tape.constant(Mat::from_rows({{1, 2}, {3, 4}, {5, 6}}));
  CHECK(ad::segment_mean(a, {0, 1, 0}, 2).value() == Mat::from_rows({{3, 4}, {3, 4}}));
  CHECK(ad::scatter_rows(a, {1, 1, 0}, {1.0, 2.0, 0.5}, 2).value() == Mat::from_rows({{2.5, 3}, {7, 10}}));
  CHECK(ad::gather_rows(a, {2, 2}).value() == Mat::from_rows({{5, 6}, {5, 6}}));
  // w TaskMajor (t*M + z), v ExpertMajor (z*T + t), M = 2, T = 2
  const auto w = tape.constant(Mat::from_rows({{0.1, 0.9, 0.4, 0.6}}));
  const auto v = tape.constant(Mat::from_rows({{1, 2, 3, 4}}));
  const Mat d = ad::expert_dot(w, ad::Layout::TaskMajor, v, ad::Layout::ExpertMajor, 2, 2).value();
  CHECK(d(0, 0) == doctest::Approx(0.1 * 1 + 0.9 * 3));
  CHECK(d(0, 1) == doctest::Approx(0.4 * 2 + 0.6 * 4));
  Mat mask = Mat::from_rows({{1, 0}, {0, 0}, {1, 1}});
  CHECK(ad::masked_mean(a, mask).value()(0, 0) == doctest::Approx((1 + 5 + 6) / 3.0));
  CHECK_THROWS(ad::masked_mean(a, Mat(3, 2)));
}

TEST_CASE("two-layer network passes grad_check") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    ParamStore ps;
    ps.add("w1", random_mat(5, 7, rng));
    ps.add("b1", random_mat(1, 7, rng));
    ps.add("w2", random_mat(7, 2, rng));
    const Mat x = random_mat(6, 5, rng);
    LossFn fn = [&](ParamStore& p, bool with_grad) {
      ad::Tape tape;
      ParamBinding bind(tape, p, with_grad);
      const auto h = ad::relu(ad::add_row(ad::matmul(tape.constant(x), bind("w1")), bind("b1")));
      const auto loss = ad::sum(ad::sigmoid(ad::matmul(h, bind("w2"))));
      if (with_grad) tape.backward(loss);
      return loss.value()(0, 0);
    };
    CHECK(grad_check(fn, ps).max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check sensitivity") {
  Rng rng(4);
  ParamStore ps;
  ps.add("w", random_mat(3, 3, rng));
  const Mat c = random_mat(3, 3, rng, 2.0);
  LossFn linear = [&](ParamStore& p, bool with_grad) {
    ad::Tape tape;
    ParamBinding bind(tape, p, with_grad);
    const auto loss = ad::sum(ad::hadamard(bind("w"), tape.constant(c)));
    if (with_grad) tape.backward(loss);
    return loss.value()(0, 0);
  };
  CHECK(grad_check(linear, ps).max_rel_error < 1e-9);
  const Mat before = ps[0].value;
  grad_check(linear, ps);
  CHECK(ps[0].value == before);

  std::vector<Mat> corrupted = {c};
  for (double& g : corrupted[0].data) g *= 1.1;
  const double err = compare_gradients(linear, ps, corrupted).max_rel_error;
  CHECK(err == doctest::Approx(0.1 / 1.1).epsilon(1e-4));
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("adam") {
  Rng rng(9);
  ParamStore ps;
  ps.add("w", random_mat(2, 3, rng));
  const AdamConfig cfg;

  SUBCASE("zero gradient from a fresh state is a fixed point") {
    AdamState st = AdamState::init(ps, cfg);
    const Mat before = ps[0].value;
    adam_step(ps, st);
    CHECK(ps[0].value == before);
  }
  SUBCASE("moments decay under zero gradient") {
    AdamState st = AdamState::init(ps, cfg);
    for (double& g : ps[0].grad.data) g = 1.0;
    adam_step(ps, st);
    const Mat m1 = st.m[0], v1 = st.v[0];
    ps.zero_grad();
    adam_step(ps, st);
    for (std::size_t i = 0; i < m1.size(); ++i) {
      CHECK(st.m[0].data[i] == doctest::Approx(m1.data[i] * cfg.beta1));
      CHECK(st.v[0].data[i] == doctest::Approx(v1.data[i] * cfg.beta2));
    }
  }
  SUBCASE("first step moves each entry by about lr against the gradient sign") {
    AdamState st = AdamState::init(ps, cfg);
    const Mat before = ps[0].value;
    for (std::size_t i = 0; i < ps[0].grad.size(); ++i) ps[0].grad.data[i] = (i % 2 ? 1.0 : -1.0) * (0.01 + i);
    adam_step(ps, st);
    for (std::size_t i = 0; i < before.size(); ++i) {
      const double step = ps[0].value.data[i] - before.data[i];
      const double g = ps[0].grad.data[i];
      CHECK(std::abs(step + cfg.lr * g / (std::abs(g) + cfg.eps)) < 1e-15);
      CHECK(std::abs(std::abs(step) - cfg.lr) < 1e-8);
    }
  }
  SUBCASE("replaying a gradient trace is bit-identical") {
    ParamStore a = ps, b = ps;
    AdamState sa = AdamState::init(a, cfg), sb = AdamState::init(b, cfg);
    Rng trace(1);
    for (int step = 0; step < 20; ++step) {
      const Mat g = random_mat(2, 3, trace);
      a[0].grad = g;
      b[0].grad = g;
      adam_step(a, sa);
      adam_step(b, sb);
    }
    CHECK(a[0].value == b[0].value);
    CHECK(sa.m[0] == sb.m[0]);
    CHECK(sa.step == 20);
  }
  SUBCASE("state mismatch is rejected") {
    AdamState st;
    CHECK_THROWS_AS(adam_step(ps, st), std::invalid_argument);
  }
}

TEST_CASE("rng determinism and ranges") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    CHECK(r.below(7) < 7);
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(mix_seed(1, 2) != mix_seed(1, 3));
  CHECK(mix_seed(1, 2) != mix_seed(2, 2));
  double s = 0.0, ss = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    ss += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(ss / n - 1.0) < 0.02);
}

TEST_CASE("param store") {
  Rng rng(0);
  ParamStore ps;
  ps.add_glorot("w", 10, 20, rng);
  ps.add_zeros("b", 1, 20);
  CHECK(ps.num_scalars() == 220);
  const double a = std::sqrt(6.0 / 30.0);
  for (double v : ps.at("w").value.data) CHECK(std::abs(v) <= a);
  CHECK_THROWS_AS(ps.add_zeros("b", 1, 1), std::invalid_argument);
  CHECK_FALSE(ps.contains("missing"));
  ParamStore other = ps;
  CHECK(other.same_layout(ps));
  other.at("w").value.data[0] = 5.0;
  ps.assign_values(other);
  CHECK(ps.at("w").value.data[0] == 5.0);
}
