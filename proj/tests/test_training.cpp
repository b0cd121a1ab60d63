#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "graphdive/io.hpp"
#include "graphdive/training.hpp"
#include "helpers.hpp"

using namespace graphdive;

namespace {

Dataset small_synth(std::size_t n = 64, double rho = 0.25, std::uint64_t seed = 3) {
  SynthSpec s;
  s.n = n;
  s.positive_ratio = rho;
  s.min_nodes = 5;
  s.max_nodes = 10;
  s.noise = 0.2;
  s.seed = seed;
  return synth_generate(s);
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden_dim = 8;
  c.layers = 2;
  c.epochs = 3;
  c.batch_size = 16;
  c.learning_rate = 1e-2;
  return c;
}

bool same_values(const ParamStore& a, const ParamStore& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].value == b[i].value)) return false;
  return true;
}

double max_diff(const ParamStore& a, const ParamStore& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, testutil::max_abs_diff(a[i].value, b[i].value));
  return d;
}

std::vector<std::size_t> rows_of(const Dataset& ds, Split s) {
  std::vector<std::size_t> r;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.split[i] == s) r.push_back(i);
  return r;
}

// Two-task copy of a dataset: task 1 is the complement of task 0 with some labels missing.
Dataset two_tasks(const Dataset& ds) {
  Dataset out = ds;
  out.labels.values = Mat(ds.size(), 2);
  out.labels.mask = Mat(ds.size(), 2, 1.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.labels.values(i, 0) = ds.labels.values(i, 0);
    out.labels.values(i, 1) = 1.0 - ds.labels.values(i, 0);
    if (i % 5 == 2) {
      out.labels.mask(i, 1) = 0.0;
      out.labels.values(i, 1) = 0.0;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.split_train = 0.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.lambda = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.split = SplitStrategy::Provided;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.grid_experts = {};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  for (Variant v : {Variant::Pri, Variant::Post, Variant::MeanMix, Variant::BaselineBce, Variant::BaselineFocal,
                    Variant::BaselineReweight})
    CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("mixture"), std::invalid_argument);
}

TEST_CASE("training is deterministic") {
  const Dataset ds = small_synth();
  TrainConfig c = small_config();
  c.variant = Variant::Post;
  const Checkpoint a = train(c, ds);
  const Checkpoint b = train(c, ds);
  CHECK(same_values(a.params, b.params));
  CHECK(same_values(a.best_params, b.best_params));
  CHECK(a.history == b.history);
  c.seed = 1;
  CHECK_FALSE(same_values(train(c, ds).params, a.params));
}

TEST_CASE("single-expert variants reduce to bce") {
  const Dataset ds = small_synth();
  TrainConfig c = small_config();
  c.experts = 1;
  c.epochs = 5;
  c.variant = Variant::BaselineBce;
  const Checkpoint ref = train(c, ds);
  for (Variant v : {Variant::Pri, Variant::Post, Variant::MeanMix}) {
    for (double lambda : {0.0, 1.0, 10.0}) {
      c.variant = v;
      c.lambda = lambda;
      const Checkpoint got = train(c, ds);
      CAPTURE(std::string(variant_name(v)));
      CAPTURE(lambda);
      REQUIRE(got.history.epochs.size() == ref.history.epochs.size());
      for (std::size_t e = 0; e < ref.history.epochs.size(); ++e)
        CHECK(std::abs(got.history.epochs[e].train_loss - ref.history.epochs[e].train_loss) < 1e-12);
      CHECK(max_diff(got.params, ref.params) < 1e-10);
    }
  }
}

TEST_CASE("post variant refreshes the posterior every mini-batch") {
  const Dataset ds = small_synth();
  TrainConfig c = small_config();
  c.variant = Variant::Post;
  c.lambda = 0.5;
  const auto train_rows = rows_of(ds, Split::Train);
  const AdamConfig ac{c.learning_rate, c.beta1, c.beta2, c.adam_eps};

  Model ref = make_model(c, ds.node_feat_dim, ds.edge_feat_dim, ds.tasks());
  AdamState ref_adam = AdamState::init(ref.params, ac);
  Model fresh = ref, stale = ref;
  AdamState fresh_adam = ref_adam, stale_adam = ref_adam;

  const std::size_t epochs = 2;
  for (std::size_t e = 0; e < epochs; ++e) em_epoch(ref, ref_adam, ds, train_rows, c, e);

  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<std::size_t> order = train_rows;
    Rng rng(mix_seed(c.seed, e + 1));
    rng.shuffle(order);
    // stale: all posteriors taken once at the start of the epoch
    std::vector<Mat> stale_post;
    for (std::size_t s = 0; s < order.size(); s += c.batch_size) {
      const auto rows = std::span<const std::size_t>(order).subspan(s, std::min(c.batch_size, order.size() - s));
      stale_post.push_back(compute_posterior(stale, ds, rows));
    }
    for (std::size_t s = 0, k = 0; s < order.size(); s += c.batch_size, ++k) {
      const auto rows = std::span<const std::size_t>(order).subspan(s, std::min(c.batch_size, order.size() - s));
      const Mat post = compute_posterior(fresh, ds, rows);
      fresh.params.zero_grad();
      batch_loss(fresh, ds, rows, c, {}, true, &post);
      adam_step(fresh.params, fresh_adam);
      stale.params.zero_grad();
      batch_loss(stale, ds, rows, c, {}, true, &stale_post[k]);
      adam_step(stale.params, stale_adam);
    }
  }
  CHECK(same_values(ref.params, fresh.params));
  CHECK(max_diff(ref.params, stale.params) > 1e-6);
  CHECK_THROWS_AS(em_epoch(ref, ref_adam, ds, train_rows, small_config(), 0), std::invalid_argument);
}

TEST_CASE("fully masked samples contribute nothing") {
  Dataset ds = two_tasks(small_synth());
  ds.labels.mask(5, 0) = ds.labels.mask(5, 1) = 0.0;
  TrainConfig c = small_config();
  c.gate_mode = GateMode::Shared;
  for (Variant v : {Variant::Pri, Variant::Post, Variant::MeanMix, Variant::BaselineFocal}) {
    c.variant = v;
    Model a = make_model(c, ds.node_feat_dim, ds.edge_feat_dim, 2);
    Model b = a;
    const std::vector<std::size_t> with{1, 5, 9, 12}, without{1, 9, 12};
    a.params.zero_grad();
    b.params.zero_grad();
    const double la = batch_loss(a, ds, with, c, ClassWeights(2), true);
    const double lb = batch_loss(b, ds, without, c, ClassWeights(2), true);
    CHECK(la == doctest::Approx(lb).epsilon(1e-14));
    double d = 0.0;
    for (std::size_t i = 0; i < a.params.size(); ++i)
      d = std::max(d, testutil::max_abs_diff(a.params[i].grad, b.params[i].grad));
    CHECK(d < 1e-13);
  }
  Model m = make_model(c, ds.node_feat_dim, ds.edge_feat_dim, 2);
  CHECK(std::isnan(batch_loss(m, ds, std::vector<std::size_t>{5}, c, ClassWeights(2), true)));
}

TEST_CASE("resume equals uninterrupted training") {
  const Dataset ds = small_synth();
  for (Variant v : {Variant::Pri, Variant::Post, Variant::BaselineReweight}) {
    TrainConfig c = small_config();
    c.variant = v;
    c.epochs = 6;
    const Checkpoint full = train(c, ds);
    TrainConfig half_cfg = c;
    half_cfg.epochs = 3;
    const Checkpoint half = deserialize_checkpoint(serialize_checkpoint(train(half_cfg, ds)));
    const Checkpoint resumed = resume(half, ds, 6);
    CHECK(same_values(full.params, resumed.params));
    CHECK(same_values(full.best_params, resumed.best_params));
    CHECK(full.history == resumed.history);
    CHECK(full.adam.step == resumed.adam.step);
    CHECK(full.adam.m == resumed.adam.m);
    CHECK(full.adam.v == resumed.adam.v);
    CHECK_THROWS_AS(resume(full, ds, 2), std::invalid_argument);
  }
}

TEST_CASE("best epoch and callback") {
  const Dataset ds = small_synth(96);
  TrainConfig c = small_config();
  c.epochs = 5;
  std::vector<std::size_t> seen;
  const Checkpoint ck = train(c, ds, [&](std::size_t e, const EpochRecord& r) {
    seen.push_back(e);
    CHECK(std::isfinite(r.train_loss));
  });
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4});
  REQUIRE(ck.history.best_epoch);
  double best = -1.0;
  std::size_t arg = 0;
  for (std::size_t e = 0; e < ck.history.epochs.size(); ++e)
    if (*ck.history.epochs[e].valid_auc > best) best = *ck.history.epochs[e].valid_auc, arg = e;
  CHECK(*ck.history.best_epoch == arg);
  // evaluation uses the best parameters
  Model m = ck.model(true);
  const auto valid = rows_of(ds, Split::Valid);
  const Mat p = predict(m, ds, valid, c.variant);
  std::vector<double> s, y;
  for (std::size_t i = 0; i < valid.size(); ++i) s.push_back(p(i, 0)), y.push_back(ds.labels.values(valid[i], 0));
  CHECK(*evaluate(ck, ds, Split::Valid).mean_auc == *roc_auc(s, y));
  CHECK(*roc_auc(s, y) == best);
}

TEST_CASE("splits") {
  const Dataset ds = small_synth(1000, 0.1, 8);
  SUBCASE("random stratified") {
    const auto tags = split_dataset(ds, SplitStrategy::RandomStratified, 0.8, 0.1, 0.1, 5);
    std::size_t n[3] = {}, pos[3] = {};
    for (std::size_t i = 0; i < tags.size(); ++i) {
      const auto k = static_cast<std::size_t>(tags[i]);
      ++n[k];
      if (ds.labels.values(i, 0) != 0.0) ++pos[k];
    }
    CHECK(n[0] == 800);
    CHECK(n[1] == 100);
    CHECK(n[2] == 100);
    CHECK(std::abs(static_cast<double>(pos[0]) - 80.0) <= 2.0);
    CHECK(std::abs(static_cast<double>(pos[1]) - 10.0) <= 2.0);
    CHECK(std::abs(static_cast<double>(pos[2]) - 10.0) <= 2.0);
    CHECK(tags == split_dataset(ds, SplitStrategy::RandomStratified, 0.8, 0.1, 0.1, 5));
    CHECK(tags != split_dataset(ds, SplitStrategy::RandomStratified, 0.8, 0.1, 0.1, 6));
  }
  SUBCASE("dataset tags") {
    CHECK(split_dataset(ds, SplitStrategy::Dataset, 0.8, 0.1, 0.1, 0) == ds.split);
  }
  SUBCASE("provided file") {
    const auto path = std::filesystem::temp_directory_path() / "graphdive_split_test.txt";
    {
      std::ofstream out(path);
      for (std::size_t i = 0; i < ds.size(); ++i) out << i << ' ' << (i % 3 == 0 ? "test" : "train") << '\n';
    }
    const auto tags = split_dataset(ds, SplitStrategy::Provided, 0, 0, 0, 0, path.string());
    CHECK(tags[0] == Split::Test);
    CHECK(tags[1] == Split::Train);
    std::filesystem::remove(path);
  }
}

TEST_CASE("reweight refuses a single-class training split") {
  Dataset ds = small_synth();
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.split[i] == Split::Train) ds.labels.values(i, 0) = 0.0;
  TrainConfig c = small_config();
  c.variant = Variant::BaselineReweight;
  CHECK_THROWS_AS(train(c, ds), std::invalid_argument);
  c.variant = Variant::BaselineBce;
  CHECK_NOTHROW(train(c, ds));
}

TEST_CASE("models learn the synthetic motif") {
  SynthSpec s;
  s.n = 400;
  s.positive_ratio = 0.3;
  s.seed = 4;
  const Dataset ds = synth_generate(s);
  for (Variant v : {Variant::Pri, Variant::Post, Variant::BaselineBce}) {
    TrainConfig c = small_config();
    c.hidden_dim = 16;
    c.layers = 3;
    c.epochs = 80;
    c.variant = v;
    const Checkpoint ck = train(c, ds);
    const auto rep = evaluate(ck, ds, Split::Test);
    CAPTURE(std::string(variant_name(v)));
    CHECK(*rep.mean_auc > 0.8);
  }
}

TEST_CASE("sweep") {
  const Dataset ds = small_synth(96);
  TrainConfig c = small_config();
  c.variant = Variant::Post;
  SUBCASE("one cell equals a single training run") {
    c.grid_experts = {3};
    c.grid_lambda = {0.1};
    c.sweep_seeds = {2};
    const auto res = sweep(c, ds);
    REQUIRE(res.cells.size() == 1);
    TrainConfig single = c;
    single.seed = 2;
    const Checkpoint ck = train(single, ds);
    CHECK(res.cells[0].valid_auc[0] == *ck.history.epochs[*ck.history.best_epoch].valid_auc);
    CHECK(res.cells[0].test_auc[0] == *evaluate(ck, ds, Split::Test).mean_auc);
  }
  SUBCASE("shape, order and thread independence") {
    c.grid_experts = {4, 2, 2};
    c.grid_lambda = {1.0, 0.1};
    c.sweep_seeds = {0, 1};
    const auto one = sweep(c, ds, 1);
    REQUIRE(one.cells.size() == 4);
    CHECK(one.cells[0].experts == 2);
    CHECK(one.cells[0].lambda == 0.1);
    CHECK(one.cells[1].lambda == 1.0);
    CHECK(one.cells[3].experts == 4);
    for (const auto& cell : one.cells) {
      CHECK(cell.valid_auc.size() == 2);
      CHECK(cell.valid.n == 2);
    }
    for (std::size_t i = 0; i < one.cells.size(); ++i) CHECK(one.cells[i].valid.mean <= one.cells[one.best].valid.mean);
    CHECK(sweep(c, ds, 3) == one);
  }
}

TEST_CASE("model gradients") {
  SUBCASE("suite") {
    const auto rep = run_gradcheck_suite(TrainConfig{});
    CHECK(rep.cases.size() == 5 * 2 * 2 * 8);
    CHECK(rep.passed);
    CHECK(rep.worst < 1e-4);
  }
  SUBCASE("more seeds") {
    // Beyond the suite's seeds a coordinate with a near-zero gradient can
    // exceed the relative bound from round-off alone; then the absolute
    // error must be at round-off level.
    for (std::uint64_t seed = 5; seed < 20; ++seed) {
      SynthSpec spec;
      spec.n = 4;
      spec.positive_ratio = 0.25;
      spec.min_nodes = 4;
      spec.max_nodes = 7;
      spec.noise = 0.3;
      spec.seed = seed;
      const Dataset ds = synth_generate(spec);
      for (BackboneKind kind : {BackboneKind::GCN, BackboneKind::GIN})
        for (Variant v : {Variant::Pri, Variant::Post, Variant::BaselineFocal, Variant::BaselineReweight}) {
          TrainConfig c;
          c.variant = v;
          c.lambda = 1.0;
          c.backbone = kind;
          c.hidden_dim = 8;
          c.layers = 2;
          c.seed = seed;
          const auto r = check_model_gradient(c, ds, std::vector<std::size_t>{0, 1, 2, 3});
          CAPTURE(seed);
          CAPTURE(r.worst_param);
          if (r.max_rel_error >= 1e-4) {
            CHECK(std::abs(r.analytic) < 1e-6);
            CHECK(std::abs(r.analytic - r.numeric) < 1e-10);
          }
        }
    }
  }
  SUBCASE("multi-task gates") {
    const Dataset ds = two_tasks(small_synth(8));
    const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    for (GateMode mode : {GateMode::Shared, GateMode::Individual}) {
      for (Variant v : {Variant::Pri, Variant::Post}) {
        TrainConfig c = small_config();
        c.gate_mode = mode;
        c.variant = v;
        c.lambda = 1.0;
        c.gate_bias = true;
        c.hidden_dim = 4;
        CHECK(check_model_gradient(c, ds, rows).max_rel_error < 1e-4);
      }
    }
  }
}

TEST_CASE("multi-task training") {
  const Dataset ds = two_tasks(small_synth(96));
  for (GateMode mode : {GateMode::Shared, GateMode::Individual}) {
    TrainConfig c = small_config();
    c.gate_mode = mode;
    const Checkpoint ck = train(c, ds);
    const auto rep = evaluate(ck, ds, Split::Test);
    CHECK(rep.tasks.size() == 2);
    CHECK(analyze_experts(ck, ds, Split::Test).size() == 2);
  }
  TrainConfig c = small_config();
  CHECK_THROWS_AS(train(c, ds), std::invalid_argument);
}
