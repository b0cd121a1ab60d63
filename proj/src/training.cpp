#include "graphdive/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "graphdive/io.hpp"
#include "graphdive/rng.hpp"

namespace graphdive {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Pri: return "pri";
    case Variant::Post: return "post";
    case Variant::MeanMix: return "mean_mix";
    case Variant::BaselineBce: return "baseline_bce";
    case Variant::BaselineFocal: return "baseline_focal";
    case Variant::BaselineReweight: return "baseline_reweight";
  }
  return "pri";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::Pri, Variant::Post, Variant::MeanMix, Variant::BaselineBce,
                    Variant::BaselineFocal, Variant::BaselineReweight})
    if (variant_name(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

bool is_baseline(Variant v) {
  return v == Variant::BaselineBce || v == Variant::BaselineFocal || v == Variant::BaselineReweight;
}

std::string_view split_strategy_name(SplitStrategy s) {
  switch (s) {
    case SplitStrategy::Dataset: return "dataset";
    case SplitStrategy::Provided: return "provided";
    case SplitStrategy::RandomStratified: return "random_stratified";
  }
  return "dataset";
}

SplitStrategy parse_split_strategy(std::string_view s) {
  if (s == "dataset") return SplitStrategy::Dataset;
  if (s == "provided") return SplitStrategy::Provided;
  if (s == "random_stratified") return SplitStrategy::RandomStratified;
  throw std::invalid_argument("unknown split strategy '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (experts < 1) fail("experts must be >= 1");
  if (hidden_dim < 1 || layers < 1) fail("hidden_dim and layers must be >= 1");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(focal_gamma >= 0.0)) fail("focal_gamma must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (split_train < 0.0 || split_valid < 0.0 || split_test < 0.0 ||
      std::abs(split_train + split_valid + split_test - 1.0) > 1e-9)
    fail("split ratios must be nonnegative and sum to 1");
  if (split == SplitStrategy::Provided && split_file.empty()) fail("provided split needs split_file");
  if (grid_experts.empty() || grid_lambda.empty() || sweep_seeds.empty()) fail("sweep grids must be nonempty");
  for (std::size_t m : grid_experts)
    if (m < 1) fail("grid_experts entries must be >= 1");
  for (double l : grid_lambda)
    if (!(l >= 0.0)) fail("grid_lambda entries must be >= 0");
}

Model make_model(const TrainConfig& cfg, std::size_t node_feat_dim, std::size_t edge_feat_dim,
                 std::size_t tasks) {
  Model m;
  m.backbone = {cfg.backbone, cfg.hidden_dim, cfg.layers, node_feat_dim, edge_feat_dim};
  m.head.experts = is_baseline(cfg.variant) ? 1 : cfg.experts;
  m.head.tasks = tasks;
  m.head.dim = cfg.hidden_dim;
  m.head.temperature = cfg.temperature;
  m.head.gate_mode = cfg.gate_mode;
  m.head.gate_bias = cfg.gate_bias;
  m.head.cosine_gate = cfg.cosine_gate;
  m.head.validate();
  Rng rng(cfg.seed);
  register_backbone(m.backbone, m.params, rng);
  register_head(m.head, m.params, rng);
  return m;
}

Model Checkpoint::model(bool best) const {
  Model m;
  m.backbone = {config.backbone, config.hidden_dim, config.layers, node_feat_dim, edge_feat_dim};
  m.head.experts = is_baseline(config.variant) ? 1 : config.experts;
  m.head.tasks = tasks;
  m.head.dim = config.hidden_dim;
  m.head.temperature = config.temperature;
  m.head.gate_mode = config.gate_mode;
  m.head.gate_bias = config.gate_bias;
  m.head.cosine_gate = config.cosine_gate;
  m.params = best ? best_params : params;
  return m;
}

LabelBatch make_label_batch(const LabelSet& labels, std::span<const std::size_t> rows) {
  const std::size_t T = labels.tasks();
  LabelBatch b{Mat(rows.size(), T), Mat(rows.size(), T)};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      if (!labels.present(rows[i], t)) continue;
      b.mask(i, t) = 1.0;
      b.labels(i, t) = labels.values(rows[i], t);
    }
  }
  return b;
}

namespace {

struct Forward {
  ad::Var embedding;
  HeadOutputs head;
};

Forward forward(Model& model, ParamBinding& bind, const GraphBatch& gb) {
  const ad::Var x = extract(gb, model.backbone, bind);
  return {x, head_forward(x, model.head, bind)};
}

bool any_present(const Mat& mask) {
  return std::any_of(mask.data.begin(), mask.data.end(), [](double m) { return m != 0.0; });
}

}  // namespace

double batch_loss(Model& model, const Dataset& ds, std::span<const std::size_t> rows,
                  const TrainConfig& cfg, const ClassWeights& weights, bool with_grad,
                  const Mat* frozen_posterior) {
  const LabelBatch lb = make_label_batch(ds.labels, rows);
  if (!any_present(lb.mask)) return std::numeric_limits<double>::quiet_NaN();
  ad::Tape tape;
  ParamBinding bind(tape, model.params, with_grad);
  const GraphBatch gb = make_graph_batch(ds, rows);
  const Forward fw = forward(model, bind, gb);
  const HeadSpec& head = model.head;
  ad::Var loss;
  switch (cfg.variant) {
    case Variant::Pri:
      loss = loss_pri(fw.head, lb.labels, lb.mask, head);
      break;
    case Variant::Post: {
      Mat post = frozen_posterior
                     ? *frozen_posterior
                     : posterior_matrix(fw.head.gates.value(), fw.head.expert_probs.value(),
                                        lb.labels, lb.mask, head);
      loss = loss_post(fw.head, lb.labels, lb.mask, post, cfg.lambda, head);
      break;
    }
    case Variant::MeanMix:
      loss = loss_mean_mix(fw.head, lb.labels, lb.mask, head);
      break;
    case Variant::BaselineBce:
      loss = loss_bce(fw.head.expert_probs, lb.labels, lb.mask);
      break;
    case Variant::BaselineFocal:
      loss = loss_focal(fw.head.expert_probs, lb.labels, lb.mask, cfg.focal_gamma);
      break;
    case Variant::BaselineReweight:
      loss = loss_reweighted(fw.head.expert_probs, lb.labels, lb.mask, weights);
      break;
  }
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) throw std::domain_error("non-finite loss");
  if (with_grad) tape.backward(loss);
  return value;
}

Mat compute_posterior(Model& model, const Dataset& ds, std::span<const std::size_t> rows) {
  const LabelBatch lb = make_label_batch(ds.labels, rows);
  ad::Tape tape;
  ParamBinding bind(tape, model.params, false);
  const GraphBatch gb = make_graph_batch(ds, rows);
  const Forward fw = forward(model, bind, gb);
  return posterior_matrix(fw.head.gates.value(), fw.head.expert_probs.value(), lb.labels, lb.mask,
                          model.head);
}

namespace {

constexpr std::size_t kEvalChunk = 256;

template <typename Fn>
void for_each_chunk(Model& model, const Dataset& ds, std::span<const std::size_t> rows, Fn&& fn) {
  for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
    const auto chunk = rows.subspan(start, std::min(kEvalChunk, rows.size() - start));
    ad::Tape tape;
    ParamBinding bind(tape, model.params, false);
    const GraphBatch gb = make_graph_batch(ds, chunk);
    const Forward fw = forward(model, bind, gb);
    fn(start, chunk.size(), fw.head.gates.value(), fw.head.expert_probs.value());
  }
}

}  // namespace

Mat predict(Model& model, const Dataset& ds, std::span<const std::size_t> rows, Variant variant) {
  const HeadSpec& h = model.head;
  Mat out(rows.size(), h.tasks);
  for_each_chunk(model, ds, rows, [&](std::size_t start, std::size_t n, const Mat& gates, const Mat& probs) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t t = 0; t < h.tasks; ++t) {
        double p = 0.0;
        if (variant == Variant::MeanMix) {
          for (std::size_t z = 0; z < h.experts; ++z) p += expert_prob(probs, h, b, z, t);
          p *= 1.0 / static_cast<double>(h.experts);
        } else {
          const auto prior = prior_row(gates, h, b, t);
          for (std::size_t z = 0; z < h.experts; ++z) p += prior[z] * expert_prob(probs, h, b, z, t);
        }
        out(start + b, t) = p;
      }
    }
  });
  return out;
}

Mat gate_weights(Model& model, const Dataset& ds, std::span<const std::size_t> rows, std::size_t task) {
  const HeadSpec& h = model.head;
  if (task >= h.tasks) throw std::out_of_range("gate_weights: task index out of range");
  Mat out(rows.size(), h.experts);
  for_each_chunk(model, ds, rows, [&](std::size_t start, std::size_t n, const Mat& gates, const Mat&) {
    for (std::size_t b = 0; b < n; ++b) {
      const auto prior = prior_row(gates, h, b, task);
      std::copy(prior.begin(), prior.end(), out.row(start + b).begin());
    }
  });
  return out;
}

std::vector<Split> split_dataset(const Dataset& ds, SplitStrategy strategy, double train,
                                 double valid, double test, std::uint64_t seed,
                                 const std::string& split_file) {
  switch (strategy) {
    case SplitStrategy::Dataset:
      if (ds.split.size() != ds.size()) throw std::invalid_argument("dataset carries no split tags");
      return ds.split;
    case SplitStrategy::Provided:
      return read_split_file(split_file, ds.size());
    case SplitStrategy::RandomStratified:
      break;
  }
  if (train < 0.0 || valid < 0.0 || test < 0.0 || std::abs(train + valid + test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
  // Order rows as [positives | negatives | missing], each block shuffled, then
  // deal splits along that order by largest deficit so every block receives
  // its proportional share.
  Rng rng(mix_seed(seed, 0x73706c6974));
  std::vector<std::size_t> groups[3];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t g = !ds.labels.present(i, 0) ? 2 : (ds.labels.values(i, 0) != 0.0 ? 0 : 1);
    groups[g].push_back(i);
  }
  std::vector<std::size_t> order;
  for (auto& g : groups) {
    rng.shuffle(g);
    order.insert(order.end(), g.begin(), g.end());
  }
  const double ratios[3] = {train, valid, test};
  const Split tags[3] = {Split::Train, Split::Valid, Split::Test};
  double assigned[3] = {0, 0, 0};
  std::vector<Split> out(ds.size(), Split::Train);
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::size_t pick = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < 3; ++s) {
      const double deficit = ratios[s] * static_cast<double>(i + 1) - assigned[s];
      if (ratios[s] > 0.0 && deficit > best + 1e-12) {
        best = deficit;
        pick = s;
      }
    }
    assigned[pick] += 1.0;
    out[order[i]] = tags[pick];
  }
  return out;
}

EpochStats train_epoch(Model& model, AdamState& adam, const Dataset& ds,
                       std::span<const std::size_t> train_rows, const TrainConfig& cfg,
                       const ClassWeights& weights, std::size_t epoch) {
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  Rng rng(mix_seed(cfg.seed, epoch + 1));
  rng.shuffle(order);
  EpochStats stats;
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const auto rows = std::span<const std::size_t>(order).subspan(
        start, std::min(cfg.batch_size, order.size() - start));
    model.params.zero_grad();
    double loss;
    try {
      loss = batch_loss(model, ds, rows, cfg, weights, true);
    } catch (const std::domain_error& e) {
      throw std::domain_error("epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(start / cfg.batch_size) + ": " + e.what());
    }
    if (std::isnan(loss)) continue;  // every label in the batch is missing
    adam_step(model.params, adam);
    total += loss;
    ++stats.batches;
  }
  stats.mean_loss = stats.batches ? total / static_cast<double>(stats.batches)
                                  : std::numeric_limits<double>::quiet_NaN();
  return stats;
}

EpochStats em_epoch(Model& model, AdamState& adam, const Dataset& ds,
                    std::span<const std::size_t> train_rows, const TrainConfig& cfg,
                    std::size_t epoch) {
  if (cfg.variant != Variant::Post) throw std::invalid_argument("em_epoch: variant must be post");
  return train_epoch(model, adam, ds, train_rows, cfg, {}, epoch);
}

namespace {

struct Splits {
  std::vector<std::size_t> train, valid, test;
};

Splits resolve_splits(const TrainConfig& cfg, const Dataset& ds) {
  const auto tags = split_dataset(ds, cfg.split, cfg.split_train, cfg.split_valid, cfg.split_test,
                                  cfg.seed, cfg.split_file);
  Splits s;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    (tags[i] == Split::Train ? s.train : tags[i] == Split::Valid ? s.valid : s.test).push_back(i);
  }
  return s;
}

ClassWeights weights_for(const TrainConfig& cfg, const Dataset& ds, std::span<const std::size_t> train) {
  if (cfg.variant != Variant::BaselineReweight) return ClassWeights(ds.tasks());
  ClassWeights w = inverse_frequency_weights(ds.labels, train);
  for (std::size_t t = 0; t < w.size(); ++t)
    if (w[t].degenerate)
      throw std::invalid_argument("reweight: task " + std::to_string(t) +
                                  " has a class with no training labels");
  return w;
}

std::optional<double> mean_valid_auc(Model& model, const Dataset& ds, std::span<const std::size_t> rows,
                                     Variant variant) {
  if (rows.empty()) return std::nullopt;
  const Mat probs = predict(model, ds, rows, variant);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < ds.tasks(); ++t) {
    std::vector<double> p, y;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!ds.labels.present(rows[i], t)) continue;
      p.push_back(probs(i, t));
      y.push_back(ds.labels.values(rows[i], t));
    }
    if (auto auc = roc_auc(p, y)) {
      s += *auc;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

}  // namespace

Checkpoint train(const TrainConfig& cfg, const Dataset& ds, const EpochCallback& on_epoch) {
  cfg.validate();
  if (ds.size() == 0) throw std::invalid_argument("train: empty dataset");
  Model model = make_model(cfg, ds.node_feat_dim, ds.edge_feat_dim, ds.tasks());
  Checkpoint ck;
  ck.config = cfg;
  ck.node_feat_dim = ds.node_feat_dim;
  ck.edge_feat_dim = ds.edge_feat_dim;
  ck.tasks = ds.tasks();
  ck.adam = AdamState::init(model.params, {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});
  ck.best_params = model.params;
  ck.params = std::move(model.params);
  return resume(ck, ds, cfg.epochs, on_epoch);
}

Checkpoint resume(const Checkpoint& from, const Dataset& ds, std::size_t total_epochs,
                  const EpochCallback& on_epoch) {
  const TrainConfig& cfg = from.config;
  cfg.validate();
  if (total_epochs < from.epoch) throw std::invalid_argument("resume: checkpoint is past the target epoch");
  if (ds.node_feat_dim != from.node_feat_dim || ds.edge_feat_dim != from.edge_feat_dim ||
      ds.tasks() != from.tasks)
    throw std::invalid_argument("resume: dataset shape does not match checkpoint");
  const Splits splits = resolve_splits(cfg, ds);
  if (splits.train.empty()) throw std::invalid_argument("train: training split is empty");
  const ClassWeights weights = weights_for(cfg, ds, splits.train);

  Checkpoint ck = from;
  Model model = ck.model(false);
  std::optional<double> best_auc;
  if (ck.history.best_epoch) best_auc = ck.history.epochs.at(*ck.history.best_epoch).valid_auc;

  for (std::size_t e = ck.epoch; e < total_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochStats stats = train_epoch(model, ck.adam, ds, splits.train, cfg, weights, e);
    EpochRecord rec;
    rec.train_loss = stats.mean_loss;
    rec.valid_auc = mean_valid_auc(model, ds, splits.valid, cfg.variant);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.history.epochs.push_back(rec);
    const bool better = !ck.history.best_epoch || (rec.valid_auc && (!best_auc || *rec.valid_auc > *best_auc));
    if (better) {
      ck.history.best_epoch = e;
      best_auc = rec.valid_auc;
      ck.best_params = model.params;
    }
    ck.epoch = e + 1;
    if (on_epoch) on_epoch(e, rec);
  }
  ck.params = std::move(model.params);
  return ck;
}

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& ds, Split split) {
  const Splits splits = resolve_splits(ckpt.config, ds);
  const auto& rows = split == Split::Train ? splits.train : split == Split::Valid ? splits.valid : splits.test;
  Model model = ckpt.model(true);
  const Mat probs = predict(model, ds, rows, ckpt.config.variant);
  const auto minority = minority_classes(ds.labels, splits.train);
  return evaluate_predictions(probs, ds.labels, rows, minority);
}

std::vector<ExpertUsage> analyze_experts(const Checkpoint& ckpt, const Dataset& ds, Split split) {
  const Splits splits = resolve_splits(ckpt.config, ds);
  const auto& rows = split == Split::Train ? splits.train : split == Split::Valid ? splits.valid : splits.test;
  Model model = ckpt.model(true);
  std::vector<ExpertUsage> out;
  for (std::size_t t = 0; t < ds.tasks(); ++t) {
    const Mat g = gate_weights(model, ds, rows, t);
    std::vector<double> y(rows.size());
    auto present = std::make_unique<bool[]>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      present[i] = ds.labels.present(rows[i], t);
      y[i] = ds.labels.values(rows[i], t);
    }
    out.push_back(expert_usage(g, y, std::span<const bool>(present.get(), rows.size())));
  }
  return out;
}

namespace {

template <typename Job>
void run_parallel(std::size_t jobs, std::size_t threads, Job&& job) {
  threads = std::max<std::size_t>(1, std::min(threads, jobs));
  if (threads == 1) {
    for (std::size_t i = 0; i < jobs; ++i) job(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= jobs || error) return;
          i = next++;
        }
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

template <typename T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

SweepResult sweep(const TrainConfig& cfg, const Dataset& ds, std::size_t threads) {
  cfg.validate();
  const auto ms = sorted_unique(cfg.grid_experts);
  const auto ls = sorted_unique(cfg.grid_lambda);
  const auto& seeds = cfg.sweep_seeds;
  SweepResult res;
  for (std::size_t m : ms) {
    for (double l : ls) {
      SweepCell c;
      c.experts = m;
      c.lambda = l;
      c.valid_auc.assign(seeds.size(), 0.0);
      c.test_auc.assign(seeds.size(), 0.0);
      res.cells.push_back(std::move(c));
    }
  }
  const std::size_t jobs = res.cells.size() * seeds.size();
  run_parallel(jobs, threads, [&](std::size_t j) {
    SweepCell& c = res.cells[j / seeds.size()];
    const std::size_t s = j % seeds.size();
    TrainConfig run = cfg;
    run.experts = c.experts;
    run.lambda = c.lambda;
    run.seed = seeds[s];
    const Checkpoint ck = train(run, ds);
    const auto& best = ck.history.epochs.at(*ck.history.best_epoch);
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    c.valid_auc[s] = best.valid_auc.value_or(nan);
    c.test_auc[s] = evaluate(ck, ds, Split::Test).mean_auc.value_or(nan);
  });
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < res.cells.size(); ++i) {
    auto& c = res.cells[i];
    c.valid = mean_std(c.valid_auc);
    c.test = mean_std(c.test_auc);
    if (c.valid.mean > best) {
      best = c.valid.mean;
      res.best = i;
    }
  }
  return res;
}

GradCheckResult check_model_gradient(const TrainConfig& cfg, const Dataset& ds,
                                     std::span<const std::size_t> rows) {
  Model model = make_model(cfg, ds.node_feat_dim, ds.edge_feat_dim, ds.tasks());
  // Move off the zero biases / zero eps of a fresh init so every parameter
  // has a generic gradient.
  Rng rng(mix_seed(cfg.seed, 0x67726164));
  for (auto& p : model.params)
    for (double& v : p.value.data) v += rng.uniform(-0.1, 0.1);

  ClassWeights weights(ds.tasks());
  if (cfg.variant == Variant::BaselineReweight) weights = inverse_frequency_weights(ds.labels, rows);
  Mat frozen;
  const bool post = cfg.variant == Variant::Post;
  if (post) frozen = compute_posterior(model, ds, rows);
  const std::vector<std::size_t> batch(rows.begin(), rows.end());
  LossFn fn = [&](ParamStore&, bool with_grad) {
    return batch_loss(model, ds, batch, cfg, weights, with_grad, post ? &frozen : nullptr);
  };
  return grad_check(fn, model.params, 1e-5);
}

GradCheckReport run_gradcheck_suite(const TrainConfig& cfg) {
  struct LossCase {
    Variant variant;
    double lambda;
  };
  const LossCase losses[] = {{Variant::Pri, 0.0},          {Variant::Post, 0.0},
                             {Variant::Post, 1.0},         {Variant::Post, 10.0},
                             {Variant::MeanMix, 0.0},      {Variant::BaselineBce, 0.0},
                             {Variant::BaselineFocal, 0.0}, {Variant::BaselineReweight, 0.0}};
  GradCheckReport rep;
  for (std::size_t seed = 0; seed < cfg.gradcheck_seeds; ++seed) {
    SynthSpec spec;
    spec.n = 4;
    spec.positive_ratio = 0.25;
    spec.min_nodes = 4;
    spec.max_nodes = 7;
    spec.noise = 0.3;
    spec.seed = seed;
    const Dataset ds = synth_generate(spec);
    const std::vector<std::size_t> rows = {0, 1, 2, 3};
    for (BackboneKind kind : {BackboneKind::GCN, BackboneKind::GIN}) {
      for (std::size_t m : {std::size_t{1}, std::size_t{3}}) {
        for (const auto& lc : losses) {
          TrainConfig c = cfg;
          c.variant = lc.variant;
          c.lambda = lc.lambda;
          c.backbone = kind;
          c.experts = m;
          c.hidden_dim = cfg.gradcheck_dim;
          c.layers = cfg.gradcheck_layers;
          c.seed = seed;
          c.gate_mode = GateMode::SingleTask;
          const auto r = check_model_gradient(c, ds, rows);
          GradCheckCase gc;
          gc.label = std::string(variant_name(lc.variant)) +
                     (lc.variant == Variant::Post ? " lambda=" + std::to_string(lc.lambda).substr(0, 4) : "") +
                     " " + std::string(backbone_name(kind)) + " M=" + std::to_string(m) +
                     " seed=" + std::to_string(seed);
          gc.max_rel_error = r.max_rel_error;
          gc.passed = r.max_rel_error < cfg.gradcheck_tolerance;
          rep.worst = std::max(rep.worst, r.max_rel_error);
          rep.passed = rep.passed && gc.passed;
          rep.cases.push_back(std::move(gc));
        }
      }
    }
  }
  return rep;
}

}  // namespace graphdive
