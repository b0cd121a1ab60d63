#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "graphdive/baselines.hpp"
#include "graphdive/gnn.hpp"
#include "graphdive/gradcheck.hpp"
#include "graphdive/graph.hpp"
#include "graphdive/metrics.hpp"
#include "graphdive/moe.hpp"
#include "graphdive/params.hpp"

namespace graphdive {

enum class Variant { Pri, Post, MeanMix, BaselineBce, BaselineFocal, BaselineReweight };
std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view s);
bool is_baseline(Variant v);

enum class SplitStrategy { Dataset, Provided, RandomStratified };
std::string_view split_strategy_name(SplitStrategy s);
SplitStrategy parse_split_strategy(std::string_view s);

struct TrainConfig {
  Variant variant = Variant::Pri;
  std::size_t experts = 3;
  double lambda = 0.1;
  double temperature = 1.0;
  BackboneKind backbone = BackboneKind::GCN;
  std::size_t hidden_dim = 64;
  std::size_t layers = 5;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  GateMode gate_mode = GateMode::SingleTask;
  bool gate_bias = false;
  bool cosine_gate = false;
  double focal_gamma = 2.0;

  // Dataset: use the split tags stored with the data. Provided: read an
  // "index split" file. RandomStratified: stratify on task 0 with the ratios.
  SplitStrategy split = SplitStrategy::Dataset;
  std::string split_file;
  double split_train = 0.8;
  double split_valid = 0.1;
  double split_test = 0.1;

  std::vector<std::size_t> grid_experts = {2, 3, 4, 5, 6, 7, 8};
  std::vector<double> grid_lambda = {0.001, 0.01, 0.1, 1.0, 10.0};
  std::vector<std::uint64_t> sweep_seeds = {0};

  std::size_t gradcheck_dim = 8;
  std::size_t gradcheck_layers = 2;
  std::size_t gradcheck_seeds = 5;
  double gradcheck_tolerance = 1e-4;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Model {
  BackboneSpec backbone;
  HeadSpec head;
  ParamStore params;
};

// Baseline variants always get a single expert. Initialization draws the
// backbone, then the experts, then the gates from Rng(seed).
Model make_model(const TrainConfig& cfg, std::size_t node_feat_dim, std::size_t edge_feat_dim,
                 std::size_t tasks);

struct LabelBatch {
  Mat labels;  // B x T
  Mat mask;    // B x T
};
LabelBatch make_label_batch(const LabelSet& labels, std::span<const std::size_t> rows);

// Loss of one mini-batch for the configured variant. With `with_grad` the
// gradient is accumulated into model.params (callers zero it first). For the
// post variant `frozen_posterior` supplies the E-step weights; when null they
// are computed from the current parameters. Returns NaN if no label in the
// batch is present.
double batch_loss(Model& model, const Dataset& ds, std::span<const std::size_t> rows,
                  const TrainConfig& cfg, const ClassWeights& weights, bool with_grad,
                  const Mat* frozen_posterior = nullptr);

// E-step on its own: B x (T*M) posterior under the current parameters.
Mat compute_posterior(Model& model, const Dataset& ds, std::span<const std::size_t> rows);

// n x T positive-class probabilities: prior-gated mixture for pri/post,
// arithmetic mean for mean_mix, the single expert for baselines.
Mat predict(Model& model, const Dataset& ds, std::span<const std::size_t> rows, Variant variant);
// n x M gate priors for one task.
Mat gate_weights(Model& model, const Dataset& ds, std::span<const std::size_t> rows, std::size_t task);

std::vector<Split> split_dataset(const Dataset& ds, SplitStrategy strategy, double train,
                                 double valid, double test, std::uint64_t seed,
                                 const std::string& split_file = {});

struct EpochRecord {
  double train_loss = 0.0;
  std::optional<double> valid_auc;
  double seconds = 0.0;  // wall clock, excluded from equality
  friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
    return a.train_loss == b.train_loss && a.valid_auc == b.valid_auc;
  }
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> best_epoch;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct Checkpoint {
  TrainConfig config;
  std::size_t node_feat_dim = 0;
  std::size_t edge_feat_dim = 0;
  std::size_t tasks = 0;
  std::size_t epoch = 0;  // completed epochs
  ParamStore params;      // state after `epoch` epochs
  AdamState adam;
  ParamStore best_params;  // parameters of history.best_epoch
  TrainHistory history;

  // Model skeleton holding `params` (or best_params).
  Model model(bool best = true) const;
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochRecord&)>;

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t batches = 0;
};

// One pass over `train_rows` in a seed-and-epoch-determined order. For the
// post variant each mini-batch runs the E-step (posterior under the current
// parameters, then frozen) followed by one Adam step on the KL-regularized loss.
EpochStats train_epoch(Model& model, AdamState& adam, const Dataset& ds,
                       std::span<const std::size_t> train_rows, const TrainConfig& cfg,
                       const ClassWeights& weights, std::size_t epoch);
// train_epoch restricted to the post variant.
EpochStats em_epoch(Model& model, AdamState& adam, const Dataset& ds,
                    std::span<const std::size_t> train_rows, const TrainConfig& cfg,
                    std::size_t epoch);

// Returns the final state; best_params/history.best_epoch hold the
// best-validation model.
Checkpoint train(const TrainConfig& cfg, const Dataset& ds, const EpochCallback& on_epoch = {});
// Continues a checkpoint up to `total_epochs`.
Checkpoint resume(const Checkpoint& from, const Dataset& ds, std::size_t total_epochs,
                  const EpochCallback& on_epoch = {});

// Evaluation of best_params on one split; minority classes come from the
// dataset's training split.
EvalReport evaluate(const Checkpoint& ckpt, const Dataset& ds, Split split);
// Per-task expert usage of best_params on one split.
std::vector<ExpertUsage> analyze_experts(const Checkpoint& ckpt, const Dataset& ds, Split split);

struct SweepCell {
  std::size_t experts = 0;
  double lambda = 0.0;
  std::vector<double> valid_auc;  // per seed, best epoch
  std::vector<double> test_auc;   // per seed, best_params
  MeanStd valid;
  MeanStd test;
  friend bool operator==(const SweepCell& a, const SweepCell& b) {
    return a.experts == b.experts && a.lambda == b.lambda && a.valid_auc == b.valid_auc &&
           a.test_auc == b.test_auc;
  }
};

struct SweepResult {
  std::vector<SweepCell> cells;  // experts-major, then lambda, in grid order
  std::size_t best = 0;
  friend bool operator==(const SweepResult&, const SweepResult&) = default;
};

// Trains every (M, lambda) cell for every seed in cfg.sweep_seeds. Best cell:
// highest mean validation AUC, ties to smaller M, then smaller lambda. Cells
// run on up to `threads` workers; results do not depend on the thread count.
SweepResult sweep(const TrainConfig& cfg, const Dataset& ds, std::size_t threads = 1);

struct GradCheckCase {
  std::string label;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double worst = 0.0;
  bool passed = true;
};

// Finite-difference check of the model-level gradient for one configuration
// on the given rows. The post variant freezes its posterior at the base point.
GradCheckResult check_model_gradient(const TrainConfig& cfg, const Dataset& ds,
                                     std::span<const std::size_t> rows);

// Every loss variant (pri; post with lambda in {0, 1, 10}; bce; focal;
// reweight) x {GCN, GIN} x M in {1, 3} on 4-graph batches with the
// gradcheck_* sizes from cfg, over cfg.gradcheck_seeds seeds.
GradCheckReport run_gradcheck_suite(const TrainConfig& cfg);

}  // namespace graphdive
