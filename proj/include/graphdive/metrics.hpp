#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "graphdive/graph.hpp"
#include "graphdive/mat.hpp"

namespace graphdive {

// Mann-Whitney AUC with half credit for ties, via average ranks in
// O(n log n). Empty when either class is absent.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const double> labels);

struct ClassAccuracy {
  std::optional<double> majority;
  std::optional<double> minority;
};

// Accuracy of thresholded predictions computed separately on each class.
// `minority_class` is the rarer label value on the training split.
ClassAccuracy class_accuracy(std::span<const double> probs, std::span<const double> labels,
                             int minority_class, double threshold = 0.5);

// Rarer label per task over the given (training) rows; ties pick 1.
std::vector<int> minority_classes(const LabelSet& labels, std::span<const std::size_t> rows);

struct TaskReport {
  std::optional<double> roc_auc;
  double accuracy = 0.0;
  std::optional<double> majority_accuracy;
  std::optional<double> minority_accuracy;
  double cross_entropy = 0.0;
  std::size_t count = 0;
  int minority_class = 1;
};

struct EvalReport {
  std::vector<TaskReport> tasks;
  // Unweighted mean over tasks whose value is defined.
  std::optional<double> mean_auc;
  std::optional<double> mean_minority_accuracy;
  std::optional<double> mean_majority_accuracy;
  double mean_accuracy = 0.0;
  double mean_cross_entropy = 0.0;
};

// probs is n x T (row i for rows[i]); labels indexed by dataset row.
EvalReport evaluate_predictions(const Mat& probs, const LabelSet& labels,
                                std::span<const std::size_t> rows,
                                std::span<const int> minority_class, double threshold = 0.5);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  std::size_t n = 0;
};
MeanStd mean_std(std::span<const double> values);

// Mean gate weight per (class, expert) for one task.
struct ExpertUsage {
  std::size_t experts = 0;
  Mat weights;  // 2 x M; row c averages the prior over samples of class c
  std::size_t count[2] = {0, 0};
  std::vector<int> dominant_class;  // per expert, argmax_c weights(c, z); -1 if no samples
  std::size_t argmax_expert(int cls) const;
};

// gates is n x M (row i for sample i); labels/present are per sample.
ExpertUsage expert_usage(const Mat& gates, std::span<const double> labels,
                         std::span<const bool> present);

}  // namespace graphdive
