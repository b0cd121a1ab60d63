#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "graphdive/autodiff.hpp"
#include "graphdive/graph.hpp"

namespace graphdive {

// -[y log p + (1-y) log(1-p)], p clipped to [1e-12, 1-1e-12].
double bce(double p, double y);
// -(1 - p_t)^gamma log p_t, p_t the clipped probability of the true class.
double focal(double p, double y, double gamma);

struct TaskWeights {
  double positive = 1.0;
  double negative = 1.0;
  // Set when a class has no present label; weights are then left at 1.
  bool degenerate = false;
};
using ClassWeights = std::vector<TaskWeights>;

// weight_c = n_present / (2 * count_c) per task over the given rows.
ClassWeights inverse_frequency_weights(const LabelSet& labels, std::span<const std::size_t> rows);
ClassWeights inverse_frequency_weights(const LabelSet& labels);

// Batch losses over B x T predicted probabilities, averaged over present labels.
ad::Var loss_bce(ad::Var probs, const Mat& labels, const Mat& mask);
ad::Var loss_focal(ad::Var probs, const Mat& labels, const Mat& mask, double gamma);
ad::Var loss_reweighted(ad::Var probs, const Mat& labels, const Mat& mask,
                        const ClassWeights& weights);

}  // namespace graphdive
