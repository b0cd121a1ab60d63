#include "graphdive/baselines.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "graphdive/numerics.hpp"

namespace graphdive {

double bce(double p, double y) {
  return -(y * std::log(clip_prob(p)) + (1.0 - y) * std::log(clip_prob(1.0 - p)));
}

double focal(double p, double y, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("focal: gamma must be >= 0");
  const double pt = clip_prob(y > 0.5 ? p : 1.0 - p);
  return -std::pow(1.0 - pt, gamma) * std::log(pt);
}

ClassWeights inverse_frequency_weights(const LabelSet& labels, std::span<const std::size_t> rows) {
  const auto stats = class_stats(labels, rows);
  ClassWeights w(stats.size());
  for (std::size_t t = 0; t < stats.size(); ++t) {
    const auto& s = stats[t];
    if (s.positives == 0 || s.negatives == 0) {
      w[t].degenerate = true;
      continue;
    }
    const double n = static_cast<double>(s.positives + s.negatives);
    w[t].positive = n / (2.0 * static_cast<double>(s.positives));
    w[t].negative = n / (2.0 * static_cast<double>(s.negatives));
  }
  return w;
}

ClassWeights inverse_frequency_weights(const LabelSet& labels) {
  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), 0);
  return inverse_frequency_weights(labels, all);
}

ad::Var loss_bce(ad::Var probs, const Mat& labels, const Mat& mask) {
  return ad::masked_mean(ad::scale(ad::bernoulli_loglik(probs, labels), -1.0), mask);
}

ad::Var loss_focal(ad::Var probs, const Mat& labels, const Mat& mask, double gamma) {
  return ad::masked_mean(ad::focal_terms(probs, labels, gamma), mask);
}

ad::Var loss_reweighted(ad::Var probs, const Mat& labels, const Mat& mask,
                        const ClassWeights& weights) {
  if (weights.size() != labels.cols) throw std::invalid_argument("reweight: task count mismatch");
  Mat w(labels.rows, labels.cols);
  for (std::size_t b = 0; b < labels.rows; ++b)
    for (std::size_t t = 0; t < labels.cols; ++t)
      w(b, t) = labels(b, t) != 0.0 ? weights[t].positive : weights[t].negative;
  ad::Tape& tape = *probs.tape();
  const ad::Var ll = ad::bernoulli_loglik(probs, labels);
  return ad::masked_mean(ad::scale(ad::hadamard(ll, tape.constant(std::move(w))), -1.0), mask);
}

}  // namespace graphdive
