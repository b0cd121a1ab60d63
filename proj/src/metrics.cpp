#include "graphdive/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "graphdive/baselines.hpp"

namespace graphdive {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // ranks i+1 .. j+1 share their average
    const double avg_rank = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0.0) {
        pos += 1.0;
        rank_sum += avg_rank;
      }
    }
    i = j + 1;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  const double u = rank_sum - pos * (pos + 1.0) / 2.0;
  return u / (pos * neg);
}

ClassAccuracy class_accuracy(std::span<const double> probs, std::span<const double> labels,
                             int minority_class, double threshold) {
  if (probs.size() != labels.size()) throw std::invalid_argument("class_accuracy: length mismatch");
  std::size_t total[2] = {0, 0}, correct[2] = {0, 0};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int y = labels[i] != 0.0 ? 1 : 0;
    const int pred = probs[i] >= threshold ? 1 : 0;
    ++total[y];
    if (pred == y) ++correct[y];
  }
  auto acc = [&](int c) -> std::optional<double> {
    if (total[c] == 0) return std::nullopt;
    return static_cast<double>(correct[c]) / static_cast<double>(total[c]);
  };
  const int minority = minority_class != 0 ? 1 : 0;
  return {acc(1 - minority), acc(minority)};
}

std::vector<int> minority_classes(const LabelSet& labels, std::span<const std::size_t> rows) {
  const auto stats = class_stats(labels, rows);
  std::vector<int> out(stats.size());
  for (std::size_t t = 0; t < stats.size(); ++t)
    out[t] = stats[t].positives <= stats[t].negatives ? 1 : 0;
  return out;
}

namespace {

std::optional<double> mean_defined(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

}  // namespace

EvalReport evaluate_predictions(const Mat& probs, const LabelSet& labels,
                                std::span<const std::size_t> rows,
                                std::span<const int> minority_class, double threshold) {
  if (probs.rows != rows.size() || probs.cols != labels.tasks())
    throw std::invalid_argument("evaluate_predictions: shape mismatch");
  if (minority_class.size() != labels.tasks())
    throw std::invalid_argument("evaluate_predictions: minority class per task required");
  EvalReport rep;
  std::vector<std::optional<double>> aucs, mins, majs;
  double acc_sum = 0.0, ce_sum = 0.0;
  for (std::size_t t = 0; t < labels.tasks(); ++t) {
    std::vector<double> p, y;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!labels.present(rows[i], t)) continue;
      p.push_back(probs(i, t));
      y.push_back(labels.values(rows[i], t));
    }
    TaskReport tr;
    tr.count = p.size();
    tr.minority_class = minority_class[t];
    tr.roc_auc = roc_auc(p, y);
    const auto ca = class_accuracy(p, y, minority_class[t], threshold);
    tr.majority_accuracy = ca.majority;
    tr.minority_accuracy = ca.minority;
    std::size_t correct = 0;
    double ce = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if ((p[i] >= threshold ? 1.0 : 0.0) == y[i]) ++correct;
      ce += bce(p[i], y[i]);
    }
    if (!p.empty()) {
      tr.accuracy = static_cast<double>(correct) / static_cast<double>(p.size());
      tr.cross_entropy = ce / static_cast<double>(p.size());
    }
    aucs.push_back(tr.roc_auc);
    mins.push_back(tr.minority_accuracy);
    majs.push_back(tr.majority_accuracy);
    acc_sum += tr.accuracy;
    ce_sum += tr.cross_entropy;
    rep.tasks.push_back(tr);
  }
  rep.mean_auc = mean_defined(aucs);
  rep.mean_minority_accuracy = mean_defined(mins);
  rep.mean_majority_accuracy = mean_defined(majs);
  const double T = static_cast<double>(labels.tasks());
  rep.mean_accuracy = acc_sum / T;
  rep.mean_cross_entropy = ce_sum / T;
  return rep;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return r;
}

std::size_t ExpertUsage::argmax_expert(int cls) const {
  const auto row = weights.row(static_cast<std::size_t>(cls));
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

ExpertUsage expert_usage(const Mat& gates, std::span<const double> labels,
                         std::span<const bool> present) {
  if (gates.rows != labels.size() || labels.size() != present.size())
    throw std::invalid_argument("expert_usage: length mismatch");
  ExpertUsage u;
  u.experts = gates.cols;
  u.weights = Mat(2, gates.cols);
  for (std::size_t i = 0; i < gates.rows; ++i) {
    if (!present[i]) continue;
    const std::size_t c = labels[i] != 0.0 ? 1 : 0;
    ++u.count[c];
    for (std::size_t z = 0; z < gates.cols; ++z) u.weights(c, z) += gates(i, z);
  }
  for (std::size_t c = 0; c < 2; ++c)
    if (u.count[c] > 0)
      for (double& w : u.weights.row(c)) w /= static_cast<double>(u.count[c]);
  u.dominant_class.assign(gates.cols, -1);
  for (std::size_t z = 0; z < gates.cols; ++z) {
    if (u.count[0] == 0 && u.count[1] == 0) continue;
    if (u.count[1] == 0) {
      u.dominant_class[z] = 0;
    } else if (u.count[0] == 0) {
      u.dominant_class[z] = 1;
    } else {
      u.dominant_class[z] = u.weights(1, z) > u.weights(0, z) ? 1 : 0;
    }
  }
  return u;
}

}  // namespace graphdive
