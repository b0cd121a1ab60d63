#pragma once

#include <span>
#include <vector>

namespace graphdive {

// Probabilities are clipped to [kProbFloor, 1 - kProbFloor] before any log.
inline constexpr double kProbFloor = 1e-12;

// softmax(logits / tau) via max subtraction. Throws on tau <= 0 or non-finite logits.
std::vector<double> stable_softmax(std::span<const double> logits, double tau);

// log(sum(exp(v))) with max shift. Empty input is -inf.
double log_sum_exp(std::span<const double> v);

// 1 / (1 + exp(-x)), evaluated without overflow and kept strictly inside (0, 1).
double sigmoid(double x);

double clip_prob(double p);

}  // namespace graphdive
