#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "graphdive/autodiff.hpp"
#include "graphdive/gnn.hpp"
#include "graphdive/params.hpp"

namespace graphdive {

class Rng;

// single_task: T = 1, one gate. shared: one gate reused by every task.
// individual: one gate (d x M prototypes) per task.
enum class GateMode { SingleTask, Shared, Individual };
std::string_view gate_mode_name(GateMode m);
GateMode parse_gate_mode(std::string_view s);

struct HeadSpec {
  std::size_t experts = 1;  // M
  std::size_t tasks = 1;    // T
  std::size_t dim = 0;      // d
  double temperature = 1.0;
  GateMode gate_mode = GateMode::SingleTask;
  bool gate_bias = false;
  // Scores the length-normalized embedding against length-normalized
  // prototypes instead of the raw inner product.
  bool cosine_gate = false;

  std::size_t num_gates() const { return gate_mode == GateMode::Individual ? tasks : 1; }
  ad::Layout gate_layout() const {
    return gate_mode == GateMode::Individual ? ad::Layout::TaskMajor : ad::Layout::Shared;
  }
  void validate() const;
};

// Registers experts first ("moe.expert{z}.w" d x T, ".b" 1 x T), then gates
// ("moe.gate.w" or "moe.gate{t}.w", d x M; optional matching ".b" 1 x M).
void register_head(const HeadSpec& spec, ParamStore& params, Rng& rng);

struct HeadOutputs {
  ad::Var gates;         // B x (G*M), softmax(logits / tau) per gate block
  ad::Var log_gates;     // same layout, log-softmax
  ad::Var expert_probs;  // B x (M*T), ExpertMajor: column z*T + t
};

HeadOutputs head_forward(ad::Var x, const HeadSpec& spec, ParamBinding& bind);

// Per-sample views into evaluated head outputs.
std::span<const double> prior_row(const Mat& gates, const HeadSpec& spec, std::size_t b,
                                  std::size_t task);
double expert_prob(const Mat& probs, const HeadSpec& spec, std::size_t b, std::size_t z,
                   std::size_t task);

// Bayes posterior over experts from a prior and per-expert P(y=1), computed
// in log space with clipped likelihoods.
std::vector<double> bayes_posterior(std::span<const double> prior, std::span<const double> expert_p1,
                                    double y);

// B x (T*M) TaskMajor posterior for every present label (rows of masked
// entries are left zero and are never read).
Mat posterior_matrix(const Mat& gates, const Mat& probs, const Mat& labels, const Mat& mask,
                     const HeadSpec& spec);

// Mean over present (sample, task) pairs of -sum_z prior[z] log p(y | x, z).
ad::Var loss_pri(const HeadOutputs& out, const Mat& labels, const Mat& mask, const HeadSpec& spec);

// Mean over present pairs of -sum_z post[z] log p(y|x,z) + lambda KL(post || prior).
// `posterior` (B x T*M, TaskMajor) is a constant: gradients reach the experts
// through the first term and the gates only through -lambda sum_z post log prior.
ad::Var loss_post(const HeadOutputs& out, const Mat& labels, const Mat& mask, const Mat& posterior,
                  double lambda, const HeadSpec& spec);

// Cross-entropy of the arithmetic mean of expert predictions (gate ablation).
ad::Var loss_mean_mix(const HeadOutputs& out, const Mat& labels, const Mat& mask,
                      const HeadSpec& spec);

// ---------------------------------------------------------------------------
// Single-embedding evaluation. `x` is 1 x d; `task` is required in individual
// gate mode and must be < T whenever given.

std::vector<double> gate_prior(const Mat& x, const HeadSpec& spec, ParamStore& params,
                               std::optional<std::size_t> task);
// M x T matrix of P(y = 1 | z, x).
Mat expert_predict(const Mat& x, const HeadSpec& spec, ParamStore& params);
double mixture_predict(const Mat& x, const HeadSpec& spec, ParamStore& params, std::size_t task);
double mean_mix_predict(const Mat& x, const HeadSpec& spec, ParamStore& params, std::size_t task);
std::vector<double> posterior(const Mat& x, double y, const HeadSpec& spec, ParamStore& params,
                              std::size_t task);

struct ElboResult {
  double log_likelihood = 0.0;  // log sum_z prior[z] p(y|x,z)
  double lower_bound = 0.0;     // E_q log p(y|x,z) - KL(q || prior)
};

// Throws std::invalid_argument unless q is a probability vector over M
// experts (nonnegative, sums to 1 within 1e-10).
ElboResult elbo_probe(const Mat& x, double y, std::span<const double> q, const HeadSpec& spec,
                      ParamStore& params, std::size_t task);

// KL(p || q) with the 0 log 0 = 0 convention.
double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace graphdive
