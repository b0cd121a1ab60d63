#include "graphdive/moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "graphdive/numerics.hpp"
#include "graphdive/rng.hpp"

namespace graphdive {

std::string_view gate_mode_name(GateMode m) {
  switch (m) {
    case GateMode::SingleTask: return "single_task";
    case GateMode::Shared: return "shared";
    case GateMode::Individual: return "individual";
  }
  return "single_task";
}

GateMode parse_gate_mode(std::string_view s) {
  if (s == "single_task") return GateMode::SingleTask;
  if (s == "shared") return GateMode::Shared;
  if (s == "individual") return GateMode::Individual;
  throw std::invalid_argument("unknown gate mode '" + std::string(s) + "'");
}

void HeadSpec::validate() const {
  if (experts == 0) throw std::invalid_argument("head: expert count must be >= 1");
  if (tasks == 0) throw std::invalid_argument("head: task count must be >= 1");
  if (dim == 0) throw std::invalid_argument("head: embedding dim must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw std::invalid_argument("head: temperature must be > 0");
  if (gate_mode == GateMode::SingleTask && tasks != 1)
    throw std::invalid_argument("head: single_task gate mode needs exactly one task");
}

namespace {

std::string expert_key(std::size_t z, const char* suffix) {
  return "moe.expert" + std::to_string(z) + "." + suffix;
}

std::string gate_key(const HeadSpec& spec, std::size_t g, const char* suffix) {
  if (spec.gate_mode != GateMode::Individual) return std::string("moe.gate.") + suffix;
  return "moe.gate" + std::to_string(g) + "." + suffix;
}

double bernoulli_ll(double p1, double y) {
  return y * std::log(clip_prob(p1)) + (1.0 - y) * std::log(clip_prob(1.0 - p1));
}

void check_label(double y) {
  if (y != 0.0 && y != 1.0) throw std::invalid_argument("label must be 0 or 1");
}

}  // namespace

void register_head(const HeadSpec& spec, ParamStore& params, Rng& rng) {
  spec.validate();
  for (std::size_t z = 0; z < spec.experts; ++z) {
    params.add_glorot(expert_key(z, "w"), spec.dim, spec.tasks, rng);
    params.add_zeros(expert_key(z, "b"), 1, spec.tasks);
  }
  for (std::size_t g = 0; g < spec.num_gates(); ++g) {
    params.add_glorot(gate_key(spec, g, "w"), spec.dim, spec.experts, rng);
    if (spec.gate_bias) params.add_zeros(gate_key(spec, g, "b"), 1, spec.experts);
  }
}

HeadOutputs head_forward(ad::Var x, const HeadSpec& spec, ParamBinding& bind) {
  spec.validate();
  if (x.value().cols != spec.dim) throw std::invalid_argument("head: embedding width mismatch");
  std::vector<ad::Var> expert_logits;
  expert_logits.reserve(spec.experts);
  for (std::size_t z = 0; z < spec.experts; ++z)
    expert_logits.push_back(ad::add_row(ad::matmul(x, bind(expert_key(z, "w"))), bind(expert_key(z, "b"))));

  const ad::Var gate_in = spec.cosine_gate ? ad::normalize_rows(x) : x;
  std::vector<ad::Var> gate_logits;
  for (std::size_t g = 0; g < spec.num_gates(); ++g) {
    ad::Var w = bind(gate_key(spec, g, "w"));
    if (spec.cosine_gate) w = ad::normalize_cols(w);
    ad::Var logits = ad::matmul(gate_in, w);
    if (spec.gate_bias) logits = ad::add_row(logits, bind(gate_key(spec, g, "b")));
    gate_logits.push_back(logits);
  }
  const ad::Var logits = ad::concat_cols(gate_logits);

  HeadOutputs out;
  out.expert_probs = ad::sigmoid(ad::concat_cols(expert_logits));
  out.gates = ad::softmax_blocks(logits, spec.experts, spec.temperature);
  out.log_gates = ad::log_softmax_blocks(logits, spec.experts, spec.temperature);
  return out;
}

std::span<const double> prior_row(const Mat& gates, const HeadSpec& spec, std::size_t b,
                                  std::size_t task) {
  const std::size_t off = spec.gate_mode == GateMode::Individual ? task * spec.experts : 0;
  return {&gates(b, off), spec.experts};
}

double expert_prob(const Mat& probs, const HeadSpec& spec, std::size_t b, std::size_t z,
                   std::size_t task) {
  return probs(b, z * spec.tasks + task);
}

std::vector<double> bayes_posterior(std::span<const double> prior, std::span<const double> expert_p1,
                                    double y) {
  if (prior.size() != expert_p1.size()) throw std::invalid_argument("posterior: size mismatch");
  std::vector<double> logw(prior.size());
  for (std::size_t z = 0; z < prior.size(); ++z)
    logw[z] = std::log(prior[z]) + bernoulli_ll(expert_p1[z], y);
  const double lse = log_sum_exp(logw);
  std::vector<double> post(prior.size());
  double total = 0.0;
  for (std::size_t z = 0; z < prior.size(); ++z) {
    post[z] = std::exp(logw[z] - lse);
    total += post[z];
  }
  for (double& p : post) p /= total;
  return post;
}

Mat posterior_matrix(const Mat& gates, const Mat& probs, const Mat& labels, const Mat& mask,
                     const HeadSpec& spec) {
  const std::size_t M = spec.experts, T = spec.tasks;
  Mat post(labels.rows, T * M);
  std::vector<double> p1(M);
  for (std::size_t b = 0; b < labels.rows; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      if (mask(b, t) == 0.0) continue;
      for (std::size_t z = 0; z < M; ++z) p1[z] = expert_prob(probs, spec, b, z, t);
      const auto w = bayes_posterior(prior_row(gates, spec, b, t), p1, labels(b, t));
      std::copy(w.begin(), w.end(), &post(b, t * M));
    }
  }
  return post;
}

ad::Var loss_pri(const HeadOutputs& out, const Mat& labels, const Mat& mask, const HeadSpec& spec) {
  const ad::Var ll = ad::bernoulli_loglik(out.expert_probs, labels);
  const ad::Var expected =
      ad::expert_dot(out.gates, spec.gate_layout(), ll, ad::Layout::ExpertMajor, spec.experts, spec.tasks);
  return ad::masked_mean(ad::scale(expected, -1.0), mask);
}

ad::Var loss_post(const HeadOutputs& out, const Mat& labels, const Mat& mask, const Mat& posterior,
                  double lambda, const HeadSpec& spec) {
  if (lambda < 0.0) throw std::invalid_argument("loss_post: lambda must be >= 0");
  const std::size_t M = spec.experts, T = spec.tasks;
  if (posterior.rows != labels.rows || posterior.cols != T * M)
    throw std::invalid_argument("loss_post: posterior shape mismatch");
  ad::Tape& tape = *out.expert_probs.tape();
  const ad::Var post = tape.constant(posterior);
  const ad::Var ll = ad::bernoulli_loglik(out.expert_probs, labels);
  const ad::Var fit = ad::expert_dot(post, ad::Layout::TaskMajor, ll, ad::Layout::ExpertMajor, M, T);
  const ad::Var cross =
      ad::expert_dot(post, ad::Layout::TaskMajor, out.log_gates, spec.gate_layout(), M, T);
  // lambda * sum_z post log post: constant part of the KL term.
  Mat neg_entropy(labels.rows, T);
  for (std::size_t b = 0; b < labels.rows; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      if (mask(b, t) == 0.0) continue;
      double s = 0.0;
      for (std::size_t z = 0; z < M; ++z) {
        const double p = posterior(b, t * M + z);
        if (p > 0.0) s += p * std::log(p);
      }
      neg_entropy(b, t) = lambda * s;
    }
  }
  const ad::Var per_pair =
      ad::add(ad::add(ad::scale(fit, -1.0), ad::scale(cross, -lambda)), tape.constant(std::move(neg_entropy)));
  return ad::masked_mean(per_pair, mask);
}

ad::Var loss_mean_mix(const HeadOutputs& out, const Mat& labels, const Mat& mask,
                      const HeadSpec& spec) {
  const ad::Var mean = ad::expert_mean(out.expert_probs, spec.experts, spec.tasks);
  return ad::masked_mean(ad::scale(ad::bernoulli_loglik(mean, labels), -1.0), mask);
}

namespace {

struct SingleEval {
  Mat gates;
  Mat log_gates;
  Mat probs;
};

SingleEval evaluate_single(const Mat& x, const HeadSpec& spec, ParamStore& params) {
  if (x.rows != 1) throw std::invalid_argument("head: expected a single 1 x d embedding");
  ad::Tape tape;
  ParamBinding bind(tape, params, false);
  const auto out = head_forward(tape.constant(x), spec, bind);
  return {out.gates.value(), out.log_gates.value(), out.expert_probs.value()};
}

std::size_t resolve_task(const HeadSpec& spec, std::optional<std::size_t> task) {
  if (task && *task >= spec.tasks) throw std::out_of_range("task index out of range");
  if (!task && spec.gate_mode == GateMode::Individual)
    throw std::invalid_argument("individual gate mode needs a task index");
  return task.value_or(0);
}

std::vector<double> expert_p1(const Mat& probs, const HeadSpec& spec, std::size_t task) {
  std::vector<double> p(spec.experts);
  for (std::size_t z = 0; z < spec.experts; ++z) p[z] = expert_prob(probs, spec, 0, z, task);
  return p;
}

}  // namespace

std::vector<double> gate_prior(const Mat& x, const HeadSpec& spec, ParamStore& params,
                               std::optional<std::size_t> task) {
  const std::size_t t = resolve_task(spec, task);
  const auto ev = evaluate_single(x, spec, params);
  const auto row = prior_row(ev.gates, spec, 0, t);
  return {row.begin(), row.end()};
}

Mat expert_predict(const Mat& x, const HeadSpec& spec, ParamStore& params) {
  const auto ev = evaluate_single(x, spec, params);
  Mat out(spec.experts, spec.tasks);
  for (std::size_t z = 0; z < spec.experts; ++z)
    for (std::size_t t = 0; t < spec.tasks; ++t) out(z, t) = expert_prob(ev.probs, spec, 0, z, t);
  return out;
}

double mixture_predict(const Mat& x, const HeadSpec& spec, ParamStore& params, std::size_t task) {
  const std::size_t t = resolve_task(spec, task);
  const auto ev = evaluate_single(x, spec, params);
  const auto prior = prior_row(ev.gates, spec, 0, t);
  double p = 0.0;
  for (std::size_t z = 0; z < spec.experts; ++z) p += prior[z] * expert_prob(ev.probs, spec, 0, z, t);
  return p;
}

double mean_mix_predict(const Mat& x, const HeadSpec& spec, ParamStore& params, std::size_t task) {
  const std::size_t t = resolve_task(spec, task);
  const auto ev = evaluate_single(x, spec, params);
  double s = 0.0;
  for (std::size_t z = 0; z < spec.experts; ++z) s += expert_prob(ev.probs, spec, 0, z, t);
  return s * (1.0 / static_cast<double>(spec.experts));
}

std::vector<double> posterior(const Mat& x, double y, const HeadSpec& spec, ParamStore& params,
                              std::size_t task) {
  check_label(y);
  const std::size_t t = resolve_task(spec, task);
  const auto ev = evaluate_single(x, spec, params);
  return bayes_posterior(prior_row(ev.gates, spec, 0, t), expert_p1(ev.probs, spec, t), y);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return kl;
}

ElboResult elbo_probe(const Mat& x, double y, std::span<const double> q, const HeadSpec& spec,
                      ParamStore& params, std::size_t task) {
  check_label(y);
  if (q.size() != spec.experts) throw std::invalid_argument("elbo_probe: q must have M entries");
  double total = 0.0;
  for (double v : q) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("elbo_probe: q must be nonnegative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-10) throw std::invalid_argument("elbo_probe: q must sum to 1");

  const std::size_t t = resolve_task(spec, task);
  const auto ev = evaluate_single(x, spec, params);
  const auto log_prior = prior_row(ev.log_gates, spec, 0, t);
  std::vector<double> ll(spec.experts), joint(spec.experts);
  for (std::size_t z = 0; z < spec.experts; ++z) {
    ll[z] = bernoulli_ll(expert_prob(ev.probs, spec, 0, z, t), y);
    joint[z] = log_prior[z] + ll[z];
  }
  ElboResult r;
  r.log_likelihood = log_sum_exp(joint);
  double expected = 0.0, kl = 0.0;
  for (std::size_t z = 0; z < spec.experts; ++z) {
    if (q[z] <= 0.0) continue;
    expected += q[z] * ll[z];
    kl += q[z] * (std::log(q[z]) - log_prior[z]);
  }
  r.lower_bound = expected - kl;
  return r;
}

}  // namespace graphdive
