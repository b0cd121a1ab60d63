#include "graphdive/params.hpp"

#include <cmath>
#include <stdexcept>

#include "graphdive/rng.hpp"

namespace graphdive {

std::size_t ParamStore::add(std::string name, Mat value) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  const std::size_t idx = params_.size();
  index_.emplace(name, idx);
  Mat grad(value.rows, value.cols);
  params_.push_back({std::move(name), std::move(value), std::move(grad)});
  return idx;
}

std::size_t ParamStore::add_glorot(std::string name, std::size_t fan_in, std::size_t fan_out,
                                   Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Mat w(fan_in, fan_out);
  for (double& x : w.data) x = rng.uniform(-a, a);
  return add(std::move(name), std::move(w));
}

std::size_t ParamStore::add_zeros(std::string name, std::size_t rows, std::size_t cols) {
  return add(std::move(name), Mat(rows, cols));
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name) return false;
    if (!params_[i].value.same_shape(other.params_[i].value)) return false;
  }
  return true;
}

void ParamStore::assign_values(const ParamStore& other) {
  if (!same_layout(other)) throw std::invalid_argument("assign_values: layout mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
}

AdamState AdamState::init(const ParamStore& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.rows, p.value.cols);
    s.v.emplace_back(p.value.rows, p.value.cols);
  }
  return s;
}

void adam_step(ParamStore& params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.grad.same_shape(p.value) || !state.m[i].same_shape(p.value) ||
        !state.v[i].same_shape(p.value))
      throw std::invalid_argument("adam_step: shape mismatch for " + p.name);
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad.data[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value.data[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace graphdive
