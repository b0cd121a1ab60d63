#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "graphdive/mat.hpp"

namespace graphdive {

class Rng;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
};

// Named parameters in insertion order. Each parameter carries a gradient
// accumulator of the same shape.
class ParamStore {
 public:
  std::size_t add(std::string name, Mat value);
  // Glorot-uniform init, a = sqrt(6 / (fan_in + fan_out)).
  std::size_t add_glorot(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  std::size_t add_zeros(std::string name, std::size_t rows, std::size_t cols);

  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(std::string_view name) { return params_[index_of(name)]; }
  const Parameter& at(std::string_view name) const { return params_[index_of(name)]; }

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  // Same names, same shapes, same order.
  bool same_layout(const ParamStore& other) const;
  // Copies values (not gradients) from a store with the same layout.
  void assign_values(const ParamStore& other);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;

  static AdamState init(const ParamStore& params, AdamConfig config);
};

// One bias-corrected Adam update using the gradients stored in `params`.
void adam_step(ParamStore& params, AdamState& state);

}  // namespace graphdive
