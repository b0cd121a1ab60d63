#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "graphdive/mat.hpp"
#include "graphdive/params.hpp"

// Reverse-mode differentiation over dense matrices. A Tape records every op
// with a closure that pushes the output gradient back to its inputs; leaves
// bound to a ParamStore entry deposit their gradient there on backward().
namespace graphdive::ad {

class Tape;

class Var {
 public:
  Var() = default;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Mat& value() const;

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Mat value);
  Var leaf(Parameter& param);
  // Appends an op node. `back` is dropped when no input needs a gradient.
  Var record(Mat value, std::initializer_list<Var> inputs, Backward back);
  Var record(Mat value, const std::vector<Var>& inputs, Backward back);

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& value(Var v) const { return nodes_[v.id()].value; }
  // Output gradient of a node during backward (empty if nothing flowed in).
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  // Zero-initialized on first use.
  Mat& grad_accumulator(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable parameter's
  // grad. Throws std::domain_error on a non-finite or non-scalar loss.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward back;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

// Column layouts for (task t, expert z) blocks with M experts and T tasks.
enum class Layout {
  ExpertMajor,  // z * T + t   (expert predictions)
  TaskMajor,    // t * M + z   (per-task gates, posteriors)
  Shared,       // z           (one gate reused by every task)
};
std::size_t column(Layout layout, std::size_t z, std::size_t t, std::size_t M, std::size_t T);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
// a + 1 * row, row is 1 x cols.
Var add_row(Var a, Var row);
// a * s, s is a 1 x 1 node.
Var scale_by(Var a, Var s);
Var relu(Var a);
Var sigmoid(Var a);
Var sum(Var a);

// out[i] = a[idx[i]]
Var gather_rows(Var a, std::vector<std::size_t> idx);
// out[dst[i]] += coef[i] * a[i], out has out_rows rows.
Var scatter_rows(Var a, std::vector<std::size_t> dst, std::vector<double> coef,
                 std::size_t out_rows);
// out[i] = coef[i] * a[i]
Var row_scale(Var a, std::vector<double> coef);
// Mean of the rows sharing a segment id; every segment must be non-empty.
Var segment_mean(Var a, std::vector<std::size_t> segment, std::size_t num_segments);
Var concat_cols(const std::vector<Var>& parts);

// Row-wise softmax(a / tau) over consecutive column blocks of width `block`.
Var softmax_blocks(Var a, std::size_t block, double tau);
Var log_softmax_blocks(Var a, std::size_t block, double tau);
Var normalize_rows(Var a);
Var normalize_cols(Var a);

// y log q + (1-y) log(1-q) with q clipped to [1e-12, 1-1e-12]. q has k*T
// columns; column c reads label column c % T.
Var bernoulli_loglik(Var q, const Mat& labels);
// out[b, t] = mean_z q[b, z*T + t]
Var expert_mean(Var q, std::size_t M, std::size_t T);
// -(1 - p_t)^gamma log p_t elementwise, p_t the clipped true-class probability.
Var focal_terms(Var q, const Mat& labels, double gamma);
// out[b, t] = sum_z w[b, col(wl, z, t)] * v[b, col(vl, z, t)]
Var expert_dot(Var w, Layout wl, Var v, Layout vl, std::size_t M, std::size_t T);
// sum(mask * a) / sum(mask); mask entries are 0 or 1.
Var masked_mean(Var a, const Mat& mask);

}  // namespace graphdive::ad
