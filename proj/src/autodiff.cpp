#include "graphdive/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "graphdive/numerics.hpp"

namespace graphdive::ad {

const Mat& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, {}, &param, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backward back) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw std::invalid_argument("ad: input belongs to another tape");
    needs = needs || nodes_[v.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(back) : Backward{}, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Mat value, const std::vector<Var>& inputs, Backward back) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw std::invalid_argument("ad: input belongs to another tape");
    needs = needs || nodes_[v.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(back) : Backward{}, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Mat& Tape::grad_accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && n.value.size() > 0) n.grad = Mat(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const Mat& lv = nodes_[loss.id()].value;
  if (lv.rows != 1 || lv.cols != 1) throw std::domain_error("backward: loss must be a 1x1 scalar");
  if (!std::isfinite(lv(0, 0))) throw std::domain_error("backward: non-finite loss");
  for (auto& n : nodes_) n.grad = Mat();
  grad_accumulator(loss.id())(0, 0) = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      auto& pg = n.param->grad.data;
      for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad.data[j];
    } else if (n.back) {
      n.back(*this, i);
    }
  }
}

std::size_t column(Layout layout, std::size_t z, std::size_t t, std::size_t M, std::size_t T) {
  switch (layout) {
    case Layout::ExpertMajor: return z * T + t;
    case Layout::TaskMajor: return t * M + z;
    case Layout::Shared: return z;
  }
  return 0;
}

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(std::string("ad: ") + what);
}

Tape& tape_of(Var a) {
  require(a.tape() != nullptr, "uninitialized Var");
  return *a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id(), ib = b.id();
  Mat out = graphdive::matmul(t.value(a), t.value(b));
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(ia)) matmul_nt_acc(g, t.value(ib), t.grad_accumulator(ia));
    if (t.needs_grad(ib)) matmul_tn_acc(t.value(ia), g, t.grad_accumulator(ib));
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require(t.value(a).same_shape(t.value(b)), "add: shape mismatch");
  Mat out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.needs_grad(id)) continue;
      auto& acc = t.grad_accumulator(id).data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  require(t.value(a).same_shape(t.value(b)), "sub: shape mismatch");
  Mat out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(ia)) {
      auto& acc = t.grad_accumulator(ia).data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i];
    }
    if (t.needs_grad(ib)) {
      auto& acc = t.grad_accumulator(ib).data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] -= g.data[i];
    }
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a);
  require(t.value(a).same_shape(t.value(b)), "hadamard: shape mismatch");
  Mat out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(ia)) {
      auto& acc = t.grad_accumulator(ia).data;
      const auto& bv = t.value(ib).data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      auto& acc = t.grad_accumulator(ib).data;
      const auto& av = t.value(ia).data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Mat out = t.value(a);
  for (double& v : out.data) v *= s;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    auto& acc = t.grad_accumulator(ia).data;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i] * s;
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  const Mat& rv = t.value(row);
  require(rv.rows == 1 && rv.cols == av.cols, "add_row: row must be 1 x cols");
  Mat out = av;
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += rv.data[j];
  const std::size_t ia = a.id(), ir = row.id();
  return t.record(std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(ia)) {
      auto& acc = t.grad_accumulator(ia).data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i];
    }
    if (t.needs_grad(ir)) {
      Mat& acc = t.grad_accumulator(ir);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) acc.data[j] += g(i, j);
    }
  });
}

Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a);
  require(t.value(s).rows == 1 && t.value(s).cols == 1, "scale_by: scalar must be 1x1");
  const double sv = t.value(s)(0, 0);
  Mat out = t.value(a);
  for (double& v : out.data) v *= sv;
  const std::size_t ia = a.id(), is = s.id();
  return t.record(std::move(out), {a, s}, [ia, is](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const double sv = t.value(is)(0, 0);
    if (t.needs_grad(ia)) {
      auto& acc = t.grad_accumulator(ia).data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i] * sv;
    }
    if (t.needs_grad(is)) {
      const auto& av = t.value(ia).data;
      double d = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) d += g.data[i] * av[i];
      t.grad_accumulator(is)(0, 0) += d;
    }
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Mat out = t.value(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const auto& x = t.value(ia).data;
    auto& acc = t.grad_accumulator(ia).data;
    for (std::size_t i = 0; i < acc.size(); ++i)
      if (x[i] > 0.0) acc[i] += g.data[i];
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Mat out = t.value(a);
  for (double& v : out.data) v = graphdive::sigmoid(v);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const auto& s = t.value(self).data;
    auto& acc = t.grad_accumulator(ia).data;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i] * s[i] * (1.0 - s[i]);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : t.value(a).data) s += v;
  Mat out(1, 1, s);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    for (double& v : t.grad_accumulator(ia).data) v += g;
  });
}

Var gather_rows(Var a, std::vector<std::size_t> idx) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  Mat out(idx.size(), av.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < av.rows, "gather_rows: index out of range");
    std::copy_n(av.data.begin() + idx[i] * av.cols, av.cols, out.data.begin() + i * av.cols);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    Mat& acc = t.grad_accumulator(ia);
    const std::size_t c = g.cols;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = acc.data.data() + idx[i] * c;
      const double* src = g.data.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Var scatter_rows(Var a, std::vector<std::size_t> dst, std::vector<double> coef,
                 std::size_t out_rows) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  require(dst.size() == av.rows && coef.size() == av.rows, "scatter_rows: length mismatch");
  Mat out(out_rows, av.cols);
  const std::size_t c = av.cols;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    require(dst[i] < out_rows, "scatter_rows: index out of range");
    double* o = out.data.data() + dst[i] * c;
    const double* s = av.data.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) o[j] += coef[i] * s[j];
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a},
                  [ia, dst = std::move(dst), coef = std::move(coef)](Tape& t, std::size_t self) {
                    const Mat& g = t.grad(self);
                    Mat& acc = t.grad_accumulator(ia);
                    const std::size_t c = g.cols;
                    for (std::size_t i = 0; i < dst.size(); ++i) {
                      double* o = acc.data.data() + i * c;
                      const double* s = g.data.data() + dst[i] * c;
                      for (std::size_t j = 0; j < c; ++j) o[j] += coef[i] * s[j];
                    }
                  });
}

Var row_scale(Var a, std::vector<double> coef) {
  Tape& t = tape_of(a);
  Mat out = t.value(a);
  require(coef.size() == out.rows, "row_scale: length mismatch");
  for (std::size_t i = 0; i < out.rows; ++i)
    for (double& v : out.row(i)) v *= coef[i];
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, coef = std::move(coef)](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    Mat& acc = t.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) acc(i, j) += coef[i] * g(i, j);
  });
}

Var segment_mean(Var a, std::vector<std::size_t> segment, std::size_t num_segments) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  require(segment.size() == av.rows, "segment_mean: length mismatch");
  std::vector<double> count(num_segments, 0.0);
  for (std::size_t s : segment) {
    require(s < num_segments, "segment_mean: segment out of range");
    count[s] += 1.0;
  }
  for (double c : count) require(c > 0.0, "segment_mean: empty segment");
  Mat out(num_segments, av.cols);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) out(segment[i], j) += av(i, j);
  for (std::size_t s = 0; s < num_segments; ++s)
    for (double& v : out.row(s)) v /= count[s];
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a},
                  [ia, segment = std::move(segment), count = std::move(count)](Tape& t,
                                                                               std::size_t self) {
                    const Mat& g = t.grad(self);
                    Mat& acc = t.grad_accumulator(ia);
                    for (std::size_t i = 0; i < acc.rows; ++i) {
                      const std::size_t s = segment[i];
                      for (std::size_t j = 0; j < acc.cols; ++j) acc(i, j) += g(s, j) / count[s];
                    }
                  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t rows = t.value(parts.front()).rows;
  std::size_t cols = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    require(t.value(p).rows == rows, "concat_cols: row mismatch");
    ids.push_back(p.id());
    offsets.push_back(cols);
    cols += t.value(p).cols;
  }
  Mat out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Mat& pv = t.value(parts[k]);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols; ++j) out(i, offsets[k] + j) = pv(i, j);
  }
  return t.record(std::move(out), parts,
                  [ids = std::move(ids), offsets = std::move(offsets)](Tape& t, std::size_t self) {
                    const Mat& g = t.grad(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!t.needs_grad(ids[k])) continue;
                      Mat& acc = t.grad_accumulator(ids[k]);
                      for (std::size_t i = 0; i < acc.rows; ++i)
                        for (std::size_t j = 0; j < acc.cols; ++j) acc(i, j) += g(i, offsets[k] + j);
                    }
                  });
}

Var softmax_blocks(Var a, std::size_t block, double tau) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  require(block > 0 && av.cols % block == 0, "softmax_blocks: width not a multiple of block");
  require(tau > 0.0, "softmax_blocks: tau must be > 0");
  Mat out(av.rows, av.cols);
  for (std::size_t i = 0; i < av.rows; ++i) {
    for (std::size_t b0 = 0; b0 < av.cols; b0 += block) {
      auto p = stable_softmax(std::span<const double>(&av(i, b0), block), tau);
      std::copy(p.begin(), p.end(), &out(i, b0));
    }
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, block, tau](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const Mat& p = t.value(self);
    Mat& acc = t.grad_accumulator(ia);
    for (std::size_t i = 0; i < p.rows; ++i) {
      for (std::size_t b0 = 0; b0 < p.cols; b0 += block) {
        double dot = 0.0;
        for (std::size_t j = b0; j < b0 + block; ++j) dot += p(i, j) * g(i, j);
        for (std::size_t j = b0; j < b0 + block; ++j) acc(i, j) += p(i, j) * (g(i, j) - dot) / tau;
      }
    }
  });
}

Var log_softmax_blocks(Var a, std::size_t block, double tau) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  require(block > 0 && av.cols % block == 0, "log_softmax_blocks: width not a multiple of block");
  require(tau > 0.0, "log_softmax_blocks: tau must be > 0");
  Mat out(av.rows, av.cols);
  std::vector<double> scaled(block);
  for (std::size_t i = 0; i < av.rows; ++i) {
    for (std::size_t b0 = 0; b0 < av.cols; b0 += block) {
      for (std::size_t j = 0; j < block; ++j) scaled[j] = av(i, b0 + j) / tau;
      const double lse = log_sum_exp(scaled);
      for (std::size_t j = 0; j < block; ++j) out(i, b0 + j) = scaled[j] - lse;
    }
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, block, tau](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const Mat& lp = t.value(self);
    Mat& acc = t.grad_accumulator(ia);
    for (std::size_t i = 0; i < lp.rows; ++i) {
      for (std::size_t b0 = 0; b0 < lp.cols; b0 += block) {
        double gs = 0.0;
        for (std::size_t j = b0; j < b0 + block; ++j) gs += g(i, j);
        for (std::size_t j = b0; j < b0 + block; ++j)
          acc(i, j) += (g(i, j) - std::exp(lp(i, j)) * gs) / tau;
      }
    }
  });
}

namespace {
constexpr double kNormFloor = 1e-12;
}

Var normalize_rows(Var a) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  Mat out = av;
  std::vector<double> norms(av.rows);
  for (std::size_t i = 0; i < av.rows; ++i) {
    double s = 0.0;
    for (double v : av.row(i)) s += v * v;
    norms[i] = std::max(std::sqrt(s), kNormFloor);
    for (double& v : out.row(i)) v /= norms[i];
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const Mat& y = t.value(self);
    Mat& acc = t.grad_accumulator(ia);
    for (std::size_t i = 0; i < y.rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) dot += y(i, j) * g(i, j);
      if (norms[i] == kNormFloor) dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) acc(i, j) += (g(i, j) - y(i, j) * dot) / norms[i];
    }
  });
}

Var normalize_cols(Var a) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  Mat out = av;
  std::vector<double> norms(av.cols, 0.0);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) norms[j] += av(i, j) * av(i, j);
  for (double& n : norms) n = std::max(std::sqrt(n), kNormFloor);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) out(i, j) /= norms[j];
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const Mat& y = t.value(self);
    Mat& acc = t.grad_accumulator(ia);
    std::vector<double> dot(y.cols, 0.0);
    for (std::size_t i = 0; i < y.rows; ++i)
      for (std::size_t j = 0; j < y.cols; ++j) dot[j] += y(i, j) * g(i, j);
    for (std::size_t j = 0; j < y.cols; ++j)
      if (norms[j] == kNormFloor) dot[j] = 0.0;
    for (std::size_t i = 0; i < y.rows; ++i)
      for (std::size_t j = 0; j < y.cols; ++j) acc(i, j) += (g(i, j) - y(i, j) * dot[j]) / norms[j];
  });
}

Var bernoulli_loglik(Var q, const Mat& labels) {
  Tape& t = tape_of(q);
  const Mat& qv = t.value(q);
  const std::size_t T = labels.cols;
  require(T > 0 && qv.rows == labels.rows && qv.cols % T == 0, "bernoulli_loglik: shape mismatch");
  Mat out(qv.rows, qv.cols);
  for (std::size_t i = 0; i < qv.rows; ++i) {
    for (std::size_t c = 0; c < qv.cols; ++c) {
      const double y = labels(i, c % T);
      const double p = clip_prob(qv(i, c));
      const double np = clip_prob(1.0 - qv(i, c));
      out(i, c) = y * std::log(p) + (1.0 - y) * std::log(np);
    }
  }
  const std::size_t iq = q.id();
  return t.record(std::move(out), {q}, [iq, labels](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const Mat& qv = t.value(iq);
    Mat& acc = t.grad_accumulator(iq);
    const std::size_t T = labels.cols;
    for (std::size_t i = 0; i < qv.rows; ++i) {
      for (std::size_t c = 0; c < qv.cols; ++c) {
        const double y = labels(i, c % T);
        const double x = qv(i, c);
        double d = 0.0;
        if (x >= kProbFloor && x <= 1.0 - kProbFloor) d += y / x;
        const double nx = 1.0 - x;
        if (nx >= kProbFloor && nx <= 1.0 - kProbFloor) d -= (1.0 - y) / nx;
        acc(i, c) += g(i, c) * d;
      }
    }
  });
}

Var expert_mean(Var q, std::size_t M, std::size_t T) {
  Tape& t = tape_of(q);
  const Mat& qv = t.value(q);
  require(M > 0 && qv.cols == M * T, "expert_mean: width must be M*T");
  const double inv = 1.0 / static_cast<double>(M);
  Mat out(qv.rows, T);
  for (std::size_t i = 0; i < qv.rows; ++i) {
    for (std::size_t tk = 0; tk < T; ++tk) {
      double s = 0.0;
      for (std::size_t z = 0; z < M; ++z) s += qv(i, z * T + tk);
      out(i, tk) = s * inv;
    }
  }
  const std::size_t iq = q.id();
  return t.record(std::move(out), {q}, [iq, M, T, inv](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    Mat& acc = t.grad_accumulator(iq);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t tk = 0; tk < T; ++tk)
        for (std::size_t z = 0; z < M; ++z) acc(i, z * T + tk) += g(i, tk) * inv;
  });
}

Var focal_terms(Var q, const Mat& labels, double gamma) {
  Tape& t = tape_of(q);
  const Mat& qv = t.value(q);
  require(qv.same_shape(labels), "focal_terms: shape mismatch");
  require(gamma >= 0.0, "focal_terms: gamma must be >= 0");
  Mat out(qv.rows, qv.cols);
  for (std::size_t i = 0; i < qv.size(); ++i) {
    const double y = labels.data[i];
    const double pt = clip_prob(y > 0.5 ? qv.data[i] : 1.0 - qv.data[i]);
    out.data[i] = -std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  const std::size_t iq = q.id();
  return t.record(std::move(out), {q}, [iq, labels, gamma](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const Mat& qv = t.value(iq);
    Mat& acc = t.grad_accumulator(iq);
    for (std::size_t i = 0; i < qv.size(); ++i) {
      const bool pos = labels.data[i] > 0.5;
      const double raw = pos ? qv.data[i] : 1.0 - qv.data[i];
      if (raw < kProbFloor || raw > 1.0 - kProbFloor) continue;
      const double one_minus = 1.0 - raw;
      double dfdp = -std::pow(one_minus, gamma) / raw;
      if (gamma != 0.0) dfdp += gamma * std::pow(one_minus, gamma - 1.0) * std::log(raw);
      acc.data[i] += g.data[i] * (pos ? dfdp : -dfdp);
    }
  });
}

Var expert_dot(Var w, Layout wl, Var v, Layout vl, std::size_t M, std::size_t T) {
  Tape& t = tape_of(w);
  const Mat& wv = t.value(w);
  const Mat& vv = t.value(v);
  require(wv.rows == vv.rows, "expert_dot: row mismatch");
  auto width = [M, T](Layout l) { return l == Layout::Shared ? M : M * T; };
  require(wv.cols == width(wl) && vv.cols == width(vl), "expert_dot: width mismatch");
  Mat out(wv.rows, T);
  for (std::size_t i = 0; i < wv.rows; ++i) {
    for (std::size_t tk = 0; tk < T; ++tk) {
      double s = 0.0;
      for (std::size_t z = 0; z < M; ++z)
        s += wv(i, column(wl, z, tk, M, T)) * vv(i, column(vl, z, tk, M, T));
      out(i, tk) = s;
    }
  }
  const std::size_t iw = w.id(), iv = v.id();
  return t.record(std::move(out), {w, v}, [iw, iv, wl, vl, M, T](Tape& t, std::size_t self) {
    const Mat& g = t.grad(self);
    const Mat& wv = t.value(iw);
    const Mat& vv = t.value(iv);
    const bool gw = t.needs_grad(iw), gv = t.needs_grad(iv);
    Mat* aw = gw ? &t.grad_accumulator(iw) : nullptr;
    Mat* av = gv ? &t.grad_accumulator(iv) : nullptr;
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t tk = 0; tk < T; ++tk) {
        const double gi = g(i, tk);
        for (std::size_t z = 0; z < M; ++z) {
          const std::size_t cw = column(wl, z, tk, M, T), cv = column(vl, z, tk, M, T);
          if (gw) (*aw)(i, cw) += gi * vv(i, cv);
          if (gv) (*av)(i, cv) += gi * wv(i, cw);
        }
      }
    }
  });
}

Var masked_mean(Var a, const Mat& mask) {
  Tape& t = tape_of(a);
  const Mat& av = t.value(a);
  require(av.same_shape(mask), "masked_mean: shape mismatch");
  double count = 0.0, s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (mask.data[i] != 0.0) {
      count += 1.0;
      s += av.data[i];
    }
  }
  if (count == 0.0) throw std::invalid_argument("masked_mean: every entry is masked");
  Mat out(1, 1, s / count);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, mask, count](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0) / count;
    auto& acc = t.grad_accumulator(ia).data;
    for (std::size_t i = 0; i < acc.size(); ++i)
      if (mask.data[i] != 0.0) acc[i] += g;
  });
}

}  // namespace graphdive::ad
