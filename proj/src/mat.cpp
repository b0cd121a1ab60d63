#include "graphdive/mat.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace graphdive {

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Mat m;
  m.rows = rows.size();
  m.cols = rows.size() ? rows.begin()->size() : 0;
  m.data.reserve(m.rows * m.cols);
  for (const auto& r : rows) {
    if (r.size() != m.cols) throw std::invalid_argument("Mat::from_rows: ragged rows");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

Mat Mat::row_vector(std::span<const double> values) {
  Mat m(1, values.size());
  std::copy(values.begin(), values.end(), m.data.begin());
  return m;
}

bool Mat::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
  Mat c(a.rows, b.cols);
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* ci = c.data.data() + i * n;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.data[i * a.cols + k];
      if (aik == 0.0) continue;
      const double* bk = b.data.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

void matmul_nt_acc(const Mat& a, const Mat& b, Mat& c) {
  if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
    throw std::invalid_argument("matmul_nt_acc: shape mismatch");
  const std::size_t k = a.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.data.data() + i * k;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.data.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c.data[i * c.cols + j] += s;
    }
  }
}

void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
    throw std::invalid_argument("matmul_tn_acc: shape mismatch");
  const std::size_t n = b.cols;
  for (std::size_t p = 0; p < a.rows; ++p) {
    const double* bp = b.data.data() + p * n;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double api = a.data[p * a.cols + i];
      if (api == 0.0) continue;
      double* ci = c.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

Mat identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

double max_abs(const Mat& m) {
  double r = 0.0;
  for (double v : m.data) r = std::max(r, std::abs(v));
  return r;
}

}  // namespace graphdive
