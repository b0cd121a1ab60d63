#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace graphdive {

// Dense row-major double matrix. Zero-row matrices are allowed (an edgeless
// graph has a 0 x f_e edge feature block).
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Mat row_vector(std::span<const double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;

  friend bool operator==(const Mat&, const Mat&) = default;
};

// C = A * B
Mat matmul(const Mat& a, const Mat& b);
// C += A * B^T  (shapes: a r x k, b c x k, c r x c)
void matmul_nt_acc(const Mat& a, const Mat& b, Mat& c);
// C += A^T * B  (shapes: a k x r, b k x c, c r x c)
void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c);

Mat identity(std::size_t n);
double max_abs(const Mat& m);

}  // namespace graphdive
