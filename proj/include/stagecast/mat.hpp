#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace stagecast::nn {

// Dense row-major matrix of doubles. Vectors are 1xN (row) or Nx1 (column).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(std::size_t(r) * std::size_t(c), 0.0) {}
  Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), d(std::move(data)) {
    assert(d.size() == std::size_t(r) * std::size_t(c));
  }

  double& operator()(int r, int c) { return d[std::size_t(r) * cols + c]; }
  double operator()(int r, int c) const { return d[std::size_t(r) * cols + c]; }
  double* row(int r) { return d.data() + std::size_t(r) * cols; }
  const double* row(int r) const { return d.data() + std::size_t(r) * cols; }

  std::size_t size() const { return d.size(); }
  bool empty() const { return d.empty(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  static Mat full(int r, int c, double v) {
    Mat m(r, c);
    for (double& x : m.d) x = v;
    return m;
  }
};

}  // namespace stagecast::nn
