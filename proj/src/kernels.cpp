#include "stagecast/kernels.hpp"

#include <cassert>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stagecast::nn::kernels {

Dispatch& dispatch() {
  static Dispatch d;
  return d;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

// Shared microkernels. The serial and parallel variants call these so the
// per-element accumulation order is identical in both.

inline void mm_row(const double* a, const Mat& B, double* crow, int K, int N, bool accumulate) {
  if (!accumulate) std::memset(crow, 0, sizeof(double) * std::size_t(N));
  for (int k = 0; k < K; ++k) {
    const double av = a[k];
    const double* brow = B.row(k);
#pragma omp simd
    for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
  }
}

inline void mm_nt_row(const double* a, const Mat& B, double* crow, int K, int N, bool accumulate) {
  for (int j = 0; j < N; ++j) {
    const double* brow = B.row(j);
    double s = 0.0;
#pragma omp simd reduction(+ : s)
    for (int k = 0; k < K; ++k) s += a[k] * brow[k];
    crow[j] = accumulate ? crow[j] + s : s;
  }
}

// Row i of c = a^T * b is built from column i of a.
inline void mm_tn_row(const Mat& A, const Mat& B, double* crow, int i, bool accumulate) {
  const int M = A.rows;
  const int N = B.cols;
  if (!accumulate) std::memset(crow, 0, sizeof(double) * std::size_t(N));
  for (int m = 0; m < M; ++m) {
    const double av = A(m, i);
    const double* brow = B.row(m);
#pragma omp simd
    for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_row(const double* x, double* y, int n) {
  double mx = x[0];
  for (int j = 1; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < n; ++j) y[j] *= inv;
}

inline void layernorm_row(const double* x, const double* gamma, const double* beta, double eps,
                          double* y, double* xh, double* inv_std_out, int n) {
  double mean = 0.0;
  for (int j = 0; j < n; ++j) mean += x[j];
  mean /= n;
  double var = 0.0;
  for (int j = 0; j < n; ++j) {
    const double dlt = x[j] - mean;
    var += dlt * dlt;
  }
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  *inv_std_out = inv;
  for (int j = 0; j < n; ++j) {
    xh[j] = (x[j] - mean) * inv;
    y[j] = xh[j] * gamma[j] + beta[j];
  }
}

}  // namespace

namespace serial {

void matmul(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  for (int i = 0; i < a.rows; ++i) mm_row(a.row(i), b, c.row(i), a.cols, b.cols, accumulate);
}

void matmul_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  for (int i = 0; i < a.rows; ++i) mm_nt_row(a.row(i), b, c.row(i), a.cols, b.rows, accumulate);
}

void matmul_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  for (int i = 0; i < a.cols; ++i) mm_tn_row(a, b, c.row(i), i, accumulate);
}

void softmax_rows(const Mat& x, Mat& y) {
  assert(x.same_shape(y));
  for (int i = 0; i < x.rows; ++i) softmax_row(x.row(i), y.row(i), x.cols);
}

void layernorm_rows(const Mat& x, const Mat& gamma, const Mat& beta, double eps, Mat& y,
                    Mat& xhat, Mat& inv_std) {
  assert(x.same_shape(y) && x.same_shape(xhat) && inv_std.rows == x.rows && inv_std.cols == 1);
  for (int i = 0; i < x.rows; ++i)
    layernorm_row(x.row(i), gamma.d.data(), beta.d.data(), eps, y.row(i), xhat.row(i),
                  inv_std.row(i), x.cols);
}

}  // namespace serial

namespace parallel {

void matmul(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.rows; ++i) mm_row(a.row(i), b, c.row(i), a.cols, b.cols, accumulate);
}

void matmul_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.rows; ++i) mm_nt_row(a.row(i), b, c.row(i), a.cols, b.rows, accumulate);
}

void matmul_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.cols; ++i) mm_tn_row(a, b, c.row(i), i, accumulate);
}

void softmax_rows(const Mat& x, Mat& y) {
  assert(x.same_shape(y));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.rows; ++i) softmax_row(x.row(i), y.row(i), x.cols);
}

void layernorm_rows(const Mat& x, const Mat& gamma, const Mat& beta, double eps, Mat& y,
                    Mat& xhat, Mat& inv_std) {
  assert(x.same_shape(y) && x.same_shape(xhat) && inv_std.rows == x.rows && inv_std.cols == 1);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < x.rows; ++i)
    layernorm_row(x.row(i), gamma.d.data(), beta.d.data(), eps, y.row(i), xhat.row(i),
                  inv_std.row(i), x.cols);
}

}  // namespace parallel

namespace {
inline bool go_parallel(long flops) {
  const Dispatch& d = dispatch();
  return d.parallel && flops >= d.min_flops && max_threads() > 1;
}
}  // namespace

void matmul(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  const long flops = 2L * a.rows * a.cols * b.cols;
  if (go_parallel(flops))
    parallel::matmul(a, b, c, accumulate);
  else
    serial::matmul(a, b, c, accumulate);
}

void matmul_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  const long flops = 2L * a.rows * a.cols * b.rows;
  if (go_parallel(flops))
    parallel::matmul_nt(a, b, c, accumulate);
  else
    serial::matmul_nt(a, b, c, accumulate);
}

void matmul_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  const long flops = 2L * a.rows * a.cols * b.cols;
  if (go_parallel(flops))
    parallel::matmul_tn(a, b, c, accumulate);
  else
    serial::matmul_tn(a, b, c, accumulate);
}

void softmax_rows(const Mat& x, Mat& y) {
  if (go_parallel(8L * x.rows * x.cols))
    parallel::softmax_rows(x, y);
  else
    serial::softmax_rows(x, y);
}

void layernorm_rows(const Mat& x, const Mat& gamma, const Mat& beta, double eps, Mat& y, Mat& xhat,
                    Mat& inv_std) {
  if (go_parallel(8L * x.rows * x.cols))
    parallel::layernorm_rows(x, gamma, beta, eps, y, xhat, inv_std);
  else
    serial::layernorm_rows(x, gamma, beta, eps, y, xhat, inv_std);
}

}  // namespace stagecast::nn::kernels
