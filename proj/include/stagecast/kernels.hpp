#pragma once

#include "stagecast/mat.hpp"

namespace stagecast::nn::kernels {

// Runtime switch between the serial reference kernels and the OpenMP ones.
// Both variants share the same inner-loop code, so for a given binary the
// results are bitwise identical regardless of which path runs or how many
// threads it uses: every output element is accumulated by exactly one thread
// in a fixed order.
struct Dispatch {
  bool parallel = true;
  // Problems below this flop count stay serial to avoid fork/join overhead.
  long min_flops = 1L << 15;
};

Dispatch& dispatch();

int max_threads();

namespace serial {
void matmul(const Mat& a, const Mat& b, Mat& c, bool accumulate);
void matmul_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate);  // c = a * b^T
void matmul_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate);  // c = a^T * b
void softmax_rows(const Mat& x, Mat& y);
// y = (x - mean) / sqrt(var + eps) * gamma + beta, per row; xhat and inv_std
// are cached for the backward pass.
void layernorm_rows(const Mat& x, const Mat& gamma, const Mat& beta, double eps, Mat& y,
                    Mat& xhat, Mat& inv_std);
}  // namespace serial

namespace parallel {
void matmul(const Mat& a, const Mat& b, Mat& c, bool accumulate);
void matmul_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate);
void matmul_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate);
void softmax_rows(const Mat& x, Mat& y);
void layernorm_rows(const Mat& x, const Mat& gamma, const Mat& beta, double eps, Mat& y,
                    Mat& xhat, Mat& inv_std);
}  // namespace parallel

// Dispatching entry points used by the rest of the library.
void matmul(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void matmul_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void matmul_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void softmax_rows(const Mat& x, Mat& y);
void layernorm_rows(const Mat& x, const Mat& gamma, const Mat& beta, double eps, Mat& y,
                    Mat& xhat, Mat& inv_std);

}  // namespace stagecast::nn::kernels
