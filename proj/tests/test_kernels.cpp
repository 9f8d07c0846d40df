#include <doctest.h>

#include <cmath>
#include <tuple>

#include "stagecast/kernels.hpp"
#include "stagecast/rng.hpp"

using namespace stagecast;
using namespace stagecast::nn;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (double& v : m.d) v = rng.normal();
  return m;
}

// Textbook triple loop, used as the oracle for the tuned kernels.
Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("kernels");

TEST_CASE("matmul variants agree with the naive oracle") {
  Rng rng(101);
  for (auto [m, k, n] : {std::tuple{3, 4, 5}, std::tuple{17, 31, 13}, std::tuple{64, 40, 96}}) {
    Mat a = random_mat(m, k, rng);
    Mat b = random_mat(k, n, rng);
    Mat expect = naive_matmul(a, b);
    Mat c(m, n);
    kernels::serial::matmul(a, b, c, false);
    for (std::size_t i = 0; i < c.size(); ++i)
      CHECK(c.d[i] == doctest::Approx(expect.d[i]).epsilon(1e-12));

    // a * b^T via matmul_nt
    Mat bt(n, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j) bt(j, i) = b(i, j);
    Mat c2(m, n);
    kernels::serial::matmul_nt(a, bt, c2, false);
    for (std::size_t i = 0; i < c2.size(); ++i)
      CHECK(c2.d[i] == doctest::Approx(expect.d[i]).epsilon(1e-12));

    // a^T... use matmul_tn on a^T stored as a
    Mat at(k, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) at(j, i) = a(i, j);
    Mat c3(m, n);
    kernels::serial::matmul_tn(at, b, c3, false);
    for (std::size_t i = 0; i < c3.size(); ++i)
      CHECK(c3.d[i] == doctest::Approx(expect.d[i]).epsilon(1e-12));
  }
}

TEST_CASE("parallel kernels are bitwise identical to the serial reference") {
  Rng rng(7);
  Mat a = random_mat(57, 83, rng);
  Mat b = random_mat(83, 41, rng);
  Mat cs(57, 41), cp(57, 41);
  kernels::serial::matmul(a, b, cs, false);
  kernels::parallel::matmul(a, b, cp, false);
  CHECK(cs.d == cp.d);

  Mat bt = random_mat(41, 83, rng);
  Mat ds(57, 41), dp(57, 41);
  kernels::serial::matmul_nt(a, bt, ds, false);
  kernels::parallel::matmul_nt(a, bt, dp, false);
  CHECK(ds.d == dp.d);

  Mat es(83, 41), ep(83, 41);
  Mat b2 = random_mat(57, 41, rng);
  kernels::serial::matmul_tn(a, b2, es, false);
  kernels::parallel::matmul_tn(a, b2, ep, false);
  CHECK(es.d == ep.d);

  Mat x = random_mat(33, 29, rng);
  Mat ys(33, 29), yp(33, 29);
  kernels::serial::softmax_rows(x, ys);
  kernels::parallel::softmax_rows(x, yp);
  CHECK(ys.d == yp.d);

  Mat gamma = Mat::full(1, 29, 1.3), beta = Mat::full(1, 29, -0.2);
  Mat ls(33, 29), lp(33, 29), xh1(33, 29), xh2(33, 29), is1(33, 1), is2(33, 1);
  kernels::serial::layernorm_rows(x, gamma, beta, 1e-5, ls, xh1, is1);
  kernels::parallel::layernorm_rows(x, gamma, beta, 1e-5, lp, xh2, is2);
  CHECK(ls.d == lp.d);
}

TEST_CASE("accumulate mode adds on top of existing values") {
  Rng rng(11);
  Mat a = random_mat(6, 7, rng);
  Mat b = random_mat(7, 5, rng);
  Mat once(6, 5), twice(6, 5);
  kernels::matmul(a, b, once, false);
  kernels::matmul(a, b, twice, false);
  kernels::matmul(a, b, twice, true);
  for (std::size_t i = 0; i < once.size(); ++i)
    CHECK(twice.d[i] == doctest::Approx(2.0 * once.d[i]).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(13);
  Mat x = random_mat(20, 9, rng);
  for (double& v : x.d) v *= 30.0;  // wide logit range
  Mat y(20, 9);
  kernels::softmax_rows(x, y);
  for (int i = 0; i < y.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < y.cols; ++j) {
      CHECK(y(i, j) >= 0.0);
      s += y(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_SUITE_END();
