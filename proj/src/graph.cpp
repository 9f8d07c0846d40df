#include "stagecast/graph.hpp"

#include <cassert>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "stagecast/errors.hpp"
#include "stagecast/kernels.hpp"

namespace stagecast::nn {

namespace {

void colsum_into(const Mat& src, Mat& dst) {
  assert(dst.rows == 1 && dst.cols == src.cols);
  for (int i = 0; i < src.rows; ++i) {
    const double* r = src.row(i);
    double* d = dst.row(0);
    for (int j = 0; j < src.cols; ++j) d[j] += r[j];
  }
}

void copy_block(const Mat& src, int r0, int c0, int rows, int cols, Mat& dst) {
  for (int i = 0; i < rows; ++i) {
    const double* s = src.row(r0 + i) + c0;
    double* d = dst.row(i);
    for (int j = 0; j < cols; ++j) d[j] = s[j];
  }
}

void add_block(const Mat& src, Mat& dst, int r0, int c0) {
  for (int i = 0; i < src.rows; ++i) {
    const double* s = src.row(i);
    double* d = dst.row(r0 + i) + c0;
    for (int j = 0; j < src.cols; ++j) d[j] += s[j];
  }
}

}  // namespace

int Graph::push(Mat value, bool requires_grad, std::function<void(Graph&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = requires_grad ? std::move(back) : nullptr;
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

Mat& Graph::grad_acc(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Mat(n.value.rows, n.value.cols);
  return n.grad;
}

int Graph::leaf(Mat value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

int Graph::matmul(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.cols != B.rows) throw NumericsError("matmul: inner dimensions disagree");
  Mat C(A.rows, B.cols);
  kernels::matmul(A, B, C);
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, b, id](Graph& g) {
      const Mat& dC = g.grad(id);
      if (g.requires_grad(a)) kernels::matmul_nt(dC, g.val(b), g.grad_acc(a), true);
      if (g.requires_grad(b)) kernels::matmul_tn(g.val(a), dC, g.grad_acc(b), true);
    };
  }
  return id;
}

int Graph::add(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (!A.same_shape(B)) throw NumericsError("add: shape mismatch");
  Mat C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.d[i] += B.d[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, b, id](Graph& g) {
      const Mat& dC = g.grad(id);
      if (g.requires_grad(a)) {
        Mat& da = g.grad_acc(a);
        for (std::size_t i = 0; i < dC.size(); ++i) da.d[i] += dC.d[i];
      }
      if (g.requires_grad(b)) {
        Mat& db = g.grad_acc(b);
        for (std::size_t i = 0; i < dC.size(); ++i) db.d[i] += dC.d[i];
      }
    };
  }
  return id;
}

int Graph::add_rowvec(int a, int v) {
  const Mat& A = val(a);
  const Mat& V = val(v);
  if (V.rows != 1 || V.cols != A.cols) throw NumericsError("add_rowvec: bias shape mismatch");
  Mat C = A;
  for (int i = 0; i < C.rows; ++i) {
    double* r = C.row(i);
    for (int j = 0; j < C.cols; ++j) r[j] += V.d[j];
  }
  bool rg = requires_grad(a) || requires_grad(v);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, v, id](Graph& g) {
      const Mat& dC = g.grad(id);
      if (g.requires_grad(a)) {
        Mat& da = g.grad_acc(a);
        for (std::size_t i = 0; i < dC.size(); ++i) da.d[i] += dC.d[i];
      }
      if (g.requires_grad(v)) colsum_into(dC, g.grad_acc(v));
    };
  }
  return id;
}

int Graph::add_positional(int a, const Mat& pe, int seq_len) {
  const Mat& A = val(a);
  if (pe.cols != A.cols || pe.rows < seq_len || A.rows % seq_len != 0)
    throw NumericsError("add_positional: table shape mismatch");
  Mat C = A;
  for (int i = 0; i < C.rows; ++i) {
    const double* p = pe.row(i % seq_len);
    double* r = C.row(i);
    for (int j = 0; j < C.cols; ++j) r[j] += p[j];
  }
  bool rg = requires_grad(a);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, id](Graph& g) {
      const Mat& dC = g.grad(id);
      Mat& da = g.grad_acc(a);
      for (std::size_t i = 0; i < dC.size(); ++i) da.d[i] += dC.d[i];
    };
  }
  return id;
}

int Graph::relu(int a) {
  Mat C = val(a);
  for (double& x : C.d) x = x > 0 ? x : 0.0;
  bool rg = requires_grad(a);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, id](Graph& g) {
      const Mat& y = g.val(id);
      const Mat& dC = g.grad(id);
      Mat& da = g.grad_acc(a);
      for (std::size_t i = 0; i < dC.size(); ++i)
        if (y.d[i] > 0) da.d[i] += dC.d[i];
    };
  }
  return id;
}

int Graph::sigmoid(int a) {
  Mat C = val(a);
  for (double& x : C.d) {
    if (x >= 0) {
      x = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      x = e / (1.0 + e);
    }
  }
  bool rg = requires_grad(a);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, id](Graph& g) {
      const Mat& y = g.val(id);
      const Mat& dC = g.grad(id);
      Mat& da = g.grad_acc(a);
      for (std::size_t i = 0; i < dC.size(); ++i) da.d[i] += dC.d[i] * y.d[i] * (1.0 - y.d[i]);
    };
  }
  return id;
}

int Graph::softmax_rows(int a) {
  const Mat& A = val(a);
  Mat C(A.rows, A.cols);
  kernels::softmax_rows(A, C);
  bool rg = requires_grad(a);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, id](Graph& g) {
      const Mat& y = g.val(id);
      const Mat& dC = g.grad(id);
      Mat& da = g.grad_acc(a);
      for (int i = 0; i < y.rows; ++i) {
        const double* yr = y.row(i);
        const double* dr = dC.row(i);
        double dot = 0.0;
        for (int j = 0; j < y.cols; ++j) dot += yr[j] * dr[j];
        double* dar = da.row(i);
        for (int j = 0; j < y.cols; ++j) dar[j] += yr[j] * (dr[j] - dot);
      }
    };
  }
  return id;
}

int Graph::scale(int a, double s) {
  Mat C = val(a);
  for (double& x : C.d) x *= s;
  bool rg = requires_grad(a);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, id, s](Graph& g) {
      const Mat& dC = g.grad(id);
      Mat& da = g.grad_acc(a);
      for (std::size_t i = 0; i < dC.size(); ++i) da.d[i] += s * dC.d[i];
    };
  }
  return id;
}

int Graph::layernorm(int x, int gamma, int beta, double eps) {
  const Mat& X = val(x);
  const Mat& G = val(gamma);
  const Mat& B = val(beta);
  if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols)
    throw NumericsError("layernorm: parameter shape mismatch");
  Mat Y(X.rows, X.cols);
  auto xhat = std::make_shared<Mat>(X.rows, X.cols);
  auto inv_std = std::make_shared<Mat>(X.rows, 1);
  kernels::layernorm_rows(X, G, B, eps, Y, *xhat, *inv_std);
  bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  int id = push(std::move(Y), rg, nullptr);
  if (rg) {
    nodes_[id].back = [x, gamma, beta, id, xhat, inv_std](Graph& g) {
      const Mat& dY = g.grad(id);
      const Mat& G = g.val(gamma);
      const int n = dY.cols;
      if (g.requires_grad(beta)) colsum_into(dY, g.grad_acc(beta));
      if (g.requires_grad(gamma)) {
        Mat& dg = g.grad_acc(gamma);
        for (int i = 0; i < dY.rows; ++i) {
          const double* dr = dY.row(i);
          const double* xh = xhat->row(i);
          for (int j = 0; j < n; ++j) dg.d[j] += dr[j] * xh[j];
        }
      }
      if (g.requires_grad(x)) {
        Mat& dx = g.grad_acc(x);
        for (int i = 0; i < dY.rows; ++i) {
          const double* dr = dY.row(i);
          const double* xh = xhat->row(i);
          const double inv = (*inv_std)(i, 0);
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < n; ++j) {
            const double gdy = dr[j] * G.d[j];
            m1 += gdy;
            m2 += gdy * xh[j];
          }
          m1 /= n;
          m2 /= n;
          double* dxr = dx.row(i);
          for (int j = 0; j < n; ++j) {
            const double gdy = dr[j] * G.d[j];
            dxr[j] += inv * (gdy - m1 - xh[j] * m2);
          }
        }
      }
    };
  }
  return id;
}

int Graph::batchnorm(int x, int gamma, int beta, Mat* running_mean, Mat* running_var,
                     bool training, double momentum, double eps) {
  const Mat& X = val(x);
  const Mat& G = val(gamma);
  const Mat& B = val(beta);
  const int N = X.rows, C = X.cols;
  if (G.cols != C || B.cols != C || running_mean->cols != C || running_var->cols != C)
    throw NumericsError("batchnorm: parameter shape mismatch");

  Mat Y(N, C);
  auto xhat = std::make_shared<Mat>(N, C);
  auto inv_std = std::make_shared<Mat>(1, C);
  Mat mean(1, C), var(1, C);
  if (training) {
    for (int j = 0; j < C; ++j) {
      double m = 0.0;
      for (int i = 0; i < N; ++i) m += X(i, j);
      m /= N;
      double v = 0.0;
      for (int i = 0; i < N; ++i) {
        const double dlt = X(i, j) - m;
        v += dlt * dlt;
      }
      v /= N;
      mean(0, j) = m;
      var(0, j) = v;
      (*running_mean)(0, j) = (1.0 - momentum) * (*running_mean)(0, j) + momentum * m;
      (*running_var)(0, j) = (1.0 - momentum) * (*running_var)(0, j) + momentum * v;
    }
  } else {
    mean = *running_mean;
    var = *running_var;
  }
  for (int j = 0; j < C; ++j) (*inv_std)(0, j) = 1.0 / std::sqrt(var(0, j) + eps);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < C; ++j) {
      const double xh = (X(i, j) - mean(0, j)) * (*inv_std)(0, j);
      (*xhat)(i, j) = xh;
      Y(i, j) = xh * G.d[j] + B.d[j];
    }
  }

  bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  int id = push(std::move(Y), rg, nullptr);
  if (rg) {
    nodes_[id].back = [x, gamma, beta, id, xhat, inv_std, training, N](Graph& g) {
      const Mat& dY = g.grad(id);
      const Mat& G = g.val(gamma);
      const int C = dY.cols;
      Mat dbeta(1, C), dgamma(1, C);
      colsum_into(dY, dbeta);
      for (int i = 0; i < dY.rows; ++i) {
        const double* dr = dY.row(i);
        const double* xh = xhat->row(i);
        for (int j = 0; j < C; ++j) dgamma.d[j] += dr[j] * xh[j];
      }
      if (g.requires_grad(beta)) {
        Mat& db = g.grad_acc(beta);
        for (int j = 0; j < C; ++j) db.d[j] += dbeta.d[j];
      }
      if (g.requires_grad(gamma)) {
        Mat& dg = g.grad_acc(gamma);
        for (int j = 0; j < C; ++j) dg.d[j] += dgamma.d[j];
      }
      if (g.requires_grad(x)) {
        Mat& dx = g.grad_acc(x);
        if (training) {
          for (int i = 0; i < dY.rows; ++i) {
            const double* dr = dY.row(i);
            const double* xh = xhat->row(i);
            double* dxr = dx.row(i);
            for (int j = 0; j < C; ++j) {
              dxr[j] += G.d[j] * (*inv_std)(0, j) / N *
                        (N * dr[j] - dbeta.d[j] - xh[j] * dgamma.d[j]);
            }
          }
        } else {
          for (int i = 0; i < dY.rows; ++i) {
            const double* dr = dY.row(i);
            double* dxr = dx.row(i);
            for (int j = 0; j < C; ++j) dxr[j] += dr[j] * G.d[j] * (*inv_std)(0, j);
          }
        }
      }
    };
  }
  return id;
}

int Graph::dropout(int a, double p, Rng* rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw NumericsError("dropout: p must be in [0,1)");
  if (!training || p == 0.0) {
    // Identity in eval mode; still a node so callers can treat it uniformly.
    Mat C = val(a);
    bool rg = requires_grad(a);
    int id = push(std::move(C), rg, nullptr);
    if (rg) {
      nodes_[id].back = [a, id](Graph& g) {
        const Mat& dC = g.grad(id);
        Mat& da = g.grad_acc(a);
        for (std::size_t i = 0; i < dC.size(); ++i) da.d[i] += dC.d[i];
      };
    }
    return id;
  }
  const Mat& A = val(a);
  auto mask = std::make_shared<Mat>(A.rows, A.cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask->size(); ++i)
    mask->d[i] = rng->uniform() >= p ? keep_scale : 0.0;
  Mat C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.d[i] *= mask->d[i];
  bool rg = requires_grad(a);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, id, mask](Graph& g) {
      const Mat& dC = g.grad(id);
      Mat& da = g.grad_acc(a);
      for (std::size_t i = 0; i < dC.size(); ++i) da.d[i] += dC.d[i] * mask->d[i];
    };
  }
  return id;
}

int Graph::mean_pool_groups(int a, int group_size) {
  const Mat& A = val(a);
  if (group_size <= 0 || A.rows % group_size != 0)
    throw NumericsError("mean_pool_groups: rows not divisible by group size");
  const int G = A.rows / group_size;
  Mat C(G, A.cols);
  for (int g = 0; g < G; ++g) {
    double* out = C.row(g);
    for (int t = 0; t < group_size; ++t) {
      const double* r = A.row(g * group_size + t);
      for (int j = 0; j < A.cols; ++j) out[j] += r[j];
    }
    for (int j = 0; j < A.cols; ++j) out[j] /= group_size;
  }
  bool rg = requires_grad(a);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, id, group_size](Graph& g) {
      const Mat& dC = g.grad(id);
      Mat& da = g.grad_acc(a);
      const double inv = 1.0 / group_size;
      for (int grp = 0; grp < dC.rows; ++grp) {
        const double* dr = dC.row(grp);
        for (int t = 0; t < group_size; ++t) {
          double* dar = da.row(grp * group_size + t);
          for (int j = 0; j < dC.cols; ++j) dar[j] += dr[j] * inv;
        }
      }
    };
  }
  return id;
}

int Graph::concat_cols(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.rows != B.rows) throw NumericsError("concat_cols: row mismatch");
  Mat C(A.rows, A.cols + B.cols);
  for (int i = 0; i < A.rows; ++i) {
    double* r = C.row(i);
    const double* ra = A.row(i);
    const double* rb = B.row(i);
    for (int j = 0; j < A.cols; ++j) r[j] = ra[j];
    for (int j = 0; j < B.cols; ++j) r[A.cols + j] = rb[j];
  }
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(C), rg, nullptr);
  if (rg) {
    const int ca = A.cols;
    nodes_[id].back = [a, b, id, ca](Graph& g) {
      const Mat& dC = g.grad(id);
      if (g.requires_grad(a)) {
        Mat& da = g.grad_acc(a);
        for (int i = 0; i < dC.rows; ++i) {
          const double* dr = dC.row(i);
          double* dar = da.row(i);
          for (int j = 0; j < da.cols; ++j) dar[j] += dr[j];
        }
      }
      if (g.requires_grad(b)) {
        Mat& db = g.grad_acc(b);
        for (int i = 0; i < dC.rows; ++i) {
          const double* dr = dC.row(i) + ca;
          double* dbr = db.row(i);
          for (int j = 0; j < db.cols; ++j) dbr[j] += dr[j];
        }
      }
    };
  }
  return id;
}

namespace {

struct MhaCache {
  Mat q, k, v, o;  // (B*T) x d
  Mat attn;        // (B*H*T) x T
};

void softmax_backward_rows(const Mat& y, const Mat& dy, Mat& dx) {
  for (int i = 0; i < y.rows; ++i) {
    const double* yr = y.row(i);
    const double* dr = dy.row(i);
    double dot = 0.0;
    for (int j = 0; j < y.cols; ++j) dot += yr[j] * dr[j];
    double* dxr = dx.row(i);
    for (int j = 0; j < y.cols; ++j) dxr[j] = yr[j] * (dr[j] - dot);
  }
}

}  // namespace

int Graph::multi_head_attention(int x, int wq, int bq, int wk, int bk, int wv, int bv, int wo,
                                int bo, int batch, int seq_len, int heads, Mat* attn_capture) {
  const Mat& X = val(x);
  const int d = X.cols;
  if (d % heads != 0) throw NumericsError("attention: d_model not divisible by heads");
  if (X.rows != batch * seq_len) throw NumericsError("attention: batch/seq shape mismatch");
  const int dh = d / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(double(dh));

  auto cache = std::make_shared<MhaCache>();
  cache->q = Mat(X.rows, d);
  cache->k = Mat(X.rows, d);
  cache->v = Mat(X.rows, d);
  cache->o = Mat(X.rows, d);
  cache->attn = Mat(batch * heads * seq_len, seq_len);

  kernels::matmul(X, val(wq), cache->q);
  kernels::matmul(X, val(wk), cache->k);
  kernels::matmul(X, val(wv), cache->v);
  for (int i = 0; i < X.rows; ++i) {
    double* qr = cache->q.row(i);
    double* kr = cache->k.row(i);
    double* vr = cache->v.row(i);
    for (int j = 0; j < d; ++j) {
      qr[j] += val(bq).d[j];
      kr[j] += val(bk).d[j];
      vr[j] += val(bv).d[j];
    }
  }

#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      Mat qh(seq_len, dh), kh(seq_len, dh), vh(seq_len, dh);
      copy_block(cache->q, b * seq_len, h * dh, seq_len, dh, qh);
      copy_block(cache->k, b * seq_len, h * dh, seq_len, dh, kh);
      copy_block(cache->v, b * seq_len, h * dh, seq_len, dh, vh);
      Mat scores(seq_len, seq_len);
      kernels::serial::matmul_nt(qh, kh, scores, false);
      for (double& s : scores.d) s *= inv_sqrt_dk;
      Mat a(seq_len, seq_len);
      kernels::serial::softmax_rows(scores, a);
      // Stash the attention block and head output.
      for (int t = 0; t < seq_len; ++t) {
        double* dst = cache->attn.row((b * heads + h) * seq_len + t);
        const double* src = a.row(t);
        for (int j = 0; j < seq_len; ++j) dst[j] = src[j];
      }
      Mat oh(seq_len, dh);
      kernels::serial::matmul(a, vh, oh, false);
      for (int t = 0; t < seq_len; ++t) {
        double* dst = cache->o.row(b * seq_len + t) + h * dh;
        const double* src = oh.row(t);
        for (int j = 0; j < dh; ++j) dst[j] = src[j];
      }
    }
  }

  Mat Y(X.rows, d);
  kernels::matmul(cache->o, val(wo), Y);
  for (int i = 0; i < Y.rows; ++i) {
    double* r = Y.row(i);
    for (int j = 0; j < d; ++j) r[j] += val(bo).d[j];
  }
  if (attn_capture) *attn_capture = cache->attn;

  bool rg = requires_grad(x) || requires_grad(wq) || requires_grad(wo);
  int id = push(std::move(Y), rg, nullptr);
  if (!rg) return id;

  nodes_[id].back = [x, wq, bq, wk, bk, wv, bv, wo, bo, batch, seq_len, heads, dh, inv_sqrt_dk,
                     cache, id](Graph& g) {
    const Mat& dY = g.grad(id);
    const Mat& X = g.val(x);
    const int d = X.cols;

    // Output projection.
    Mat dO(X.rows, d);
    kernels::matmul_nt(dY, g.val(wo), dO);
    if (g.requires_grad(wo)) kernels::matmul_tn(cache->o, dY, g.grad_acc(wo), true);
    if (g.requires_grad(bo)) colsum_into(dY, g.grad_acc(bo));

    Mat dQ(X.rows, d), dK(X.rows, d), dV(X.rows, d);
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        Mat qh(seq_len, dh), kh(seq_len, dh), vh(seq_len, dh), doh(seq_len, dh);
        copy_block(cache->q, b * seq_len, h * dh, seq_len, dh, qh);
        copy_block(cache->k, b * seq_len, h * dh, seq_len, dh, kh);
        copy_block(cache->v, b * seq_len, h * dh, seq_len, dh, vh);
        copy_block(dO, b * seq_len, h * dh, seq_len, dh, doh);
        Mat a(seq_len, seq_len);
        copy_block(cache->attn, (b * heads + h) * seq_len, 0, seq_len, seq_len, a);

        Mat dA(seq_len, seq_len);
        kernels::serial::matmul_nt(doh, vh, dA, false);
        Mat dvh(seq_len, dh);
        kernels::serial::matmul_tn(a, doh, dvh, false);
        Mat dS(seq_len, seq_len);
        softmax_backward_rows(a, dA, dS);
        for (double& s : dS.d) s *= inv_sqrt_dk;
        Mat dqh(seq_len, dh), dkh(seq_len, dh);
        kernels::serial::matmul(dS, kh, dqh, false);
        kernels::serial::matmul_tn(dS, qh, dkh, false);

        add_block(dqh, dQ, b * seq_len, h * dh);
        add_block(dkh, dK, b * seq_len, h * dh);
        add_block(dvh, dV, b * seq_len, h * dh);
      }
    }

    if (g.requires_grad(x)) {
      Mat& dx = g.grad_acc(x);
      kernels::matmul_nt(dQ, g.val(wq), dx, true);
      kernels::matmul_nt(dK, g.val(wk), dx, true);
      kernels::matmul_nt(dV, g.val(wv), dx, true);
    }
    if (g.requires_grad(wq)) kernels::matmul_tn(X, dQ, g.grad_acc(wq), true);
    if (g.requires_grad(wk)) kernels::matmul_tn(X, dK, g.grad_acc(wk), true);
    if (g.requires_grad(wv)) kernels::matmul_tn(X, dV, g.grad_acc(wv), true);
    if (g.requires_grad(bq)) colsum_into(dQ, g.grad_acc(bq));
    if (g.requires_grad(bk)) colsum_into(dK, g.grad_acc(bk));
    if (g.requires_grad(bv)) colsum_into(dV, g.grad_acc(bv));
  };
  return id;
}

int Graph::focal_binary(int probs, std::vector<int> targets, const FocalLossConfig& cfg) {
  const Mat& P = val(probs);
  if (P.cols != 1) throw NumericsError("focal_binary: expected a single probability column");
  if (int(targets.size()) != P.rows) throw NumericsError("focal_binary: target count mismatch");
  const int B = P.rows;
  const double lo = cfg.prob_clip, hi = 1.0 - cfg.prob_clip;
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    if (targets[i] != 0 && targets[i] != 1) throw NumericsError("focal_binary: target out of range");
    double p = P(i, 0);
    double pt = targets[i] == 1 ? p : 1.0 - p;
    pt = std::min(std::max(pt, lo), hi);
    loss += -cfg.alpha * std::pow(1.0 - pt, cfg.gamma) * std::log(pt);
  }
  loss /= B;
  bool rg = requires_grad(probs);
  int id = push(Mat(1, 1, {loss}), rg, nullptr);
  if (rg) {
    auto tgt = std::make_shared<std::vector<int>>(std::move(targets));
    nodes_[id].back = [probs, id, tgt, cfg, B, lo, hi](Graph& g) {
      const double gout = g.grad(id)(0, 0);
      const Mat& P = g.val(probs);
      Mat& dP = g.grad_acc(probs);
      for (int i = 0; i < B; ++i) {
        const double p = P(i, 0);
        const double sign = (*tgt)[i] == 1 ? 1.0 : -1.0;
        double pt = (*tgt)[i] == 1 ? p : 1.0 - p;
        if (pt <= lo || pt >= hi) continue;  // clipped region: flat
        // d/dpt [-(1-pt)^g * log pt] = g(1-pt)^(g-1) log pt - (1-pt)^g / pt
        double term = -std::pow(1.0 - pt, cfg.gamma) / pt;
        if (cfg.gamma != 0.0)
          term += cfg.gamma * std::pow(1.0 - pt, cfg.gamma - 1.0) * std::log(pt);
        dP(i, 0) += gout * cfg.alpha * term * sign / B;
      }
    };
  }
  return id;
}

int Graph::focal_multiclass(int probs, std::vector<int> targets, const FocalLossConfig& cfg) {
  const Mat& P = val(probs);
  if (int(targets.size()) != P.rows) throw NumericsError("focal_multiclass: target count mismatch");
  const int B = P.rows, C = P.cols;
  std::vector<double> w = cfg.class_weights;
  if (w.empty()) w.assign(C, 1.0);
  if (int(w.size()) != C) throw NumericsError("focal_multiclass: class weight count mismatch");
  const double lo = cfg.prob_clip, hi = 1.0 - cfg.prob_clip;
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    const int y = targets[i];
    if (y < 0 || y >= C) throw NumericsError("focal_multiclass: target index out of range");
    double p = std::min(std::max(P(i, y), lo), hi);
    loss += -w[y] * cfg.alpha * std::pow(1.0 - p, cfg.gamma) * std::log(p);
  }
  loss /= B;
  bool rg = requires_grad(probs);
  int id = push(Mat(1, 1, {loss}), rg, nullptr);
  if (rg) {
    auto tgt = std::make_shared<std::vector<int>>(std::move(targets));
    auto wts = std::make_shared<std::vector<double>>(std::move(w));
    nodes_[id].back = [probs, id, tgt, wts, cfg, B, lo, hi](Graph& g) {
      const double gout = g.grad(id)(0, 0);
      const Mat& P = g.val(probs);
      Mat& dP = g.grad_acc(probs);
      for (int i = 0; i < B; ++i) {
        const int y = (*tgt)[i];
        const double p = P(i, y);
        if (p <= lo || p >= hi) continue;
        double term = -std::pow(1.0 - p, cfg.gamma) / p;
        if (cfg.gamma != 0.0) term += cfg.gamma * std::pow(1.0 - p, cfg.gamma - 1.0) * std::log(p);
        dP(i, y) += gout * (*wts)[y] * cfg.alpha * term / B;
      }
    };
  }
  return id;
}

int Graph::gather_sum(int a, std::vector<int> cols) {
  const Mat& A = val(a);
  if (int(cols.size()) != A.rows) throw NumericsError("gather_sum: index count mismatch");
  double s = 0.0;
  for (int i = 0; i < A.rows; ++i) {
    if (cols[i] < 0 || cols[i] >= A.cols) throw NumericsError("gather_sum: column out of range");
    s += A(i, cols[i]);
  }
  bool rg = requires_grad(a);
  int id = push(Mat(1, 1, {s}), rg, nullptr);
  if (rg) {
    auto idx = std::make_shared<std::vector<int>>(std::move(cols));
    nodes_[id].back = [a, id, idx](Graph& g) {
      const double gout = g.grad(id)(0, 0);
      Mat& da = g.grad_acc(a);
      for (int i = 0; i < da.rows; ++i) da(i, (*idx)[i]) += gout;
    };
  }
  return id;
}

int Graph::sum_all(int a) {
  const Mat& A = val(a);
  double s = 0.0;
  for (double v : A.d) s += v;
  bool rg = requires_grad(a);
  int id = push(Mat(1, 1, {s}), rg, nullptr);
  if (rg) {
    nodes_[id].back = [a, id](Graph& g) {
      const double gout = g.grad(id)(0, 0);
      Mat& da = g.grad_acc(a);
      for (double& v : da.d) v += gout;
    };
  }
  return id;
}

void Graph::backward(int node_id) {
  Node& target = nodes_[node_id];
  if (target.value.rows != 1 || target.value.cols != 1)
    throw NumericsError("backward: target must be scalar");
  grad_acc(node_id)(0, 0) = 1.0;
  for (int i = node_id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && !n.grad.empty()) n.back(*this);
  }
}

Mat positional_encoding(int seq_len, int d_model) {
  if (d_model % 2 != 0) throw NumericsError("positional_encoding: d_model must be even");
  Mat pe(seq_len, d_model);
  for (int t = 0; t < seq_len; ++t) {
    for (int i = 0; i < d_model / 2; ++i) {
      const double rate = std::pow(10000.0, -2.0 * i / d_model);
      pe(t, 2 * i) = std::sin(t * rate);
      pe(t, 2 * i + 1) = std::cos(t * rate);
    }
  }
  return pe;
}

}  // namespace stagecast::nn
