#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stagecast/mat.hpp"
#include "stagecast/rng.hpp"

namespace stagecast::nn {

struct FocalLossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  // Per-class weights for the multi-class form; empty means all ones.
  std::vector<double> class_weights;
  double prob_clip = 1e-7;
};

// Reverse-mode tape over dense matrices. Values are computed eagerly as ops
// are recorded; backward() walks the tape in reverse creation order. One
// Graph instance per forward pass; it is not thread safe, but independent
// graphs may run concurrently.
class Graph {
 public:
  int leaf(Mat value, bool requires_grad = false);

  int matmul(int a, int b);
  int add(int a, int b);
  int add_rowvec(int a, int v);  // v: 1 x C, broadcast over rows
  // Adds a constant positional table: row r of `a` gets pe.row(r % T).
  int add_positional(int a, const Mat& pe, int seq_len);
  int relu(int a);
  int sigmoid(int a);
  int softmax_rows(int a);
  int scale(int a, double s);
  int layernorm(int x, int gamma, int beta, double eps = 1e-5);
  // Batch normalization over columns. In training mode the batch statistics
  // are used and the running buffers are updated in place; in eval mode the
  // running buffers are used.
  int batchnorm(int x, int gamma, int beta, Mat* running_mean, Mat* running_var, bool training,
                double momentum = 0.1, double eps = 1e-5);
  int dropout(int a, double p, Rng* rng, bool training);
  // Rows come in G groups of `group_size` consecutive rows; output is the
  // per-group mean, shape G x C.
  int mean_pool_groups(int a, int group_size);
  int concat_cols(int a, int b);

  // Fused multi-head self-attention over a batch of sequences. x has shape
  // (B*T) x d. If `attn_capture` is non-null it receives the softmaxed
  // attention weights as a (B*H*T) x T matrix (block (b*H+h)*T.. is head h of
  // sample b).
  int multi_head_attention(int x, int wq, int bq, int wk, int bk, int wv, int bv, int wo, int bo,
                           int batch, int seq_len, int heads, Mat* attn_capture = nullptr);

  // Losses produce 1x1 nodes (mean over the batch).
  int focal_binary(int probs, std::vector<int> targets, const FocalLossConfig& cfg);
  int focal_multiclass(int probs, std::vector<int> targets, const FocalLossConfig& cfg);

  // sum_r a(r, cols[r]) as a 1x1 node; used to target a class logit.
  int gather_sum(int a, std::vector<int> cols);
  int sum_all(int a);

  void backward(int node_id);

  const Mat& val(int id) const { return nodes_[id].value; }
  // Gradient of the last backward() target w.r.t. node `id`; empty if the
  // node was never reached.
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  int size() const { return int(nodes_.size()); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Graph&)> back;
  };

  int push(Mat value, bool requires_grad, std::function<void(Graph&)> back);
  Mat& grad_acc(int id);  // allocate-on-first-touch accumulator

  std::vector<Node> nodes_;
};

// Standard sinusoidal position table, T x d_model. Requires even d_model.
Mat positional_encoding(int seq_len, int d_model);

}  // namespace stagecast::nn
