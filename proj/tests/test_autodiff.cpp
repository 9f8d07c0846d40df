#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "stagecast/graph.hpp"
#include "stagecast/nn.hpp"
#include "stagecast/rng.hpp"

using namespace stagecast;
using namespace stagecast::nn;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.d) v = rng.normal() * scale;
  return m;
}

std::vector<int> random_targets(int n, int classes, Rng& rng) {
  std::vector<int> t(n);
  for (int& v : t) v = int(rng.uniform_int(0, classes - 1));
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("mlp parameter and input gradients match finite differences") {
  Rng rng(2024);
  MlpConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden = {7, 4};
  cfg.output_dim = 3;
  cfg.head = OutputHead::kSoftmax;
  cfg.dropout = 0.0;

  for (bool training : {false, true}) {
    CAPTURE(training);
    TabularModel model(cfg, 99);
    Mat x = random_mat(6, 5, rng);
    auto targets = random_targets(6, 3, rng);
    FocalLossConfig loss;  // alpha 0.25, gamma 2

    auto g = compute_gradients(model, x, targets, loss, GradWrt::kBoth, training, nullptr);
    auto eval = [&]() {
      Graph gr;
      ForwardOut f = model.forward(gr, x, training, nullptr);
      int l = gr.focal_multiclass(f.probs, targets, loss);
      return gr.val(l)(0, 0);
    };

    fd::Report rep;
    for (auto& e : model.store.entries()) {
      if (!e.trainable) continue;
      fd::check_tensor(eval, e.value, g.by_param.at(e.name), e.name, rep);
    }
    fd::check_tensor(eval, x, g.wrt_tab, "input", rep);
    CHECK(rep.checked > 50);
    CHECK_MESSAGE(rep.max_rel < 1e-4, "worst entry ", rep.worst, " rel ", rep.max_rel);
  }
}

TEST_CASE("binary sigmoid head with focal loss matches finite differences") {
  Rng rng(5);
  MlpConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden = {6};
  cfg.output_dim = 1;
  cfg.head = OutputHead::kSigmoid;
  cfg.dropout = 0.0;
  cfg.batch_norm = false;

  TabularModel model(cfg, 3);
  Mat x = random_mat(8, 4, rng);
  std::vector<int> targets = {1, 0, 1, 1, 0, 0, 1, 0};
  FocalLossConfig loss;
  auto g = compute_gradients(model, x, targets, loss, GradWrt::kBoth);
  auto eval = [&]() {
    Graph gr;
    ForwardOut f = model.forward(gr, x, false, nullptr);
    int l = gr.focal_binary(f.probs, targets, loss);
    return gr.val(l)(0, 0);
  };
  fd::Report rep;
  for (auto& e : model.store.entries()) fd::check_tensor(eval, e.value, g.by_param.at(e.name), e.name, rep);
  fd::check_tensor(eval, x, g.wrt_tab, "input", rep);
  CHECK_MESSAGE(rep.max_rel < 1e-4, "worst entry ", rep.worst, " rel ", rep.max_rel);
}

TEST_CASE("fused attention op matches finite differences") {
  Rng rng(31);
  const int B = 3, T = 5, H = 2, d = 8;

  Mat x = random_mat(B * T, d, rng, 0.7);
  Mat wq = random_mat(d, d, rng, 0.4), wk = random_mat(d, d, rng, 0.4);
  Mat wv = random_mat(d, d, rng, 0.4), wo = random_mat(d, d, rng, 0.4);
  Mat bq = random_mat(1, d, rng, 0.1), bk = random_mat(1, d, rng, 0.1);
  Mat bv = random_mat(1, d, rng, 0.1), bo = random_mat(1, d, rng, 0.1);
  // Fixed mixing vector so the scalar target exercises every output column.
  Mat mix = random_mat(d, 1, rng);

  struct Slot {
    const char* name;
    Mat* m;
  };
  Slot slots[] = {{"x", &x},   {"wq", &wq}, {"bq", &bq}, {"wk", &wk}, {"bk", &bk},
                  {"wv", &wv}, {"bv", &bv}, {"wo", &wo}, {"bo", &bo}};

  auto build = [&](Graph& g, std::vector<int>* ids_out) {
    std::vector<int> ids;
    for (auto& s : slots) ids.push_back(g.leaf(*s.m, true));
    int out = g.multi_head_attention(ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], ids[6],
                                     ids[7], ids[8], B, T, H);
    int target = g.sum_all(g.matmul(out, g.leaf(mix, false)));
    if (ids_out) *ids_out = ids;
    return target;
  };

  Graph g;
  std::vector<int> ids;
  int target = build(g, &ids);
  g.backward(target);
  std::vector<Mat> grads;
  for (int id : ids) grads.push_back(g.grad(id));

  auto eval = [&]() {
    Graph gr;
    return gr.val(build(gr, nullptr))(0, 0);
  };

  fd::Report rep;
  for (std::size_t s = 0; s < std::size(slots); ++s)
    fd::check_tensor(eval, *slots[s].m, grads[s], slots[s].name, rep);
  CHECK(rep.checked > 100);
  CHECK_MESSAGE(rep.max_rel < 1e-4, "worst entry ", rep.worst, " rel ", rep.max_rel);
}

TEST_CASE("transformer block and heavy model match finite differences") {
  Rng rng(77);
  TransformerConfig tc;
  tc.layers = 2;
  tc.heads = 2;
  tc.d_model = 8;
  tc.input_dim = 6;
  tc.seq_len = 5;
  tc.ffn_dim = 16;
  tc.dropout = 0.0;
  MlpConfig tab;
  tab.input_dim = 9;
  tab.hidden = {7};
  tab.output_dim = 0;
  tab.head = OutputHead::kNone;
  tab.dropout = 0.0;
  tab.batch_norm = false;

  HeavyModel model(tc, tab, 3, 1234);
  const int B = 4;
  Mat seq = random_mat(B * tc.seq_len, tc.input_dim, rng, 0.8);
  Mat tabx = random_mat(B, tab.input_dim, rng, 0.8);
  auto targets = random_targets(B, 3, rng);
  FocalLossConfig loss;

  auto g = compute_gradients(model, seq, tabx, targets, loss, GradWrt::kBoth);
  auto eval = [&]() {
    Graph gr;
    ForwardOut f = model.forward(gr, seq, tabx, B, false, nullptr);
    int l = gr.focal_multiclass(f.probs, targets, loss);
    return gr.val(l)(0, 0);
  };

  fd::Report rep;
  for (auto& e : model.store.entries()) {
    if (!e.trainable) continue;
    fd::check_tensor(eval, e.value, g.by_param.at(e.name), e.name, rep);
  }
  fd::check_tensor(eval, seq, g.wrt_seq, "seq", rep);
  fd::check_tensor(eval, tabx, g.wrt_tab, "tab", rep);
  CHECK(rep.checked > 1000);
  CHECK_MESSAGE(rep.max_rel < 1e-4, "worst entry ", rep.worst, " rel ", rep.max_rel);
}

TEST_CASE("gradient of a constant output is zero and linear input gradient is exact") {
  // Linear model w·x built as an MLP with no hidden layers.
  MlpConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden = {};
  cfg.output_dim = 1;
  cfg.head = OutputHead::kNone;
  cfg.dropout = 0.0;
  cfg.batch_norm = false;
  TabularModel model(cfg, 11);
  Mat& w = model.store.at("head.w");
  w = Mat(4, 1, {0.5, -1.25, 2.0, 0.75});

  Mat x(2, 4, {1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.0});
  Graph g;
  ForwardOut f = model.forward(g, x, false, nullptr, true);
  int target = g.sum_all(f.logits);
  g.backward(target);
  const Mat& dx = g.grad(f.input_tab);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) CHECK(dx(i, j) == doctest::Approx(w(j, 0)).epsilon(1e-15));

  // Constant model: zero weights -> zero gradients everywhere.
  w = Mat(4, 1);
  auto gs = compute_gradients(model, x, {0, 0}, FocalLossConfig{1.0, 0.0, {}, 1e-7},
                              GradWrt::kBoth);
  for (double v : gs.wrt_tab.d) CHECK(v == 0.0);
}

TEST_SUITE_END();
