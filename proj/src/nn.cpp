#include "stagecast/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "stagecast/errors.hpp"
#include "stagecast/kernels.hpp"

namespace stagecast::nn {

using nlohmann::json;

json to_json(const MlpConfig& c) {
  json j;
  j["input_dim"] = c.input_dim;
  j["hidden"] = c.hidden;
  j["output_dim"] = c.output_dim;
  j["head"] = c.head == OutputHead::kSigmoid  ? "sigmoid"
              : c.head == OutputHead::kSoftmax ? "softmax"
                                               : "none";
  j["dropout"] = c.dropout;
  j["batch_norm"] = c.batch_norm;
  return j;
}

json to_json(const TransformerConfig& c) {
  json j;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["d_model"] = c.d_model;
  j["input_dim"] = c.input_dim;
  j["seq_len"] = c.seq_len;
  j["ffn_dim"] = c.ffn_dim;
  j["dropout"] = c.dropout;
  j["positional_encoding"] = "sinusoidal";
  j["pooling"] = "mean";
  return j;
}

MlpConfig mlp_config_from_json(const json& j) {
  MlpConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.output_dim = j.at("output_dim").get<int>();
  const std::string h = j.at("head").get<std::string>();
  c.head = h == "sigmoid" ? OutputHead::kSigmoid
           : h == "softmax" ? OutputHead::kSoftmax
                            : OutputHead::kNone;
  c.dropout = j.at("dropout").get<double>();
  c.batch_norm = j.at("batch_norm").get<bool>();
  return c;
}

TransformerConfig transformer_config_from_json(const json& j) {
  TransformerConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.input_dim = j.at("input_dim").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

Mat& ParamStore::add(const std::string& name, Mat value, bool trainable) {
  if (index_.count(name)) throw NumericsError("duplicate parameter name: " + name);
  index_[name] = int(entries_.size());
  entries_.push_back({name, std::move(value), trainable});
  return entries_.back().value;
}

Mat& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw NumericsError("unknown parameter: " + name);
  return entries_[it->second].value;
}

const Mat& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NumericsError("unknown parameter: " + name);
  return entries_[it->second].value;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

std::vector<Mat> ParamStore::snapshot() const {
  std::vector<Mat> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

void ParamStore::restore(const std::vector<Mat>& values) {
  if (values.size() != entries_.size()) throw NumericsError("restore: entry count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) entries_[i].value = values[i];
}

int ParamBinder::id(const std::string& name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  const ParamEntry* entry = nullptr;
  for (const auto& e : store_->entries())
    if (e.name == name) {
      entry = &e;
      break;
    }
  if (!entry) throw NumericsError("bind: unknown parameter " + name);
  int node = g_->leaf(entry->value, requires_grad_ && entry->trainable);
  ids_[name] = node;
  bound_.push_back({name, node});
  return node;
}

namespace {

Mat fan_in_uniform(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  const double bound = 1.0 / std::sqrt(double(rows));
  for (double& v : m.d) v = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

void init_mlp_params(ParamStore& store, const MlpConfig& cfg, const std::string& prefix,
                     Rng& rng) {
  int in = cfg.input_dim;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    const int out = cfg.hidden[i];
    const std::string l = prefix + "l" + std::to_string(i) + ".";
    store.add(l + "w", fan_in_uniform(in, out, rng));
    store.add(l + "b", Mat(1, out));
    if (cfg.batch_norm) {
      store.add(l + "bn.gamma", Mat::full(1, out, 1.0));
      store.add(l + "bn.beta", Mat(1, out));
      store.add(l + "bn.mean", Mat(1, out), /*trainable=*/false);
      store.add(l + "bn.var", Mat::full(1, out, 1.0), /*trainable=*/false);
    }
    in = out;
  }
  if (cfg.head != OutputHead::kNone || cfg.output_dim > 0) {
    store.add(prefix + "head.w", fan_in_uniform(in, cfg.output_dim, rng));
    store.add(prefix + "head.b", Mat(1, cfg.output_dim));
  }
}

void init_transformer_params(ParamStore& store, const TransformerConfig& cfg,
                             const std::string& prefix, Rng& rng) {
  store.add(prefix + "proj.w", fan_in_uniform(cfg.input_dim, cfg.d_model, rng));
  store.add(prefix + "proj.b", Mat(1, cfg.d_model));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + "enc" + std::to_string(l) + ".";
    for (const char* n : {"wq", "wk", "wv", "wo"})
      store.add(p + n, fan_in_uniform(cfg.d_model, cfg.d_model, rng));
    for (const char* n : {"bq", "bk", "bv", "bo"}) store.add(p + n, Mat(1, cfg.d_model));
    store.add(p + "ln1.g", Mat::full(1, cfg.d_model, 1.0));
    store.add(p + "ln1.b", Mat(1, cfg.d_model));
    store.add(p + "ff.w1", fan_in_uniform(cfg.d_model, cfg.ffn_dim, rng));
    store.add(p + "ff.b1", Mat(1, cfg.ffn_dim));
    store.add(p + "ff.w2", fan_in_uniform(cfg.ffn_dim, cfg.d_model, rng));
    store.add(p + "ff.b2", Mat(1, cfg.d_model));
    store.add(p + "ln2.g", Mat::full(1, cfg.d_model, 1.0));
    store.add(p + "ln2.b", Mat(1, cfg.d_model));
  }
}

int build_mlp(Graph& g, ParamBinder& pb, const MlpConfig& cfg, const std::string& prefix, int x,
              bool training, Rng* rng) {
  int h = x;
  ParamStore& store = pb.store();
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    const std::string l = prefix + "l" + std::to_string(i) + ".";
    h = g.matmul(h, pb.id(l + "w"));
    h = g.add_rowvec(h, pb.id(l + "b"));
    if (cfg.batch_norm) {
      h = g.batchnorm(h, pb.id(l + "bn.gamma"), pb.id(l + "bn.beta"), &store.at(l + "bn.mean"),
                      &store.at(l + "bn.var"), training);
    }
    h = g.relu(h);
    if (cfg.dropout > 0.0) h = g.dropout(h, cfg.dropout, rng, training);
  }
  if (cfg.head != OutputHead::kNone || cfg.output_dim > 0) {
    h = g.matmul(h, pb.id(prefix + "head.w"));
    h = g.add_rowvec(h, pb.id(prefix + "head.b"));
  }
  return h;
}

int build_transformer(Graph& g, ParamBinder& pb, const TransformerConfig& cfg,
                      const std::string& prefix, int seq, int batch, bool training, Rng* rng,
                      std::vector<Mat>* attn_capture) {
  static thread_local std::map<std::pair<int, int>, Mat> pe_cache;
  auto key = std::make_pair(cfg.seq_len, cfg.d_model);
  auto it = pe_cache.find(key);
  if (it == pe_cache.end()) it = pe_cache.emplace(key, positional_encoding(cfg.seq_len, cfg.d_model)).first;
  const Mat& pe = it->second;

  int h = g.matmul(seq, pb.id(prefix + "proj.w"));
  h = g.add_rowvec(h, pb.id(prefix + "proj.b"));
  h = g.add_positional(h, pe, cfg.seq_len);
  if (cfg.dropout > 0.0) h = g.dropout(h, cfg.dropout, rng, training);

  if (attn_capture) attn_capture->clear();
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + "enc" + std::to_string(l) + ".";
    Mat attn;
    int a = g.multi_head_attention(h, pb.id(p + "wq"), pb.id(p + "bq"), pb.id(p + "wk"),
                                   pb.id(p + "bk"), pb.id(p + "wv"), pb.id(p + "bv"),
                                   pb.id(p + "wo"), pb.id(p + "bo"), batch, cfg.seq_len, cfg.heads,
                                   attn_capture ? &attn : nullptr);
    if (attn_capture) attn_capture->push_back(std::move(attn));
    if (cfg.dropout > 0.0) a = g.dropout(a, cfg.dropout, rng, training);
    h = g.layernorm(g.add(h, a), pb.id(p + "ln1.g"), pb.id(p + "ln1.b"));
    int f = g.matmul(h, pb.id(p + "ff.w1"));
    f = g.add_rowvec(f, pb.id(p + "ff.b1"));
    f = g.relu(f);
    if (cfg.dropout > 0.0) f = g.dropout(f, cfg.dropout, rng, training);
    f = g.matmul(f, pb.id(p + "ff.w2"));
    f = g.add_rowvec(f, pb.id(p + "ff.b2"));
    if (cfg.dropout > 0.0) f = g.dropout(f, cfg.dropout, rng, training);
    h = g.layernorm(g.add(h, f), pb.id(p + "ln2.g"), pb.id(p + "ln2.b"));
  }
  return g.mean_pool_groups(h, cfg.seq_len);
}

std::pair<Mat, Mat> scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v) {
  if (q.cols != k.cols || k.rows != v.rows)
    throw NumericsError("scaled_dot_attention: shape mismatch");
  Mat scores(q.rows, k.rows);
  kernels::matmul_nt(q, k, scores);
  const double inv = 1.0 / std::sqrt(double(q.cols));
  for (double& s : scores.d) s *= inv;
  Mat weights(scores.rows, scores.cols);
  kernels::softmax_rows(scores, weights);
  Mat out(q.rows, v.cols);
  kernels::matmul(weights, v, out);
  return {out, weights};
}

TabularModel::TabularModel(MlpConfig cfg_, uint64_t seed) : cfg(std::move(cfg_)) {
  Rng rng(Rng::derive(seed, 0x7ab));
  init_mlp_params(store, cfg, "", rng);
}

ForwardOut TabularModel::forward(Graph& g, const Mat& x, bool training, Rng* rng,
                                 bool input_grad) {
  if (x.cols != cfg.input_dim) throw NumericsError("tabular forward: input dim mismatch");
  for (double v : x.d)
    if (!std::isfinite(v)) throw NumericsError("tabular forward: non-finite input");
  ForwardOut out;
  ParamBinder pb(g, store);
  out.input_tab = g.leaf(x, input_grad);
  out.logits = build_mlp(g, pb, cfg, "", out.input_tab, training, rng);
  out.probs = cfg.head == OutputHead::kSigmoid  ? g.sigmoid(out.logits)
              : cfg.head == OutputHead::kSoftmax ? g.softmax_rows(out.logits)
                                                 : out.logits;
  out.bound = pb.bound();
  return out;
}

Mat TabularModel::predict_probs(const Mat& x, double temperature) {
  Graph g;
  ForwardOut f = forward(g, x, /*training=*/false, nullptr);
  if (temperature == 1.0) return g.val(f.probs);
  Mat logits = g.val(f.logits);
  for (double& v : logits.d) v /= temperature;
  if (cfg.head == OutputHead::kSigmoid) {
    for (double& v : logits.d) v = 1.0 / (1.0 + std::exp(-v));
    return logits;
  }
  Mat probs(logits.rows, logits.cols);
  kernels::softmax_rows(logits, probs);
  return probs;
}

Mat TabularModel::predict_logits(const Mat& x) {
  Graph g;
  ForwardOut f = forward(g, x, false, nullptr);
  return g.val(f.logits);
}

HeavyModel::HeavyModel(TransformerConfig tcfg_, MlpConfig tab_cfg_, int n_classes_, uint64_t seed)
    : tcfg(tcfg_), tab_cfg(std::move(tab_cfg_)), n_classes(n_classes_) {
  Rng rng(Rng::derive(seed, 0x9e));
  init_transformer_params(store, tcfg, "enc.", rng);
  init_mlp_params(store, tab_cfg, "tab.", rng);
  const int fused = tcfg.d_model + (tab_cfg.hidden.empty() ? tab_cfg.input_dim : tab_cfg.hidden.back());
  store.add("head.w", fan_in_uniform(fused, n_classes, rng));
  store.add("head.b", Mat(1, n_classes));
}

ForwardOut HeavyModel::forward(Graph& g, const Mat& seq, const Mat& tab, int batch, bool training,
                               Rng* rng, bool input_grad, bool capture_attention) {
  if (seq.rows != batch * tcfg.seq_len || seq.cols != tcfg.input_dim)
    throw NumericsError("heavy forward: sequence shape mismatch");
  if (tab.rows != batch || tab.cols != tab_cfg.input_dim)
    throw NumericsError("heavy forward: tabular shape mismatch");
  for (double v : seq.d)
    if (!std::isfinite(v)) throw NumericsError("heavy forward: non-finite sequence input");
  ForwardOut out;
  ParamBinder pb(g, store);
  out.input_seq = g.leaf(seq, input_grad);
  out.input_tab = g.leaf(tab, input_grad);
  int z = build_transformer(g, pb, tcfg, "enc.", out.input_seq, batch, training, rng,
                            capture_attention ? &out.attention : nullptr);
  int ht = build_mlp(g, pb, tab_cfg, "tab.", out.input_tab, training, rng);
  int fused = g.concat_cols(z, ht);
  int logits = g.matmul(fused, pb.id("head.w"));
  logits = g.add_rowvec(logits, pb.id("head.b"));
  out.logits = logits;
  out.probs = g.softmax_rows(logits);
  out.bound = pb.bound();
  return out;
}

Mat HeavyModel::predict_probs(const Mat& seq, const Mat& tab, std::vector<Mat>* attn,
                              double temperature) {
  Graph g;
  ForwardOut f = forward(g, seq, tab, tab.rows, false, nullptr, false, attn != nullptr);
  if (attn) *attn = std::move(f.attention);
  if (temperature == 1.0) return g.val(f.probs);
  Mat logits = g.val(f.logits);
  for (double& v : logits.d) v /= temperature;
  Mat probs(logits.rows, logits.cols);
  kernels::softmax_rows(logits, probs);
  return probs;
}

Mat HeavyModel::predict_logits(const Mat& seq, const Mat& tab) {
  Graph g;
  ForwardOut f = forward(g, seq, tab, tab.rows, false, nullptr);
  return g.val(f.logits);
}

namespace {

void collect_param_grads(Graph& g, const std::vector<std::pair<std::string, int>>& bound,
                         GradientSet& out) {
  for (const auto& [name, id] : bound) {
    if (!g.requires_grad(id)) continue;
    const Mat& gr = g.grad(id);
    Mat m = gr.empty() ? Mat(g.val(id).rows, g.val(id).cols) : gr;
    for (double v : m.d)
      if (!std::isfinite(v)) throw NumericsError("non-finite gradient in parameter " + name);
    out.by_param[name] = std::move(m);
  }
}

int make_loss(Graph& g, const ForwardOut& f, const std::vector<int>& targets,
              const FocalLossConfig& loss, OutputHead head) {
  if (head == OutputHead::kSigmoid) return g.focal_binary(f.probs, targets, loss);
  return g.focal_multiclass(f.probs, targets, loss);
}

}  // namespace

GradientSet compute_gradients(TabularModel& m, const Mat& x, const std::vector<int>& targets,
                              const FocalLossConfig& loss, GradWrt wrt, bool training, Rng* rng) {
  Graph g;
  const bool want_inputs = wrt != GradWrt::kParameters;
  ForwardOut f = m.forward(g, x, training, rng, want_inputs);
  int l = make_loss(g, f, targets, loss, m.cfg.head);
  g.backward(l);
  GradientSet out;
  out.loss = g.val(l)(0, 0);
  if (wrt != GradWrt::kInputs) collect_param_grads(g, f.bound, out);
  if (want_inputs) {
    out.wrt_tab = g.grad(f.input_tab).empty() ? Mat(x.rows, x.cols) : g.grad(f.input_tab);
    for (double v : out.wrt_tab.d)
      if (!std::isfinite(v)) throw NumericsError("non-finite gradient in input");
  }
  return out;
}

GradientSet compute_gradients(HeavyModel& m, const Mat& seq, const Mat& tab,
                              const std::vector<int>& targets, const FocalLossConfig& loss,
                              GradWrt wrt, bool training, Rng* rng) {
  Graph g;
  const bool want_inputs = wrt != GradWrt::kParameters;
  ForwardOut f = m.forward(g, seq, tab, tab.rows, training, rng, want_inputs);
  int l = make_loss(g, f, targets, loss, OutputHead::kSoftmax);
  g.backward(l);
  GradientSet out;
  out.loss = g.val(l)(0, 0);
  if (wrt != GradWrt::kInputs) collect_param_grads(g, f.bound, out);
  if (want_inputs) {
    out.wrt_seq = g.grad(f.input_seq).empty() ? Mat(seq.rows, seq.cols) : g.grad(f.input_seq);
    out.wrt_tab = g.grad(f.input_tab).empty() ? Mat(tab.rows, tab.cols) : g.grad(f.input_tab);
  }
  return out;
}

Mat logit_input_gradient(TabularModel& m, const Mat& x, const std::vector<int>& class_idx) {
  Graph g;
  ForwardOut f = m.forward(g, x, false, nullptr, /*input_grad=*/true);
  int target;
  if (m.cfg.head == OutputHead::kSigmoid) {
    // Signed logit: +z for class 1, -z for class 0; realized as (1xB)·logits.
    Mat sign(1, x.rows);
    for (int i = 0; i < x.rows; ++i) sign(0, i) = class_idx[i] == 1 ? 1.0 : -1.0;
    target = g.matmul(g.leaf(sign, false), f.logits);  // 1x1
  } else {
    target = g.gather_sum(f.logits, class_idx);
  }
  g.backward(target);
  return g.grad(f.input_tab).empty() ? Mat(x.rows, x.cols) : g.grad(f.input_tab);
}

std::pair<Mat, Mat> logit_input_gradient(HeavyModel& m, const Mat& seq, const Mat& tab,
                                         const std::vector<int>& class_idx) {
  Graph g;
  ForwardOut f = m.forward(g, seq, tab, tab.rows, false, nullptr, /*input_grad=*/true);
  int target = g.gather_sum(f.logits, class_idx);
  g.backward(target);
  Mat ds = g.grad(f.input_seq).empty() ? Mat(seq.rows, seq.cols) : g.grad(f.input_seq);
  Mat dt = g.grad(f.input_tab).empty() ? Mat(tab.rows, tab.cols) : g.grad(f.input_tab);
  return {std::move(ds), std::move(dt)};
}

}  // namespace stagecast::nn
