#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stagecast/graph.hpp"
#include "stagecast/mat.hpp"
#include "stagecast/rng.hpp"

namespace stagecast::nn {

enum class OutputHead { kSigmoid, kSoftmax, kNone };

struct MlpConfig {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;  // 0 with head kNone: the last hidden activation is the output
  OutputHead head = OutputHead::kSoftmax;
  double dropout = 0.1;
  bool batch_norm = true;
};

struct TransformerConfig {
  int layers = 6;
  int heads = 4;
  int d_model = 192;
  int input_dim = 40;
  int seq_len = 24;
  int ffn_dim = 768;  // 4 x d_model
  double dropout = 0.1;
};

nlohmann::json to_json(const MlpConfig&);
nlohmann::json to_json(const TransformerConfig&);
MlpConfig mlp_config_from_json(const nlohmann::json&);
TransformerConfig transformer_config_from_json(const nlohmann::json&);

struct ParamEntry {
  std::string name;
  Mat value;
  bool trainable = true;
};

// Named parameter tensors in registration order; the order defines the
// checkpoint blob layout.
class ParamStore {
 public:
  Mat& add(const std::string& name, Mat value, bool trainable = true);
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  std::vector<Mat> snapshot() const;
  void restore(const std::vector<Mat>& values);

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, int> index_;
};

// Lazily turns store entries into graph leaves, once per graph, and records
// the binding so gradients can be read back by name.
class ParamBinder {
 public:
  ParamBinder(Graph& g, ParamStore& store, bool requires_grad = true)
      : g_(&g), store_(&store), requires_grad_(requires_grad) {}
  int id(const std::string& name);
  const std::vector<std::pair<std::string, int>>& bound() const { return bound_; }
  ParamStore& store() { return *store_; }

 private:
  Graph* g_;
  ParamStore* store_;
  bool requires_grad_;
  std::map<std::string, int> ids_;
  std::vector<std::pair<std::string, int>> bound_;
};

struct ForwardOut {
  int logits = -1;
  int probs = -1;
  int input_tab = -1;
  int input_seq = -1;
  std::vector<std::pair<std::string, int>> bound;
  std::vector<Mat> attention;  // per encoder layer, (B*H*T) x T
};

void init_mlp_params(ParamStore& store, const MlpConfig& cfg, const std::string& prefix, Rng& rng);
void init_transformer_params(ParamStore& store, const TransformerConfig& cfg,
                             const std::string& prefix, Rng& rng);

// Builds the MLP stack. Returns the final hidden node (head kNone) or the
// logits node otherwise via `logits_out`.
int build_mlp(Graph& g, ParamBinder& pb, const MlpConfig& cfg, const std::string& prefix, int x,
              bool training, Rng* rng);

int build_transformer(Graph& g, ParamBinder& pb, const TransformerConfig& cfg,
                      const std::string& prefix, int seq, int batch, bool training, Rng* rng,
                      std::vector<Mat>* attn_capture);

// Single-head scaled dot-product attention on plain matrices; returns
// (outputs, row-stochastic attention weights).
std::pair<Mat, Mat> scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v);

// Tabular MLP classifier (Stage-1, Stage-2 Light, Club-Fed expert, flat
// baseline). Owns its parameters.
class TabularModel {
 public:
  TabularModel() = default;
  TabularModel(MlpConfig cfg, uint64_t seed);

  ForwardOut forward(Graph& g, const Mat& x, bool training, Rng* rng, bool input_grad = false);
  // Eval-mode probabilities, optionally with temperature applied to logits.
  Mat predict_probs(const Mat& x, double temperature = 1.0);
  Mat predict_logits(const Mat& x);

  MlpConfig cfg;
  ParamStore store;
  double temperature = 1.0;
};

// Transformer over the 24x40 sequence plus a tabular MLP branch, fused into a
// softmax head.
class HeavyModel {
 public:
  HeavyModel() = default;
  HeavyModel(TransformerConfig tcfg, MlpConfig tab_cfg, int n_classes, uint64_t seed);

  // seq: (B*seq_len) x input_dim, tab: B x tab_input_dim.
  ForwardOut forward(Graph& g, const Mat& seq, const Mat& tab, int batch, bool training, Rng* rng,
                     bool input_grad = false, bool capture_attention = false);
  Mat predict_probs(const Mat& seq, const Mat& tab, std::vector<Mat>* attn = nullptr,
                    double temperature = 1.0);
  Mat predict_logits(const Mat& seq, const Mat& tab);

  TransformerConfig tcfg;
  MlpConfig tab_cfg;  // head kNone
  int n_classes = 3;
  ParamStore store;
  double temperature = 1.0;
};

enum class GradWrt { kParameters, kInputs, kBoth };

struct GradientSet {
  double loss = 0.0;
  std::map<std::string, Mat> by_param;
  Mat wrt_tab;
  Mat wrt_seq;
};

// Exact gradients of the mean focal loss. Throws NumericsError naming the
// offending tensor if any gradient is non-finite.
GradientSet compute_gradients(TabularModel& m, const Mat& x, const std::vector<int>& targets,
                              const FocalLossConfig& loss, GradWrt wrt, bool training = false,
                              Rng* rng = nullptr);
GradientSet compute_gradients(HeavyModel& m, const Mat& seq, const Mat& tab,
                              const std::vector<int>& targets, const FocalLossConfig& loss,
                              GradWrt wrt, bool training = false, Rng* rng = nullptr);

// Gradients of the summed per-row logit of a chosen class w.r.t. inputs
// (attribution target). `class_idx` has one entry per row of x.
Mat logit_input_gradient(TabularModel& m, const Mat& x, const std::vector<int>& class_idx);
std::pair<Mat, Mat> logit_input_gradient(HeavyModel& m, const Mat& seq, const Mat& tab,
                                         const std::vector<int>& class_idx);

// ---- Checkpoint container ----------------------------------------------
// Binary layout: magic "SCKP0001", u32 header length, UTF-8 JSON header,
// u32 parameter count, then per parameter: u16 name length, name bytes,
// u8 trainable flag, u32 rows, u32 cols, rows*cols little-endian float32 in
// row-major order. Parameter order equals registration order.

struct CheckpointMeta {
  uint64_t seed = 0;
  int epochs_trained = 0;
  double val_accuracy = 0.0;
  double temperature = 1.0;
  std::vector<std::string> class_order;
};

struct Checkpoint {
  std::string model_kind;  // "stage1" | "heavy" | "light" | "expert" | "baseline"
  nlohmann::json config;
  CheckpointMeta meta;
  std::vector<ParamEntry> params;
};

void save_checkpoint(const std::string& path, const std::string& model_kind,
                     const nlohmann::json& config, const ParamStore& store,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::string& path);

TabularModel tabular_from_checkpoint(const Checkpoint& c);
HeavyModel heavy_from_checkpoint(const Checkpoint& c);

nlohmann::json heavy_config_json(const TransformerConfig&, const MlpConfig&, int n_classes);

}  // namespace stagecast::nn
