#include "stagecast/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "stagecast/errors.hpp"
#include "stagecast/rng.hpp"

namespace stagecast::features {

using data::Corpus;
using data::RepoRecord;
using nlohmann::json;

NormalizerStats fit_normalizer(const Corpus& corpus, const std::vector<int>& repo_indices) {
  if (repo_indices.empty()) throw DataError("fit_normalizer: empty training set");
  NormalizerStats s;
  s.mean.assign(kBaseFeatures, 0.0);
  s.stddev.assign(kBaseFeatures, 0.0);
  const double n = double(repo_indices.size()) * kSeqLen;
  for (int idx : repo_indices)
    for (const auto& m : corpus[std::size_t(idx)].months)
      for (int f = 0; f < kBaseFeatures; ++f) s.mean[f] += m.metrics[f];
  for (int f = 0; f < kBaseFeatures; ++f) s.mean[f] /= n;
  for (int idx : repo_indices)
    for (const auto& m : corpus[std::size_t(idx)].months)
      for (int f = 0; f < kBaseFeatures; ++f) {
        const double d = m.metrics[f] - s.mean[f];
        s.stddev[f] += d * d;
      }
  for (int f = 0; f < kBaseFeatures; ++f) s.stddev[f] = std::sqrt(s.stddev[f] / n);
  return s;
}

NormalizerStats fit_rows(const std::vector<std::vector<double>>& rows,
                         const std::vector<int>& row_indices) {
  if (row_indices.empty()) throw DataError("fit_rows: empty training set");
  const std::size_t dim = rows[std::size_t(row_indices[0])].size();
  NormalizerStats s;
  s.mean.assign(dim, 0.0);
  s.stddev.assign(dim, 0.0);
  for (int idx : row_indices) {
    const auto& r = rows[std::size_t(idx)];
    if (r.size() != dim) throw DataError("fit_rows: inconsistent row widths");
    for (std::size_t j = 0; j < dim; ++j) s.mean[j] += r[j];
  }
  const double n = double(row_indices.size());
  for (std::size_t j = 0; j < dim; ++j) s.mean[j] /= n;
  for (int idx : row_indices) {
    const auto& r = rows[std::size_t(idx)];
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = r[j] - s.mean[j];
      s.stddev[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < dim; ++j) s.stddev[j] = std::sqrt(s.stddev[j] / n);
  return s;
}

Mat to_level_matrix(const RepoRecord& repo) {
  Mat m(kSeqLen, kBaseFeatures);
  for (int t = 0; t < kSeqLen; ++t)
    for (int f = 0; f < kBaseFeatures; ++f) m(t, f) = repo.months[std::size_t(t)].metrics[f];
  return m;
}

Mat apply_normalizer(const Mat& levels, const NormalizerStats& stats) {
  if (std::size_t(levels.cols) != stats.mean.size())
    throw DataError("apply_normalizer: feature count mismatch");
  Mat out(levels.rows, levels.cols);
  for (int t = 0; t < levels.rows; ++t)
    for (int f = 0; f < levels.cols; ++f)
      out(t, f) = (levels(t, f) - stats.mean[std::size_t(f)]) /
                  (stats.stddev[std::size_t(f)] + stats.epsilon);
  return out;
}

std::vector<double> apply_normalizer_row(const std::vector<double>& row,
                                         const NormalizerStats& stats) {
  if (row.size() != stats.mean.size()) throw DataError("apply_normalizer: width mismatch");
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j)
    out[j] = (row[j] - stats.mean[j]) / (stats.stddev[j] + stats.epsilon);
  return out;
}

Mat invert_normalizer(const Mat& normalized, const NormalizerStats& stats) {
  Mat out(normalized.rows, normalized.cols);
  for (int t = 0; t < normalized.rows; ++t)
    for (int f = 0; f < normalized.cols; ++f)
      out(t, f) = normalized(t, f) * (stats.stddev[std::size_t(f)] + stats.epsilon) +
                  stats.mean[std::size_t(f)];
  return out;
}

Mat compute_deltas(const Mat& x) {
  Mat d(x.rows, x.cols);
  for (int t = 1; t < x.rows; ++t)
    for (int f = 0; f < x.cols; ++f) d(t, f) = x(t, f) - x(t - 1, f);
  return d;
}

Mat assemble_sequence(const Mat& levels, const Mat& deltas) {
  if (!levels.same_shape(deltas)) throw DataError("assemble_sequence: shape mismatch");
  Mat out(levels.rows, 2 * levels.cols);
  for (int t = 0; t < levels.rows; ++t) {
    for (int f = 0; f < levels.cols; ++f) {
      out(t, f) = levels(t, f);
      out(t, levels.cols + f) = deltas(t, f);
    }
  }
  return out;
}

double ols_slope(const double* y, int n) {
  const double tbar = (n - 1) / 2.0;
  double ybar = 0.0;
  for (int t = 0; t < n; ++t) ybar += y[t];
  ybar /= n;
  double num = 0.0, den = 0.0;
  for (int t = 0; t < n; ++t) {
    const double dt = t - tbar;
    num += dt * (y[t] - ybar);
    den += dt * dt;
  }
  return den > 0 ? num / den : 0.0;
}

namespace {

struct WindowStats {
  double mean, std, min, max, slope;
};

WindowStats window_stats(const double* y, int n) {
  WindowStats w{0, 0, y[0], y[0], 0};
  for (int t = 0; t < n; ++t) {
    w.mean += y[t];
    w.min = std::min(w.min, y[t]);
    w.max = std::max(w.max, y[t]);
  }
  w.mean /= n;
  for (int t = 0; t < n; ++t) {
    const double d = y[t] - w.mean;
    w.std += d * d;
  }
  w.std = std::sqrt(w.std / n);
  w.slope = ols_slope(y, n);
  return w;
}

constexpr double kDenGuard = 1e-8;

}  // namespace

std::vector<double> engineer_tabular(const Mat& levels, const Mat& deltas, int k) {
  if (levels.rows < k) throw DataError("engineer_tabular: window longer than the sequence");
  if (!levels.same_shape(deltas)) throw DataError("engineer_tabular: shape mismatch");
  const int t0 = levels.rows - k;
  std::vector<double> out;
  out.reserve(std::size_t(tabular_dim(k)));

  std::vector<double> buf(static_cast<std::size_t>(k));
  std::vector<double> dbuf(static_cast<std::size_t>(k));
  std::vector<double> window_means(static_cast<std::size_t>(levels.cols));
  for (int f = 0; f < levels.cols; ++f) {
    for (int t = 0; t < k; ++t) {
      buf[std::size_t(t)] = levels(t0 + t, f);
      dbuf[std::size_t(t)] = deltas(t0 + t, f);
    }
    for (int t = 0; t < k; ++t) out.push_back(buf[std::size_t(t)]);
    const WindowStats ws = window_stats(buf.data(), k);
    out.push_back(ws.mean);
    out.push_back(ws.std);
    out.push_back(ws.min);
    out.push_back(ws.max);
    out.push_back(ws.slope);
    const WindowStats ds = window_stats(dbuf.data(), k);
    out.push_back(ds.mean);
    out.push_back(ds.std);
    window_means[std::size_t(f)] = ws.mean;
  }

  // Cross features over window means of the normalized metrics.
  using data::Metric;
  auto wm = [&](Metric m) { return window_means[std::size_t(int(m))]; };
  out.push_back(wm(Metric::kCommitCount) + wm(Metric::kIssuesCount));
  const double den = wm(Metric::kCommitterCount);
  out.push_back(std::fabs(den) < kDenGuard ? 0.0 : wm(Metric::kRepeatContributors) / den);
  out.push_back(wm(Metric::kPrAcceptanceRate) * wm(Metric::kPrReviewDurationDays));
  return out;
}

std::vector<std::string> tabular_slot_names(int k) {
  std::vector<std::string> names;
  for (int f = 0; f < kBaseFeatures; ++f) {
    const std::string& base = data::metric_names()[std::size_t(f)];
    for (int t = 0; t < k; ++t) names.push_back(base + "_recent" + std::to_string(t + 1));
    for (const char* s : {"_mean", "_std", "_min", "_max", "_slope", "_dmean", "_dstd"})
      names.push_back(base + s);
  }
  names.push_back("total_activity");
  names.push_back("engagement_ratio");
  names.push_back("review_efficiency");
  return names;
}

std::vector<int> tabular_slot_base_metric(int k) {
  std::vector<int> base;
  for (int f = 0; f < kBaseFeatures; ++f)
    for (int j = 0; j < k + kStatsPerFeature; ++j) base.push_back(f);
  // Cross features carry their defining metric for category purposes.
  base.push_back(int(data::Metric::kCommitCount));        // total activity
  base.push_back(int(data::Metric::kRepeatContributors)); // engagement ratio
  base.push_back(int(data::Metric::kPrAcceptanceRate));   // review efficiency
  return base;
}

bool DatasetSplit::contains(const std::string& split, const std::string& id) const {
  const std::vector<std::string>* v = split == "train" ? &train
                                      : split == "val" ? &val
                                                       : &test;
  return std::find(v->begin(), v->end(), id) != v->end();
}

DatasetSplit split_dataset(const data::Corpus& corpus, uint64_t seed, double train_frac,
                           double val_frac) {
  if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac >= 1.0)
    throw ConfigError("split fractions must be positive and sum below 1");
  const double test_frac = 1.0 - train_frac - val_frac;

  std::map<int, std::vector<int>> by_label;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    by_label[int(corpus[i].label)].push_back(int(i));

  for (const auto& [label, idxs] : by_label)
    if (idxs.size() < 4)
      std::fprintf(stderr,
                   "[split] warning: stage %s has only %zu repos; stratification is best-effort\n",
                   data::stage_names()[std::size_t(label)].c_str(), idxs.size());

  DatasetSplit out;
  for (auto& [label, idxs] : by_label) {
    // Time-aware ordering: earliest-created repos go to train. The seed only
    // breaks exact creation-date ties.
    std::sort(idxs.begin(), idxs.end(), [&](int a, int b) {
      const auto& ra = corpus[std::size_t(a)].meta;
      const auto& rb = corpus[std::size_t(b)].meta;
      if (ra.created_at != rb.created_at) return ra.created_at < rb.created_at;
      return Rng::derive(seed, std::hash<std::string>{}(ra.repo_id)) <
             Rng::derive(seed, std::hash<std::string>{}(rb.repo_id));
    });
    const int n = int(idxs.size());
    // Largest-remainder allocation of n across the three splits.
    const double quota[3] = {train_frac * n, val_frac * n, test_frac * n};
    int alloc[3];
    double frac[3];
    int assigned = 0;
    for (int s = 0; s < 3; ++s) {
      alloc[s] = int(std::floor(quota[s] + 1e-9));
      frac[s] = quota[s] - alloc[s];
      assigned += alloc[s];
    }
    while (assigned < n) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (frac[s] > frac[best] + 1e-12) best = s;
      ++alloc[best];
      frac[best] = -1.0;
      ++assigned;
    }
    // Keep every split populated when the stage has enough repos.
    if (n >= 3)
      for (int s = 0; s < 3; ++s)
        if (alloc[s] == 0) {
          int donor = 0;
          for (int d = 1; d < 3; ++d)
            if (alloc[d] > alloc[donor]) donor = d;
          --alloc[donor];
          ++alloc[s];
        }

    int pos = 0;
    for (int s = 0; s < 3; ++s) {
      auto& dst = s == 0 ? out.train : s == 1 ? out.val : out.test;
      for (int j = 0; j < alloc[s]; ++j) dst.push_back(corpus[std::size_t(idxs[std::size_t(pos++)])].meta.repo_id);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

int FeatureStore::index_of(const std::string& repo_id) const {
  for (std::size_t i = 0; i < repos.size(); ++i)
    if (repos[i].repo_id == repo_id) return int(i);
  return -1;
}

FeatureStore featurize(const data::Corpus& corpus, const DatasetSplit& split, int k) {
  std::map<std::string, int> pos;
  for (std::size_t i = 0; i < corpus.size(); ++i) pos[corpus[i].meta.repo_id] = int(i);
  std::vector<int> train_idx;
  for (const auto& id : split.train) {
    auto it = pos.find(id);
    if (it == pos.end()) throw DataError("split references unknown repo " + id);
    train_idx.push_back(it->second);
  }

  FeatureStore store;
  store.recent_window = k;
  store.temporal = fit_normalizer(corpus, train_idx);

  std::vector<std::vector<double>> raw_tab(corpus.size());
  store.repos.resize(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Mat levels = apply_normalizer(to_level_matrix(corpus[i]), store.temporal);
    const Mat deltas = compute_deltas(levels);
    store.repos[i].repo_id = corpus[i].meta.repo_id;
    store.repos[i].label = corpus[i].label;
    store.repos[i].sequence = assemble_sequence(levels, deltas);
    raw_tab[i] = engineer_tabular(levels, deltas, k);
  }

  store.tabular = fit_rows(raw_tab, train_idx);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    store.repos[i].tabular = apply_normalizer_row(raw_tab[i], store.tabular);
  return store;
}

namespace {

json stats_to_json(const NormalizerStats& s) {
  return json{{"mean", s.mean}, {"stddev", s.stddev}, {"epsilon", s.epsilon}};
}

NormalizerStats stats_from_json(const json& j) {
  NormalizerStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  s.epsilon = j.at("epsilon").get<double>();
  return s;
}

}  // namespace

void write_feature_store(const FeatureStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  json header;
  header["kind"] = "header";
  header["recent_window"] = store.recent_window;
  header["temporal_normalizer"] = stats_to_json(store.temporal);
  header["tabular_normalizer"] = stats_to_json(store.tabular);
  f << header.dump() << '\n';
  for (const auto& r : store.repos) {
    json j;
    j["repo_id"] = r.repo_id;
    j["label"] = data::to_string(r.label);
    j["sequence"] = r.sequence.d;
    j["tabular"] = r.tabular;
    f << j.dump() << '\n';
  }
}

FeatureStore read_feature_store(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifactError("missing feature store: " + path);
  FeatureStore store;
  std::string line;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (!have_header) {
      if (j.value("kind", "") != "header") throw DataError("feature store missing header line");
      store.recent_window = j.at("recent_window").get<int>();
      store.temporal = stats_from_json(j.at("temporal_normalizer"));
      store.tabular = stats_from_json(j.at("tabular_normalizer"));
      have_header = true;
      continue;
    }
    FeatureSet r;
    r.repo_id = j.at("repo_id").get<std::string>();
    r.label = data::stage_from_string(j.at("label").get<std::string>());
    std::vector<double> seq = j.at("sequence").get<std::vector<double>>();
    if (seq.size() != std::size_t(kSeqLen) * kSeqChannels)
      throw DataError("feature store: bad sequence size for " + r.repo_id);
    r.sequence = Mat(kSeqLen, kSeqChannels, std::move(seq));
    r.tabular = j.at("tabular").get<std::vector<double>>();
    if (int(r.tabular.size()) != tabular_dim(store.recent_window))
      throw DataError("feature store: bad tabular size for " + r.repo_id);
    store.repos.push_back(std::move(r));
  }
  if (!have_header) throw DataError("feature store is empty: " + path);
  return store;
}

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

}  // namespace

void write_feature_store_packed(const FeatureStore& store, const std::string& path) {
  std::string out;
  out.append("SFST0001");
  put_u32(out, 1);
  put_u32(out, uint32_t(store.repos.size()));
  put_u32(out, kSeqLen);
  put_u32(out, kSeqChannels);
  put_u32(out, uint32_t(tabular_dim(store.recent_window)));
  for (const auto& r : store.repos) {
    put_u16(out, uint16_t(r.repo_id.size()));
    out.append(r.repo_id);
    out.push_back(char(int(r.label)));
    for (double v : r.sequence.d) put_f32(out, float(v));
    for (double v : r.tabular) put_f32(out, float(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f.write(out.data(), std::streamsize(out.size()));
}

FeatureStore read_feature_store_packed(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("missing feature store: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > buf.size()) throw DataError("packed feature store truncated");
  };
  need(8);
  if (buf.compare(0, 8, "SFST0001") != 0) throw DataError("packed feature store: bad magic");
  pos = 8;
  auto u16 = [&]() {
    need(2);
    uint16_t v = uint16_t(uint8_t(buf[pos])) | uint16_t(uint8_t(buf[pos + 1])) << 8;
    pos += 2;
    return v;
  };
  auto u32 = [&]() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  };
  auto f32 = [&]() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  };
  (void)u32();  // version
  const uint32_t count = u32();
  const uint32_t seq_len = u32();
  const uint32_t channels = u32();
  const uint32_t tab_dim = u32();
  if (seq_len != kSeqLen || channels != kSeqChannels)
    throw DataError("packed feature store: unexpected sequence shape");

  FeatureStore store;
  store.recent_window = int((tab_dim - kCrossFeatures) / kBaseFeatures) - kStatsPerFeature;
  for (uint32_t i = 0; i < count; ++i) {
    FeatureSet r;
    const uint16_t idlen = u16();
    need(idlen);
    r.repo_id = buf.substr(pos, idlen);
    pos += idlen;
    need(1);
    r.label = data::StageLabel(int(buf[pos++]));
    r.sequence = Mat(kSeqLen, kSeqChannels);
    for (double& v : r.sequence.d) v = double(f32());
    r.tabular.resize(tab_dim);
    for (double& v : r.tabular) v = double(f32());
    store.repos.push_back(std::move(r));
  }
  return store;
}

void write_split(const DatasetSplit& split, const data::Corpus& corpus, const std::string& path) {
  std::map<std::string, std::string> label_of;
  for (const auto& r : corpus) label_of[r.meta.repo_id] = data::to_string(r.label);
  auto histogram = [&](const std::vector<std::string>& ids) {
    json h = json::object();
    for (const auto& s : data::stage_names()) h[s] = 0;
    for (const auto& id : ids) {
      auto it = label_of.find(id);
      if (it != label_of.end()) h[it->second] = h[it->second].get<int>() + 1;
    }
    return h;
  };
  json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  j["histograms"] = {{"train", histogram(split.train)},
                     {"val", histogram(split.val)},
                     {"test", histogram(split.test)}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << j.dump(2) << '\n';
}

DatasetSplit read_split(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifactError("missing split file: " + path);
  json j = json::parse(f);
  DatasetSplit s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

}  // namespace stagecast::features
