#pragma once

#include <string>
#include <vector>

#include "stagecast/data.hpp"
#include "stagecast/mat.hpp"

namespace stagecast::features {

using nn::Mat;

inline constexpr int kSeqLen = data::kWindowMonths;        // 24
inline constexpr int kBaseFeatures = data::kNumMetrics;    // 20
inline constexpr int kSeqChannels = 2 * kBaseFeatures;     // 40: levels then deltas
inline constexpr int kDefaultRecentWindow = 6;             // K
inline constexpr int kCrossFeatures = 3;                   // C
inline constexpr int kStatsPerFeature = 5 + 2;             // mean,std,min,max,slope + dmean,dstd

constexpr int tabular_dim(int k = kDefaultRecentWindow) {
  return kBaseFeatures * (k + kStatsPerFeature) + kCrossFeatures;  // 263 for K=6
}

// Per-feature z-score statistics, fitted on the training split only.
struct NormalizerStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
  double epsilon = 1e-8;
};

// Fit over all (repo, month) pairs of the given repos, one entry per base
// metric. Throws DataError on an empty input.
NormalizerStats fit_normalizer(const data::Corpus& corpus, const std::vector<int>& repo_indices);
// Same, over arbitrary row vectors (used for the second-stage tabular fit).
NormalizerStats fit_rows(const std::vector<std::vector<double>>& rows,
                         const std::vector<int>& row_indices);

Mat to_level_matrix(const data::RepoRecord& repo);  // 24 x 20, raw values
Mat apply_normalizer(const Mat& levels, const NormalizerStats& stats);
std::vector<double> apply_normalizer_row(const std::vector<double>& row,
                                         const NormalizerStats& stats);
// x * (sigma + eps) + mu
Mat invert_normalizer(const Mat& normalized, const NormalizerStats& stats);

// delta[0] = 0, delta[t] = x[t] - x[t-1].
Mat compute_deltas(const Mat& normalized_levels);
// 24 x 40, levels first.
Mat assemble_sequence(const Mat& normalized_levels, const Mat& deltas);

// OLS slope of y against 0..n-1.
double ols_slope(const double* y, int n);

// Raw (pre second-stage standardization) tabular vector. Layout per base
// feature f: K most recent values (oldest first), mean, std, min, max, slope,
// delta mean, delta std; then the three cross features.
std::vector<double> engineer_tabular(const Mat& normalized_levels, const Mat& deltas, int k);

// Human-readable name of each tabular slot, e.g. "commit_count_mean".
std::vector<std::string> tabular_slot_names(int k);
// Base metric feeding each slot; the cross features map to their defining
// metrics' categories (see xai::FeatureCategoryMap).
std::vector<int> tabular_slot_base_metric(int k);

struct DatasetSplit {
  std::vector<std::string> train, val, test;
  bool contains(const std::string& split, const std::string& id) const;
};

// Repo-level stratified split. Within each label, repos are ordered by
// creation date (earliest first) and the later-created repos populate
// validation and test. The seed only breaks creation-date ties.
DatasetSplit split_dataset(const data::Corpus& corpus, uint64_t seed, double train_frac = 0.70,
                           double val_frac = 0.15);

struct FeatureSet {
  std::string repo_id;
  data::StageLabel label;
  Mat sequence;                 // 24 x 40
  std::vector<double> tabular;  // 263
};

struct FeatureStore {
  std::vector<FeatureSet> repos;
  NormalizerStats temporal;  // per base metric
  NormalizerStats tabular;   // per tabular slot
  int recent_window = kDefaultRecentWindow;

  int index_of(const std::string& repo_id) const;  // -1 if absent
};

// Fits normalizers on the train split of `split`, then featurizes every repo.
FeatureStore featurize(const data::Corpus& corpus, const DatasetSplit& split,
                       int k = kDefaultRecentWindow);

// Newline-delimited JSON feature store:
//   {"repo_id", "label", "sequence": [960 row-major], "tabular": [263]}
void write_feature_store(const FeatureStore& store, const std::string& path);
FeatureStore read_feature_store(const std::string& path);

// Optional packed binary layout: magic "SFST0001", u32 version, u32 repo
// count, u32 seq_len, u32 channels, u32 tabular dim; per repo: u16 id length,
// id bytes, u8 label, sequence then tabular as little-endian float32.
void write_feature_store_packed(const FeatureStore& store, const std::string& path);
FeatureStore read_feature_store_packed(const std::string& path);

void write_split(const DatasetSplit& split, const data::Corpus& corpus, const std::string& path);
DatasetSplit read_split(const std::string& path);

}  // namespace stagecast::features
