#pragma once

#include <string>
#include <vector>

namespace stagecast::metrics {

// C x C counts, rows = true class, columns = predicted class. Class index
// order is the caller's; the pipeline uses StageLabel order
// (club, contribMid, federation, toy).
struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<long> counts;  // row-major

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c) : n_classes(c), counts(std::size_t(c) * std::size_t(c), 0) {}
  long& at(int t, int p) { return counts[std::size_t(t) * n_classes + p]; }
  long at(int t, int p) const { return counts[std::size_t(t) * n_classes + p]; }
  long total() const;
  long trace() const;
  long row_sum(int t) const;  // support of class t
  long col_sum(int p) const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 int n_classes);

struct PerClass {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
  bool precision_flagged = false;  // no predictions for this class
  bool recall_flagged = false;     // empty class
};

std::vector<PerClass> per_class_metrics(const ConfusionMatrix& cm);

struct AggregateMetrics {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;  // mean per-class recall (default reading)
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
};

// `one_vs_rest_balanced_accuracy` switches balanced accuracy to the mean of
// per-class one-vs-rest accuracies instead of mean recall.
AggregateMetrics aggregate_metrics(const ConfusionMatrix& cm,
                                   bool one_vs_rest_balanced_accuracy = false);

struct EceBin {
  long count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct EceResult {
  double value = 0.0;
  std::vector<EceBin> bins;
};

// Equal-width right-inclusive bins on [0,1]; empty bins contribute zero.
EceResult expected_calibration_error(const std::vector<double>& confidences,
                                     const std::vector<bool>& correct, int n_bins);

struct MetricReport {
  AggregateMetrics aggregate;
  std::vector<PerClass> per_class;
  std::vector<std::string> class_names;
  EceResult ece;
  long n = 0;
};

}  // namespace stagecast::metrics
