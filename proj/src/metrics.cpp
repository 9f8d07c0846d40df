#include "stagecast/metrics.hpp"

#include <cmath>

#include "stagecast/errors.hpp"

namespace stagecast::metrics {

long ConfusionMatrix::total() const {
  long n = 0;
  for (long c : counts) n += c;
  return n;
}

long ConfusionMatrix::trace() const {
  long n = 0;
  for (int i = 0; i < n_classes; ++i) n += at(i, i);
  return n;
}

long ConfusionMatrix::row_sum(int t) const {
  long n = 0;
  for (int p = 0; p < n_classes; ++p) n += at(t, p);
  return n;
}

long ConfusionMatrix::col_sum(int p) const {
  long n = 0;
  for (int t = 0; t < n_classes; ++t) n += at(t, p);
  return n;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 int n_classes) {
  if (truth.size() != predicted.size())
    throw DataError("confusion_matrix: label list length mismatch");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes)
      throw DataError("confusion_matrix: label out of range");
    ++cm.at(truth[i], predicted[i]);
  }
  return cm;
}

std::vector<PerClass> per_class_metrics(const ConfusionMatrix& cm) {
  std::vector<PerClass> out(std::size_t(cm.n_classes));
  for (int c = 0; c < cm.n_classes; ++c) {
    PerClass& pc = out[std::size_t(c)];
    const long tp = cm.at(c, c);
    const long pred = cm.col_sum(c);
    const long sup = cm.row_sum(c);
    pc.support = sup;
    if (pred > 0) {
      pc.precision = double(tp) / double(pred);
    } else {
      pc.precision_flagged = true;
    }
    if (sup > 0) {
      pc.recall = double(tp) / double(sup);
    } else {
      pc.recall_flagged = true;
    }
    const double pr = pc.precision + pc.recall;
    pc.f1 = pr > 0 ? 2.0 * pc.precision * pc.recall / pr : 0.0;
  }
  return out;
}

AggregateMetrics aggregate_metrics(const ConfusionMatrix& cm, bool one_vs_rest_balanced_accuracy) {
  AggregateMetrics agg;
  const long n = cm.total();
  if (n == 0) throw DataError("aggregate_metrics: empty confusion matrix");
  agg.accuracy = double(cm.trace()) / double(n);

  const auto pcs = per_class_metrics(cm);
  double recall_sum = 0.0, f1_sum = 0.0, wf1 = 0.0, ovr_sum = 0.0;
  for (int c = 0; c < cm.n_classes; ++c) {
    const PerClass& pc = pcs[std::size_t(c)];
    recall_sum += pc.recall;
    f1_sum += pc.f1;
    wf1 += double(pc.support) / double(n) * pc.f1;
    // One-vs-rest accuracy: (TP_c + TN_c) / N.
    const long tp = cm.at(c, c);
    const long fp = cm.col_sum(c) - tp;
    const long fn = cm.row_sum(c) - tp;
    const long tn = n - tp - fp - fn;
    ovr_sum += double(tp + tn) / double(n);
  }
  agg.balanced_accuracy =
      (one_vs_rest_balanced_accuracy ? ovr_sum : recall_sum) / double(cm.n_classes);
  agg.macro_f1 = f1_sum / double(cm.n_classes);
  agg.weighted_f1 = wf1;
  return agg;
}

EceResult expected_calibration_error(const std::vector<double>& confidences,
                                     const std::vector<bool>& correct, int n_bins) {
  if (confidences.size() != correct.size())
    throw DataError("ece: confidence/correctness length mismatch");
  if (n_bins < 1) throw DataError("ece: need at least one bin");
  EceResult res;
  res.bins.assign(std::size_t(n_bins), {});
  std::vector<double> conf_sum(std::size_t(n_bins), 0.0);
  std::vector<long> hit(std::size_t(n_bins), 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (c < 0.0 || c > 1.0) throw DataError("ece: confidence outside [0,1]");
    // Right-inclusive bins ((m-1)/M, m/M]; zero lands in the first bin.
    int b = c <= 0.0 ? 0 : int(std::ceil(c * n_bins)) - 1;
    b = std::min(std::max(b, 0), n_bins - 1);
    ++res.bins[std::size_t(b)].count;
    conf_sum[std::size_t(b)] += c;
    if (correct[i]) ++hit[std::size_t(b)];
  }
  const double n = double(confidences.size());
  double ece = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    EceBin& bin = res.bins[std::size_t(b)];
    if (bin.count == 0) continue;
    bin.mean_confidence = conf_sum[std::size_t(b)] / double(bin.count);
    bin.accuracy = double(hit[std::size_t(b)]) / double(bin.count);
    ece += double(bin.count) / n * std::fabs(bin.accuracy - bin.mean_confidence);
  }
  res.value = ece;
  return res;
}

}  // namespace stagecast::metrics
