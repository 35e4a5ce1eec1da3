#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "nowcast/dataset.hpp"

namespace nowcast::metrics {

struct ConfusionMatrix {
  Eigen::MatrixXi counts;  // (actual, predicted)

  std::int64_t total() const { return counts.cast<std::int64_t>().sum(); }

  /// Rows divided by their sums; empty rows stay zero.
  Eigen::MatrixXd row_normalized() const;
};

ConfusionMatrix confusion(const std::vector<int>& actual, const std::vector<int>& predicted,
                          int num_classes);

/// One-vs-rest reduction of a multiclass confusion matrix.
struct BinaryCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

BinaryCounts one_vs_rest(const ConfusionMatrix& cm, int positive_class);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  // zero-denominator cases report 0 with the flag set instead of NaN
  bool precision_degenerate = false;
  bool recall_degenerate = false;
};

PrecisionRecall precision_recall(const BinaryCounts& counts);

/// Operating points indexed by descending score threshold. Tied scores
/// collapse into a single threshold, so recall is non-decreasing.
struct PrOperatingPoint {
  double threshold = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

struct PrCurve {
  std::vector<PrOperatingPoint> points;
};

/// Throws when no positive labels exist.
PrCurve pr_curve(const std::vector<double>& scores, const std::vector<bool>& positives);

/// AP = sum_i (R_i - R_{i-1}) * P_i with R_0 = 0 over the PR curve.
double average_precision(const PrCurve& curve);
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positives);

/// One-vs-rest AP per class, scored by that class's probability column.
/// Throws when a class in [0, k) never appears in `labels`.
std::vector<double> per_class_average_precision(const Eigen::Ref<const Eigen::MatrixXd>& probs,
                                                const std::vector<int>& labels);
double mean_average_precision(const Eigen::Ref<const Eigen::MatrixXd>& probs,
                              const std::vector<int>& labels);

double accuracy(const std::vector<int>& actual, const std::vector<int>& predicted);

/// Per-feature agreement between two datasets' marginals: 1 minus the total
/// variation distance over 20 equal-width bins on [0, 1] for numeric
/// features, or over level frequencies for categorical ones.
struct MarginalSimilarity {
  std::vector<double> per_feature;
  double mean = 0.0;
};

MarginalSimilarity marginal_similarity(const TabularDataset& real, const TabularDataset& synthetic);

/// pr_curve CSV: threshold,recall,precision
void write_pr_curve_csv(const std::string& path, const PrCurve& curve);

/// Structured text report: accuracy, per-class AP, mAP, raw and
/// row-normalized confusion matrices.
std::string format_evaluation_report(const ConfusionMatrix& cm,
                                     const std::vector<double>& per_class_ap, double map,
                                     double acc);

}  // namespace nowcast::metrics
