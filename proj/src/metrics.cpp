#include "nowcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "nowcast/csv.hpp"

namespace nowcast::metrics {

Eigen::MatrixXd ConfusionMatrix::row_normalized() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    const double row_sum = counts.row(i).cast<double>().sum();
    if (row_sum > 0.0) out.row(i) = counts.row(i).cast<double>() / row_sum;
  }
  return out;
}

ConfusionMatrix confusion(const std::vector<int>& actual, const std::vector<int>& predicted,
                          int num_classes) {
  if (actual.size() != predicted.size()) {
    throw std::invalid_argument("confusion: actual and predicted lengths differ");
  }
  ConfusionMatrix cm;
  cm.counts = Eigen::MatrixXi::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const int a = actual[i];
    const int p = predicted[i];
    if (a < 0 || a >= num_classes || p < 0 || p >= num_classes) {
      throw std::invalid_argument("confusion: label outside [0, k) at row " + std::to_string(i));
    }
    cm.counts(a, p) += 1;
  }
  return cm;
}

BinaryCounts one_vs_rest(const ConfusionMatrix& cm, int positive_class) {
  BinaryCounts counts;
  const int k = static_cast<int>(cm.counts.rows());
  for (int a = 0; a < k; ++a) {
    for (int p = 0; p < k; ++p) {
      const std::int64_t n = cm.counts(a, p);
      if (a == positive_class && p == positive_class) {
        counts.tp += n;
      } else if (a != positive_class && p == positive_class) {
        counts.fp += n;
      } else if (a == positive_class && p != positive_class) {
        counts.fn += n;
      } else {
        counts.tn += n;
      }
    }
  }
  return counts;
}

PrecisionRecall precision_recall(const BinaryCounts& counts) {
  PrecisionRecall pr;
  if (counts.tp + counts.fp > 0) {
    pr.precision = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fp);
  } else {
    pr.precision_degenerate = true;
  }
  if (counts.tp + counts.fn > 0) {
    pr.recall = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn);
  } else {
    pr.recall_degenerate = true;
  }
  return pr;
}

PrCurve pr_curve(const std::vector<double>& scores, const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) {
    throw std::invalid_argument("pr_curve: scores and positives lengths differ");
  }
  std::int64_t num_positive = 0;
  for (const bool p : positives) num_positive += p ? 1 : 0;
  if (num_positive == 0) throw std::invalid_argument("pr_curve: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  PrCurve curve;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    // consume the whole tie group: one operating point per distinct score
    while (i < order.size() && scores[order[i]] == threshold) {
      if (positives[order[i]]) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    PrOperatingPoint point;
    point.threshold = threshold;
    point.recall = static_cast<double>(tp) / static_cast<double>(num_positive);
    point.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    curve.points.push_back(point);
  }
  return curve;
}

double average_precision(const PrCurve& curve) {
  double ap = 0.0;
  double prev_recall = 0.0;
  for (const auto& point : curve.points) {
    ap += (point.recall - prev_recall) * point.precision;
    prev_recall = point.recall;
  }
  return ap;
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positives) {
  return average_precision(pr_curve(scores, positives));
}

std::vector<double> per_class_average_precision(const Eigen::Ref<const Eigen::MatrixXd>& probs,
                                                const std::vector<int>& labels) {
  const int k = static_cast<int>(probs.cols());
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw std::invalid_argument("per_class_average_precision: label count mismatch");
  }
  std::vector<std::int64_t> class_counts(static_cast<std::size_t>(k), 0);
  for (const int label : labels) {
    if (label < 0 || label >= k) throw std::invalid_argument("label outside [0, k)");
    class_counts[static_cast<std::size_t>(label)] += 1;
  }
  std::string missing;
  for (int c = 0; c < k; ++c) {
    if (class_counts[static_cast<std::size_t>(c)] == 0) {
      missing += (missing.empty() ? "" : ", ") + std::to_string(c);
    }
  }
  if (!missing.empty()) {
    throw std::invalid_argument("classes absent from labels: " + missing);
  }

  std::vector<double> ap(static_cast<std::size_t>(k), 0.0);
  for (int c = 0; c < k; ++c) {
    std::vector<double> scores(labels.size());
    std::vector<bool> positives(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs(static_cast<Eigen::Index>(i), c);
      positives[i] = labels[i] == c;
    }
    ap[static_cast<std::size_t>(c)] = average_precision(scores, positives);
  }
  return ap;
}

double mean_average_precision(const Eigen::Ref<const Eigen::MatrixXd>& probs,
                              const std::vector<int>& labels) {
  const std::vector<double> ap = per_class_average_precision(probs, labels);
  return std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(ap.size());
}

double accuracy(const std::vector<int>& actual, const std::vector<int>& predicted) {
  if (actual.size() != predicted.size()) {
    throw std::invalid_argument("accuracy: lengths differ");
  }
  if (actual.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] == predicted[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(actual.size());
}

namespace {

constexpr int kNumericBins = 20;

std::vector<double> column_frequencies(const TabularDataset& data, int feature) {
  const auto& spec = data.schema.feature(feature);
  const int bins = spec.kind == FeatureKind::kNumeric ? kNumericBins
                                                      : static_cast<int>(spec.levels.size());
  std::vector<double> freq(static_cast<std::size_t>(bins), 0.0);
  const Eigen::Index n = data.n_rows();
  if (n == 0) return freq;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = data.rows(i, feature);
    int b;
    if (spec.kind == FeatureKind::kNumeric) {
      b = std::clamp(static_cast<int>(std::floor(v * kNumericBins)), 0, kNumericBins - 1);
    } else {
      b = static_cast<int>(v);
    }
    freq[static_cast<std::size_t>(b)] += 1.0;
  }
  for (double& f : freq) f /= static_cast<double>(n);
  return freq;
}

}  // namespace

MarginalSimilarity marginal_similarity(const TabularDataset& real,
                                       const TabularDataset& synthetic) {
  if (!(real.schema == synthetic.schema)) {
    throw std::invalid_argument("marginal_similarity: schema mismatch");
  }
  MarginalSimilarity result;
  result.per_feature.reserve(static_cast<std::size_t>(real.n_features()));
  for (int j = 0; j < real.n_features(); ++j) {
    const std::vector<double> p = column_frequencies(real, j);
    const std::vector<double> q = column_frequencies(synthetic, j);
    double tv = 0.0;
    for (std::size_t b = 0; b < p.size(); ++b) tv += std::abs(p[b] - q[b]);
    result.per_feature.push_back(1.0 - 0.5 * tv);
  }
  result.mean = std::accumulate(result.per_feature.begin(), result.per_feature.end(), 0.0) /
                static_cast<double>(result.per_feature.size());
  return result;
}

void write_pr_curve_csv(const std::string& path, const PrCurve& curve) {
  CsvTable table;
  table.header = {"threshold", "recall", "precision"};
  for (const auto& point : curve.points) {
    table.rows.push_back(
        {format_double(point.threshold), format_double(point.recall),
         format_double(point.precision)});
  }
  write_csv(path, table);
}

std::string format_evaluation_report(const ConfusionMatrix& cm,
                                     const std::vector<double>& per_class_ap, double map,
                                     double acc) {
  std::ostringstream out;
  const int k = static_cast<int>(cm.counts.rows());
  out << "evaluation report\n";
  out << "accuracy: " << format_double(acc) << "\n";
  for (int c = 0; c < k; ++c) {
    out << "ap class " << c << ": " << format_double(per_class_ap.at(static_cast<std::size_t>(c)))
        << "\n";
  }
  out << "map: " << format_double(map) << "\n";
  out << "confusion matrix (rows actual, cols predicted):\n";
  for (int a = 0; a < k; ++a) {
    for (int p = 0; p < k; ++p) out << (p > 0 ? "," : "") << cm.counts(a, p);
    out << "\n";
  }
  out << "row-normalized confusion matrix:\n";
  const Eigen::MatrixXd norm = cm.row_normalized();
  for (int a = 0; a < k; ++a) {
    for (int p = 0; p < k; ++p) out << (p > 0 ? "," : "") << format_double(norm(a, p));
    out << "\n";
  }
  return out.str();
}

}  // namespace nowcast::metrics
