#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "nowcast/csv.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/rng.hpp"
#include "oracles.hpp"

using namespace nowcast;
using namespace nowcast::metrics;

TEST_CASE("confusion tallies counts with a row-normalized view") {
  const auto identity = confusion({0, 1, 2}, {0, 1, 2}, 3);
  CHECK(identity.counts(0, 0) == 1);
  CHECK(identity.counts(1, 1) == 1);
  CHECK(identity.counts(2, 2) == 1);
  CHECK(identity.total() == 3);

  const auto off = confusion({0, 0}, {1, 1}, 2);
  CHECK(off.counts(0, 1) == 2);
  CHECK(off.counts.sum() == 2);

  const auto cm = confusion({0, 0, 1, 1, 1, 2}, {0, 1, 1, 1, 2, 2}, 3);
  const Eigen::MatrixXd norm = cm.row_normalized();
  for (int a = 0; a < 3; ++a) CHECK(norm.row(a).sum() == doctest::Approx(1.0));

  CHECK_THROWS_AS(confusion({0, 1}, {0}, 2), std::invalid_argument);
}

TEST_CASE("precision_recall handles the degenerate denominators with flags") {
  const auto a = precision_recall({1, 1, 0, 0});
  CHECK(a.precision == doctest::Approx(0.5));
  CHECK(a.recall == doctest::Approx(1.0));
  CHECK_FALSE(a.precision_degenerate);

  const auto b = precision_recall({0, 0, 3, 0});
  CHECK(b.precision == 0.0);
  CHECK(b.precision_degenerate);
  CHECK_FALSE(b.recall_degenerate);

  const auto c = precision_recall({2, 0, 2, 0});
  CHECK(c.precision == doctest::Approx(1.0));
  CHECK(c.recall == doctest::Approx(0.5));
}

TEST_CASE("one_vs_rest reduces the multiclass matrix") {
  const auto cm = confusion({0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 2, 0}, 3);
  const auto counts = one_vs_rest(cm, 2);
  CHECK(counts.tp == 2);
  CHECK(counts.fn == 1);
  CHECK(counts.fp == 0);
  CHECK(counts.tn == 3);
}

TEST_CASE("average_precision reproduces the worked four-point example") {
  const std::vector<double> scores = {0.9, 0.8, 0.7, 0.6};
  const std::vector<bool> positives = {true, false, true, false};
  const double ap = average_precision(scores, positives);
  CHECK(ap == doctest::Approx(0.5 * 1.0 + 0.0 * 0.5 + 0.5 * (2.0 / 3.0) + 0.0 * 0.5).epsilon(1e-12));
  CHECK(ap == doctest::Approx(oracles::ap_threshold_sweep(scores, positives)).epsilon(1e-12));

  const auto curve = pr_curve(scores, positives);
  REQUIRE(curve.points.size() == 4);
  CHECK(curve.points[0].recall == doctest::Approx(0.5));
  CHECK(curve.points[0].precision == doctest::Approx(1.0));
  CHECK(curve.points[3].recall == doctest::Approx(1.0));
}

TEST_CASE("average_precision is 1 for perfect separation and prevalence under ties") {
  CHECK(average_precision({0.9, 0.8, 0.2, 0.1}, {true, true, false, false}) ==
        doctest::Approx(1.0));
  // all scores tied: a single operating point at recall 1, precision = prevalence
  CHECK(average_precision({0.5, 0.5, 0.5, 0.5, 0.5}, {true, false, false, true, false}) ==
        doctest::Approx(0.4));
  CHECK_THROWS_AS(average_precision({0.1, 0.2}, {false, false}), std::invalid_argument);
}

TEST_CASE("average_precision equals the threshold-sweep oracle on random sets") {
  Rng rng(2718);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = static_cast<int>(rng.uniform_int(2, 200));
    std::vector<double> scores;
    std::vector<bool> positives;
    bool any_positive = false;
    for (int i = 0; i < n; ++i) {
      // quantized scores make ties common
      scores.push_back(std::round(rng.uniform() * 20.0) / 20.0);
      const bool p = rng.uniform() < 0.3;
      positives.push_back(p);
      any_positive = any_positive || p;
    }
    if (!any_positive) {
      positives[0] = true;
    }
    const double ap = average_precision(scores, positives);
    const double oracle = oracles::ap_threshold_sweep(scores, positives);
    CHECK(std::abs(ap - oracle) < 1e-12);
    CHECK(ap >= 0.0);
    CHECK(ap <= 1.0 + 1e-12);
  }
}

TEST_CASE("average_precision is invariant under strictly monotone score transforms") {
  Rng rng(31415);
  std::vector<double> scores;
  std::vector<bool> positives;
  for (int i = 0; i < 150; ++i) {
    scores.push_back(rng.uniform(-3, 3));
    positives.push_back(rng.uniform() < 0.25);
  }
  positives[0] = true;
  const double base = average_precision(scores, positives);
  std::vector<double> transformed = scores;
  for (double& s : transformed) s = std::exp(0.7 * s) + 2.0;
  CHECK(average_precision(transformed, positives) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("pr_curve recall is non-decreasing along descending thresholds") {
  Rng rng(999);
  std::vector<double> scores;
  std::vector<bool> positives;
  for (int i = 0; i < 300; ++i) {
    scores.push_back(std::round(rng.uniform() * 10.0) / 10.0);
    positives.push_back(rng.uniform() < 0.4);
  }
  positives[5] = true;
  const auto curve = pr_curve(scores, positives);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].recall >= curve.points[i - 1].recall);
    CHECK(curve.points[i].threshold < curve.points[i - 1].threshold);
  }
  CHECK(curve.points.back().recall == doctest::Approx(1.0));
}

TEST_CASE("mean_average_precision over one-vs-rest classes") {
  SUBCASE("perfect classifier") {
    Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(6, 3);
    const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    for (int i = 0; i < 6; ++i) probs(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    CHECK(mean_average_precision(probs, labels) == doctest::Approx(1.0));
  }
  SUBCASE("uniform constant scores on balanced binary data give 0.5") {
    Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(10, 2, 0.5);
    const std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    CHECK(mean_average_precision(probs, labels) == doctest::Approx(0.5));
  }
  SUBCASE("mAP is the mean of independent per-class APs") {
    Rng rng(8);
    const int n = 60;
    Eigen::MatrixXd probs(n, 3);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      Eigen::Vector3d row(rng.uniform(), rng.uniform(), rng.uniform());
      probs.row(i) = row / row.sum();
      labels.push_back(i < 3 ? i : static_cast<int>(rng.uniform_int(0, 2)));
    }
    const auto per_class = per_class_average_precision(probs, labels);
    const double map = mean_average_precision(probs, labels);
    CHECK(map == doctest::Approx((per_class[0] + per_class[1] + per_class[2]) / 3.0));
    CHECK(map >= 0.0);
    CHECK(map <= 1.0);
  }
  SUBCASE("an absent class is an error naming it") {
    Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(4, 3, 1.0 / 3.0);
    CHECK_THROWS_WITH_AS(mean_average_precision(probs, {0, 0, 1, 1}), doctest::Contains("2"),
                         std::invalid_argument);
  }
}

TEST_CASE("accuracy") {
  CHECK(accuracy({1, 2, 0}, {1, 2, 0}) == doctest::Approx(1.0));
  CHECK(accuracy({1, 1}, {0, 0}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
  // constant majority prediction on 96.4% majority data
  std::vector<int> actual;
  for (int i = 0; i < 964; ++i) actual.push_back(0);
  for (int i = 0; i < 8; ++i) actual.push_back(1);
  for (int i = 0; i < 28; ++i) actual.push_back(2);
  const std::vector<int> predicted(actual.size(), 0);
  CHECK(accuracy(actual, predicted) == doctest::Approx(0.964));
}

namespace {

TabularDataset numeric_dataset(const std::vector<double>& column) {
  TabularDataset data;
  data.schema = FeatureSchema({{"f", FeatureKind::kNumeric, {}}});
  data.rows.resize(static_cast<Eigen::Index>(column.size()), 1);
  for (std::size_t i = 0; i < column.size(); ++i) {
    data.rows(static_cast<Eigen::Index>(i), 0) = column[i];
  }
  return data;
}

TabularDataset categorical_dataset(const std::vector<int>& levels, int n_levels) {
  std::vector<std::string> names;
  for (int l = 0; l < n_levels; ++l) names.push_back("L" + std::to_string(l));
  TabularDataset data;
  data.schema = FeatureSchema({{"c", FeatureKind::kCategorical, names}});
  data.rows.resize(static_cast<Eigen::Index>(levels.size()), 1);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    data.rows(static_cast<Eigen::Index>(i), 0) = levels[i];
  }
  return data;
}

}  // namespace

TEST_CASE("marginal_similarity is 1 on identical data and 0 on disjoint supports") {
  const auto real = numeric_dataset({0.05, 0.1, 0.2, 0.33, 0.41});
  CHECK(marginal_similarity(real, real).mean == doctest::Approx(1.0));

  const auto low = numeric_dataset({0.01, 0.02, 0.04, 0.03});
  const auto high = numeric_dataset({0.91, 0.92, 0.99, 0.97});
  CHECK(marginal_similarity(low, high).mean == doctest::Approx(0.0));
}

TEST_CASE("marginal_similarity matches the direct total-variation value on categorical data") {
  const auto p = categorical_dataset({0, 0, 1, 1}, 2);          // (0.5, 0.5)
  const auto q = categorical_dataset({0, 0, 0, 1}, 2);          // (0.75, 0.25)
  const auto result = marginal_similarity(p, q);
  CHECK(result.per_feature[0] == doctest::Approx(0.75));
  CHECK(result.mean == doctest::Approx(0.75));
}

TEST_CASE("marginal_similarity is symmetric and rejects schema mismatches") {
  Rng rng(4);
  std::vector<double> a;
  std::vector<double> b;
  for (int i = 0; i < 80; ++i) {
    a.push_back(rng.uniform());
    b.push_back(rng.uniform() * rng.uniform());
  }
  const auto da = numeric_dataset(a);
  const auto db = numeric_dataset(b);
  CHECK(marginal_similarity(da, db).mean == doctest::Approx(marginal_similarity(db, da).mean));

  const auto dc = categorical_dataset({0, 1}, 2);
  CHECK_THROWS_AS(marginal_similarity(da, dc), std::invalid_argument);
}

TEST_CASE("pr curve CSV and the evaluation report are written") {
  const std::string dir = helpers::make_temp_dir("metrics");
  const auto curve = pr_curve({0.9, 0.4, 0.2}, {true, false, true});
  write_pr_curve_csv(dir + "/pr.csv", curve);
  const auto table = read_csv(dir + "/pr.csv");
  CHECK(table.header == std::vector<std::string>{"threshold", "recall", "precision"});
  CHECK(table.rows.size() == curve.points.size());

  const auto cm = confusion({0, 1, 2, 2}, {0, 1, 2, 0}, 3);
  const std::string report = format_evaluation_report(cm, {1.0, 1.0, 0.75}, 0.9166, 0.75);
  CHECK(report.find("accuracy: 0.75") != std::string::npos);
  CHECK(report.find("map:") != std::string::npos);
  CHECK(report.find("confusion matrix") != std::string::npos);
}
