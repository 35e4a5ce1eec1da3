#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "helpers.hpp"
#include "nowcast/csv.hpp"
#include "nowcast/labeling.hpp"
#include "nowcast/rng.hpp"
#include "oracles.hpp"

using namespace nowcast;
using namespace nowcast::labeling;

namespace {

Eigen::VectorXd to_vector(const std::vector<double>& values) {
  return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                           static_cast<Eigen::Index>(values.size()));
}

}  // namespace

TEST_CASE("kmeans_1d recovers exact clusters") {
  const auto result = kmeans_1d(to_vector({0, 0, 10, 10}), 2, 10, 1);
  CHECK(result.centroids[0] == doctest::Approx(0.0));
  CHECK(result.centroids[1] == doctest::Approx(10.0));
  CHECK(result.wcss == doctest::Approx(0.0));
  CHECK(result.assignments == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("kmeans_1d on {0,1,9,10} with k=2 gives centroids {0.5, 9.5} and wcss 1") {
  const auto result = kmeans_1d(to_vector({0, 1, 9, 10}), 2, 10, 7);
  CHECK(result.centroids[0] == doctest::Approx(0.5));
  CHECK(result.centroids[1] == doctest::Approx(9.5));
  CHECK(result.wcss == doctest::Approx(1.0));
  // matches the exhaustive contiguous-partition optimum
  CHECK(oracles::kmeans_optimal_wcss({0, 1, 9, 10}, 2) == doctest::Approx(1.0));
}

TEST_CASE("kmeans_1d with k equal to the distinct count has zero wcss") {
  const auto result = kmeans_1d(to_vector({3, 3, 1, 4, 4, 1, 5}), 4, 10, 5);
  CHECK(result.wcss == doctest::Approx(0.0));
}

TEST_CASE("kmeans_1d rejects k beyond the distinct point count") {
  CHECK_THROWS_AS(kmeans_1d(to_vector({5, 5, 5}), 3, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_1d(to_vector({}), 1, 10, 1), std::invalid_argument);
}

TEST_CASE("kmeans_1d best-of-restarts matches the exhaustive partition optimum") {
  Rng rng(101);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = static_cast<int>(rng.uniform_int(5, 100));
    const int k = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<double> points;
    for (int i = 0; i < n; ++i) points.push_back(rng.uniform(0, 10));
    const auto result = kmeans_1d(to_vector(points), k, 10, rng.next_u64());
    const double optimal = oracles::kmeans_optimal_wcss(points, k);
    CHECK(std::abs(result.wcss - optimal) < 1e-9);
  }
}

TEST_CASE("kmeans_1d is deterministic and permutation equivariant") {
  Rng rng(55);
  std::vector<double> points;
  for (int i = 0; i < 60; ++i) points.push_back(rng.uniform(0, 5));
  const auto a = kmeans_1d(to_vector(points), 3, 10, 99);
  const auto b = kmeans_1d(to_vector(points), 3, 10, 99);
  CHECK(a.centroids == b.centroids);
  CHECK(a.assignments == b.assignments);
  CHECK(a.wcss == b.wcss);

  // permute the inputs: centroids and wcss unchanged, assignments permuted identically
  std::vector<int> perm(points.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<double> shuffled(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    shuffled[i] = points[static_cast<std::size_t>(perm[i])];
  }
  const auto c = kmeans_1d(to_vector(shuffled), 3, 10, 99);
  CHECK(c.centroids == a.centroids);
  CHECK(c.wcss == a.wcss);
  for (std::size_t i = 0; i < points.size(); ++i) {
    CHECK(c.assignments[i] == a.assignments[static_cast<std::size_t>(perm[i])]);
  }
}

TEST_CASE("elbow_curve covers the k range and is non-increasing") {
  Rng rng(77);
  std::vector<double> points;
  for (int i = 0; i < 120; ++i) {
    const double center = 3.0 * static_cast<double>(rng.uniform_int(0, 2));
    points.push_back(center + 0.2 * rng.normal());
  }
  const auto curve = elbow_curve(to_vector(points), 1, 6, 10, 42);
  REQUIRE(curve.size() == 6);
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(curve[i].first == static_cast<int>(i) + 1);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].second <= curve[i - 1].second);
}

TEST_CASE("elbow_curve single k equals n times the population variance") {
  const std::vector<double> points = {1, 2, 3, 4, 5, 6};
  const auto curve = elbow_curve(to_vector(points), 1, 1, 10, 1);
  REQUIRE(curve.size() == 1);
  double mean = 0.0;
  for (const double p : points) mean += p;
  mean /= static_cast<double>(points.size());
  double expected = 0.0;
  for (const double p : points) expected += (p - mean) * (p - mean);
  CHECK(curve[0].second == doctest::Approx(expected));

  const auto degenerate = elbow_curve(to_vector({5, 5, 5}), 1, 1, 10, 1);
  CHECK(degenerate[0].second == doctest::Approx(0.0));
}

TEST_CASE("label_cells orders classes by ascending damage centroid") {
  std::vector<GridCell> cells;
  for (int i = 0; i < 96; ++i) cells.push_back({{i, 0}, 0.0, 0});
  cells.push_back({{96, 0}, 0.5, 1});
  for (int i = 0; i < 3; ++i) cells.push_back({{97 + i, 0}, 3.0, 1});
  const auto labels = label_cells(cells, 3, 2024);
  REQUIRE(labels.size() == 100);
  for (std::size_t i = 0; i < 96; ++i) CHECK(labels[i].pde_class == 0);
  CHECK(labels[96].pde_class == 1);
  for (std::size_t i = 97; i < 100; ++i) CHECK(labels[i].pde_class == 2);
  // zero within-cluster scatter is the exhaustive optimum here
  CHECK(oracles::kmeans_optimal_wcss({0, 0.5, 3.0, 3.0, 3.0}, 3) == doctest::Approx(0.0));
}

TEST_CASE("label_cells rejects constant claim sums for k=3") {
  std::vector<GridCell> cells = {{{0, 0}, 1.0, 0}, {{1, 0}, 1.0, 0}, {{2, 0}, 1.0, 0}};
  CHECK_THROWS_AS(label_cells(cells, 3, 1), std::invalid_argument);
}

TEST_CASE("label_cells regenerates the study-shaped class histogram") {
  // 96.4% / 0.8% / 2.8% of 1000 cells at well separated damage levels
  Rng rng(31);
  std::vector<GridCell> cells;
  int col = 0;
  for (int i = 0; i < 964; ++i) cells.push_back({{col++, 0}, 0.02 * rng.uniform(), 0});
  for (int i = 0; i < 8; ++i) cells.push_back({{col++, 0}, 0.9 + 0.1 * rng.uniform(), 0});
  for (int i = 0; i < 28; ++i) cells.push_back({{col++, 0}, 2.5 + 0.3 * rng.uniform(), 0});
  const auto labels = label_cells(cells, 3, 9);
  std::vector<int> histogram(3, 0);
  for (const auto& label : labels) histogram[static_cast<std::size_t>(label.pde_class)] += 1;
  CHECK(histogram == std::vector<int>{964, 8, 28});
}

TEST_CASE("label ordinality holds on random labeled data") {
  Rng rng(67);
  std::vector<GridCell> cells;
  for (int i = 0; i < 400; ++i) {
    cells.push_back({{i, 0}, rng.uniform(0, 4), 0});
  }
  const auto labels = label_cells(cells, 3, 13);
  std::vector<double> mean(3, 0.0);
  std::vector<int> count(3, 0);
  for (const auto& label : labels) {
    mean[static_cast<std::size_t>(label.pde_class)] += label.claim_sum;
    count[static_cast<std::size_t>(label.pde_class)] += 1;
  }
  REQUIRE(count[0] > 0);
  REQUIRE(count[1] > 0);
  REQUIRE(count[2] > 0);
  for (int c = 0; c < 3; ++c) {
    mean[static_cast<std::size_t>(c)] /= count[static_cast<std::size_t>(c)];
  }
  CHECK(mean[0] < mean[1]);
  CHECK(mean[1] < mean[2]);
}

TEST_CASE("cell label and elbow CSV artifacts round-trip") {
  const std::string dir = helpers::make_temp_dir("labels");
  const std::vector<CellLabel> labels = {{{0, 0}, 0.25, 0}, {{4, 2}, 1.5, 2}};
  write_cell_labels_csv(dir + "/labels.csv", labels);
  const auto loaded = read_cell_labels_csv(dir + "/labels.csv");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[1].id == CellId{4, 2});
  CHECK(loaded[1].claim_sum == 1.5);
  CHECK(loaded[1].pde_class == 2);

  write_elbow_csv(dir + "/elbow.csv", {{1, 10.0}, {2, 2.5}});
  CHECK_NOTHROW(read_csv(dir + "/elbow.csv"));
}
