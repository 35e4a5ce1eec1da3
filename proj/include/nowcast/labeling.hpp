#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nowcast/dataset.hpp"

namespace nowcast::labeling {

/// Property damage extent classes are ordinal: 0 low, 1 medium, 2 high.
inline constexpr int kDefaultPdeClasses = 3;

struct KmeansResult {
  int k = 0;
  Eigen::VectorXd centroids;     // strictly ascending
  std::vector<int> assignments;  // per input point, index into centroids
  double wcss = 0.0;
};

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by wcss
/// (ties resolve to the lower restart index). Centroids are relabeled
/// ascending. The result depends only on the multiset of points: permuting
/// the input permutes assignments identically.
/// Throws when k exceeds the number of distinct point values.
KmeansResult kmeans_1d(const Eigen::Ref<const Eigen::VectorXd>& points, int k, int restarts,
                       std::uint64_t seed);

/// One (k, best-of-restarts wcss) pair per k in [k_lo, k_hi]. k selection is
/// a user decision; no knee detection here.
std::vector<std::pair<int, double>> elbow_curve(const Eigen::Ref<const Eigen::VectorXd>& points,
                                                int k_lo, int k_hi, int restarts,
                                                std::uint64_t seed);

struct CellLabel {
  CellId id;
  double claim_sum = 0.0;
  int pde_class = 0;
};

/// Cluster cells on claim_sum and assign ordinal classes by ascending
/// centroid, so class 0 carries the lowest-damage centroid.
std::vector<CellLabel> label_cells(const std::vector<GridCell>& cells, int k, std::uint64_t seed,
                                   int restarts = 10);

/// labels CSV: cell_col,cell_row,claim_sum,pde_class
void write_cell_labels_csv(const std::string& path, const std::vector<CellLabel>& labels);
std::vector<CellLabel> read_cell_labels_csv(const std::string& path);

/// elbow CSV: k,wcss
void write_elbow_csv(const std::string& path, const std::vector<std::pair<int, double>>& curve);

}  // namespace nowcast::labeling
