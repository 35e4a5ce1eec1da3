#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace nowcast {

// ---------------------------------------------------------------------------
// Claim records and the spatial grid
// ---------------------------------------------------------------------------

enum class ClaimSource { kNfip, kIa };

std::string to_string(ClaimSource source);
ClaimSource claim_source_from_string(const std::string& text);

/// One non-zero structural damage claim, positioned in planar meters.
struct ClaimRecord {
  std::string claim_id;
  ClaimSource source = ClaimSource::kNfip;
  std::string building_id;
  double x = 0.0;
  double y = 0.0;
  double amount = 0.0;  // currency, > 0
};

/// Uniform grid covering the study extent. Cells are half-open in both axes.
struct GridSpec {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 500.0;
  int n_cols = 0;
  int n_rows = 0;
};

struct CellId {
  int col = 0;
  int row = 0;
  friend bool operator==(const CellId& a, const CellId& b) {
    return a.col == b.col && a.row == b.row;
  }
  friend bool operator<(const CellId& a, const CellId& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  }
};

struct GridCell {
  CellId id;
  double claim_sum = 0.0;
  std::int64_t claim_count = 0;
};

/// A point with an attached normalized claim value.
struct WeightedPoint {
  double x = 0.0;
  double y = 0.0;
  double value = 0.0;
};

/// A claim after capping and per-source min-max normalization.
struct NormalizedClaim {
  std::string claim_id;
  ClaimSource source = ClaimSource::kNfip;
  std::string building_id;
  double x = 0.0;
  double y = 0.0;
  double value = 0.0;  // in [0, 1]
};

// ---------------------------------------------------------------------------
// Tabular feature data
// ---------------------------------------------------------------------------

enum class FeatureKind { kNumeric, kCategorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
  std::vector<std::string> levels;  // categorical only; closed set
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureSpec> features);

  int size() const { return static_cast<int>(features_.size()); }
  const FeatureSpec& feature(int i) const { return features_.at(static_cast<std::size_t>(i)); }
  const std::vector<FeatureSpec>& features() const { return features_; }

  /// Index of a named feature, -1 when absent.
  int index_of(const std::string& name) const;

  /// Index of a categorical level; throws on an unknown level (closed sets).
  int level_index(int feature, const std::string& level) const;

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b);

 private:
  std::vector<FeatureSpec> features_;
};

/// Rectangular table of feature values under a schema. Categorical cells hold
/// the integer level index. Labels, when present, are class ids in [0, k).
struct TabularDataset {
  FeatureSchema schema;
  Eigen::MatrixXd rows;     // n x m
  std::vector<int> labels;  // empty when unlabeled, else size n

  Eigen::Index n_rows() const { return rows.rows(); }
  int n_features() const { return schema.size(); }
  bool has_labels() const { return !labels.empty(); }

  /// Enforce the type invariants: shape agreement, finite values, categorical
  /// cells integral and inside their level sets. Throws on violation.
  void validate() const;

  /// Row subset in index order.
  TabularDataset select(const std::vector<int>& indices) const;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Merge the two claim sources: for any building with NFIP records, IA
/// records for that building are dropped. Output sorted by claim_id.
/// Throws on a duplicate claim_id anywhere in the union.
std::vector<ClaimRecord> merge_claims(const std::vector<ClaimRecord>& nfip,
                                      const std::vector<ClaimRecord>& ia);

/// Cap values above the nearest-rank percentile (index ceil(p*n) in the
/// sorted list) at that percentile value. Order preserved. p in (0, 1].
std::vector<double> cap_values(const std::vector<double>& values, double percentile);

/// Min-max scale to [0, 1]; a constant input maps to all zeros.
std::vector<double> min_max_normalize(const std::vector<double>& values);
Eigen::VectorXd min_max_normalize(const Eigen::Ref<const Eigen::VectorXd>& values);

/// Cap at `cap_percentile` and min-max normalize per claim source.
std::vector<NormalizedClaim> normalize_claims(const std::vector<ClaimRecord>& merged,
                                              double cap_percentile);

/// Sum normalized values per building; each building becomes one point at the
/// coordinates of its first claim (claim_id order).
std::vector<WeightedPoint> sum_by_building(const std::vector<NormalizedClaim>& claims);

/// Cell containing a point; half-open [lo, hi) in both axes.
/// Throws when the point lies outside the grid extent.
CellId cell_of(double x, double y, const GridSpec& grid);

/// Sum point values into cells. Every cell of the grid is emitted, zero-claim
/// cells included, in row-major order.
std::vector<GridCell> aggregate_to_grid(const std::vector<WeightedPoint>& claims,
                                        const GridSpec& grid);

/// Largest-remainder apportionment of n into parts proportional to `ratios`.
/// Ratios must be non-negative and sum to 1 (tolerance 1e-9).
std::vector<int> largest_remainder_counts(int n, const std::vector<double>& ratios);

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// claims CSV: claim_id,source,building_id,x,y,amount
std::vector<ClaimRecord> read_claims_csv(const std::string& path);
void write_claims_csv(const std::string& path, const std::vector<ClaimRecord>& claims);

void write_normalized_claims_csv(const std::string& path,
                                 const std::vector<NormalizedClaim>& claims);

/// grid cells CSV: cell_col,cell_row,claim_sum,claim_count
void write_grid_cells_csv(const std::string& path, const std::vector<GridCell>& cells);
std::vector<GridCell> read_grid_cells_csv(const std::string& path);

/// features CSV: cell_col,cell_row,<feature names...>; categorical values as
/// declared level strings. Returns the cell keys alongside the table.
std::pair<std::vector<CellId>, TabularDataset> read_feature_table_csv(
    const std::string& path, const FeatureSchema& schema);

/// dataset table CSV: <feature names...>[,pde_class]
void write_dataset_csv(const std::string& path, const TabularDataset& data);
TabularDataset read_dataset_csv(const std::string& path, const FeatureSchema& schema,
                                bool expect_labels);

}  // namespace nowcast
