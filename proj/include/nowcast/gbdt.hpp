#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nowcast/dataset.hpp"

namespace nowcast::gbdt {

struct TrainConfig {
  int num_trees = 100;
  double learning_rate = 0.1;
  int num_leaves = 31;
  int max_depth = 8;
  int min_data_in_leaf = 20;
  double l2_lambda = 1.0;
  double goss_a = 0.2;  // kept top-gradient fraction
  double goss_b = 0.1;  // uniformly sampled remainder fraction
  bool goss_enabled = true;
  bool efb_enabled = true;
  double efb_max_conflict = 0.0;
  int max_bins = 255;
  std::uint64_t seed = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Binning
// ---------------------------------------------------------------------------

/// Per-feature mapping of raw values to histogram bins. Numeric features bin
/// at empirical quantile boundaries (one bin per distinct value when there
/// are fewer than max_bins); categorical features get one bin per level.
class BinMapper {
 public:
  static BinMapper fit(const TabularDataset& data, int max_bins);

  int num_features() const { return static_cast<int>(kinds_.size()); }
  int num_bins(int feature) const;
  FeatureKind kind(int feature) const { return kinds_.at(static_cast<std::size_t>(feature)); }

  /// Bin index for a raw value. Numeric values above the top boundary fall in
  /// the top bin; an unseen categorical level index throws.
  int bin(int feature, double value) const;

  const std::vector<double>& upper_bounds(int feature) const {
    return bounds_.at(static_cast<std::size_t>(feature));
  }

  friend bool operator==(const BinMapper& a, const BinMapper& b) {
    return a.kinds_ == b.kinds_ && a.bounds_ == b.bounds_ && a.level_counts_ == b.level_counts_;
  }

  // serialization support
  std::vector<FeatureKind> kinds_;
  std::vector<std::vector<double>> bounds_;  // numeric: inclusive upper bound per bin except last
  std::vector<int> level_counts_;            // categorical: number of levels, else 0
};

/// Fit a BinMapper and bin the whole table.
std::pair<BinMapper, Eigen::MatrixXi> quantile_bin(const TabularDataset& data, int max_bins);

// ---------------------------------------------------------------------------
// Exclusive feature bundling
// ---------------------------------------------------------------------------

/// A bundled column. Multi-member bundles encode "all members at their
/// default bin 0" as bundled value 0, and member j's non-default bins as
/// offsets[j] + bin. Single-member bundles pass bins through unchanged.
struct FeatureBundle {
  std::vector<int> members;  // original feature indices
  std::vector<int> offsets;  // aligned with members
  int num_bins = 0;
  bool categorical = false;  // single categorical member; split one-vs-rest

  friend bool operator==(const FeatureBundle& a, const FeatureBundle& b) {
    return a.members == b.members && a.offsets == b.offsets && a.num_bins == b.num_bins &&
           a.categorical == b.categorical;
  }
};

/// Greedy bundling of sparse numeric features whose pairwise conflicts stay
/// under max_conflict * n_rows. Categorical features always stay singleton.
/// Bundles are ordered by their smallest member index.
std::vector<FeatureBundle> efb_bundle(const Eigen::Ref<const Eigen::MatrixXi>& binned,
                                      const BinMapper& mapper, double max_conflict);

/// One singleton bundle per feature (bundling disabled).
std::vector<FeatureBundle> singleton_bundles(const BinMapper& mapper);

/// Bundled matrix: one column per bundle. On a row where several members of
/// one bundle are non-default (a conflict), the first such member wins.
Eigen::MatrixXi apply_bundles(const Eigen::Ref<const Eigen::MatrixXi>& binned,
                              const std::vector<FeatureBundle>& bundles);

/// Member bin recovered from a bundled value; exact when the row is
/// conflict-free.
int bundle_member_bin(const FeatureBundle& bundle, int member_pos, int bundled_value);

/// Which member (position in bundle.members) owns a split threshold.
int bundle_owner_of_threshold(const FeatureBundle& bundle, int threshold);

// ---------------------------------------------------------------------------
// Gradients and sampling
// ---------------------------------------------------------------------------

/// Multiclass softmax cross-entropy derivatives at the given raw scores:
/// g = p - onehot(y), h = p * (1 - p), both n x k.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> softmax_gradients(
    const std::vector<int>& labels, const Eigen::Ref<const Eigen::MatrixXd>& raw_scores);

struct GossSample {
  std::vector<int> indices;  // ascending
  Eigen::VectorXd weights;   // aligned with indices
};

/// Keep the ceil(a*n) largest-|gradient| rows at weight 1 and sample
/// ceil(b*n) of the remainder uniformly without replacement at weight
/// (1-a)/b. Deterministic under seed.
GossSample goss_sample(const Eigen::Ref<const Eigen::VectorXd>& grad_norms, double a, double b,
                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

struct TreeNode {
  int column = -1;     // bundled column; -1 marks a leaf
  int threshold = 0;   // bin threshold: left = bin <= threshold (or == when categorical)
  bool categorical = false;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf log-odds increment
  double gain = 0.0;
  int count = 0;
};

class Tree {
 public:
  explicit Tree(std::vector<TreeNode> nodes = {}) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  bool empty() const { return nodes_.empty(); }

  double value_at(const Eigen::Ref<const Eigen::RowVectorXi>& bundled_row) const;
  int num_leaves() const;
  int depth() const;

 private:
  std::vector<TreeNode> nodes_;
};

/// Grow one tree leaf-wise on the bundled matrix: repeatedly split the
/// frontier leaf of maximal gain
///   gain = G_L^2/(H_L+l) + G_R^2/(H_R+l) - (G_L+G_R)^2/(H_L+H_R+l)
/// until num_leaves, max_depth, min_data_in_leaf, or no positive gain stops
/// growth. Rows with weight 0 are excluded; weights scale g and h. Leaf
/// value is -G/(H+l). Equal gains resolve to the lower column index, then
/// the lower bin. `n_threads` > 1 builds per-column histograms in parallel;
/// results are identical to the serial path.
Tree grow_tree(const Eigen::Ref<const Eigen::MatrixXi>& bundled,
               const std::vector<FeatureBundle>& bundles,
               const Eigen::Ref<const Eigen::VectorXd>& grad,
               const Eigen::Ref<const Eigen::VectorXd>& hess,
               const Eigen::Ref<const Eigen::VectorXd>& weights, const TrainConfig& config,
               int n_threads = 1);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class GbdtModel {
 public:
  FeatureSchema schema;
  BinMapper bin_mapper;
  std::vector<FeatureBundle> bundles;
  int num_classes = 0;
  double learning_rate = 0.0;
  Eigen::VectorXd base_score;          // per class, log prior
  std::vector<std::vector<Tree>> trees;  // [iteration][class]
  TrainConfig config;                  // snapshot of the training configuration
  std::vector<double> train_loss;      // cross-entropy after each iteration

  /// Raw (pre-softmax) scores for one raw-feature row.
  Eigen::VectorXd predict_raw(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;

  /// Class probabilities; softmax of the raw scores, sums to 1.
  Eigen::VectorXd predict_proba(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  Eigen::MatrixXd predict_proba(const TabularDataset& data) const;

  std::vector<int> predict_class(const TabularDataset& data) const;

  /// Bin+bundle a raw row for tree traversal.
  Eigen::RowVectorXi bundle_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

/// Boosted training: per iteration compute softmax gradients at the current
/// scores, optionally GOSS-subsample on the per-row max class-gradient
/// magnitude, grow one tree per class, and advance scores by
/// learning_rate * tree output. Base score is the log class prior.
/// Throws when labels hold a single class, unless allow_single_class.
GbdtModel train(const TabularDataset& data, const std::vector<int>& labels,
                const TrainConfig& config, int num_classes = 0, bool allow_single_class = false);

/// Split counts per original feature; bundle splits are attributed to the
/// member owning the chosen bin range.
Eigen::VectorXi split_importance(const GbdtModel& model);

/// Versioned, human-inspectable text form; round-trips bit-exactly.
std::string to_text(const GbdtModel& model);
GbdtModel model_from_text(const std::string& text);

void save_model(const std::string& path, const GbdtModel& model);
GbdtModel load_model(const std::string& path);

}  // namespace nowcast::gbdt
