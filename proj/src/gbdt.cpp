#include "nowcast/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "nowcast/rng.hpp"

namespace nowcast::gbdt {

void TrainConfig::validate() const {
  if (num_trees < 0) throw std::invalid_argument("num_trees must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (num_leaves < 2) throw std::invalid_argument("num_leaves must be >= 2");
  if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
  if (min_data_in_leaf < 1) throw std::invalid_argument("min_data_in_leaf must be >= 1");
  if (l2_lambda < 0.0) throw std::invalid_argument("l2_lambda must be >= 0");
  if (goss_a < 0.0 || goss_b < 0.0 || goss_a + goss_b > 1.0 + 1e-12) {
    throw std::invalid_argument("goss fractions must satisfy 0 <= a, b and a + b <= 1");
  }
  if (efb_max_conflict < 0.0 || efb_max_conflict > 1.0) {
    throw std::invalid_argument("efb_max_conflict must be in [0, 1]");
  }
  if (max_bins < 2) throw std::invalid_argument("max_bins must be >= 2");
}

// ---------------------------------------------------------------------------
// Binning
// ---------------------------------------------------------------------------

int BinMapper::num_bins(int feature) const {
  const auto f = static_cast<std::size_t>(feature);
  if (kinds_.at(f) == FeatureKind::kCategorical) return level_counts_[f];
  return static_cast<int>(bounds_[f].size()) + 1;
}

int BinMapper::bin(int feature, double value) const {
  const auto f = static_cast<std::size_t>(feature);
  if (kinds_.at(f) == FeatureKind::kCategorical) {
    const double floor_v = std::floor(value);
    if (floor_v != value || value < 0.0 || value >= static_cast<double>(level_counts_[f])) {
      throw std::runtime_error("unseen categorical level index " + std::to_string(value) +
                               " for feature " + std::to_string(feature));
    }
    return static_cast<int>(value);
  }
  const auto& bounds = bounds_[f];
  const auto it = std::lower_bound(bounds.begin(), bounds.end(), value);
  return static_cast<int>(it - bounds.begin());  // past the top boundary -> top bin
}

BinMapper BinMapper::fit(const TabularDataset& data, int max_bins) {
  if (max_bins < 2) throw std::invalid_argument("quantile_bin: max_bins must be >= 2");
  data.validate();
  const int m = data.n_features();
  const Eigen::Index n = data.n_rows();
  if (n == 0) throw std::invalid_argument("quantile_bin: empty dataset");

  BinMapper mapper;
  mapper.kinds_.resize(static_cast<std::size_t>(m));
  mapper.bounds_.resize(static_cast<std::size_t>(m));
  mapper.level_counts_.assign(static_cast<std::size_t>(m), 0);

  for (int j = 0; j < m; ++j) {
    const auto& spec = data.schema.feature(j);
    mapper.kinds_[static_cast<std::size_t>(j)] = spec.kind;
    if (spec.kind == FeatureKind::kCategorical) {
      mapper.level_counts_[static_cast<std::size_t>(j)] = static_cast<int>(spec.levels.size());
      continue;
    }
    std::vector<double> sorted(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = data.rows(i, j);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct;
    distinct.reserve(sorted.size());
    for (const double v : sorted) {
      if (distinct.empty() || v != distinct.back()) distinct.push_back(v);
    }
    auto& bounds = mapper.bounds_[static_cast<std::size_t>(j)];
    if (static_cast<int>(distinct.size()) <= max_bins) {
      // one bin per distinct value; boundary = the value itself (inclusive)
      bounds.assign(distinct.begin(), distinct.end() - 1);
    } else {
      for (int b = 1; b < max_bins; ++b) {
        const auto rank = static_cast<std::size_t>(
            std::ceil(static_cast<double>(b) * static_cast<double>(n) / max_bins));
        const double bound = sorted[rank - 1];
        if (bounds.empty() || bound > bounds.back()) bounds.push_back(bound);
      }
    }
  }
  return mapper;
}

std::pair<BinMapper, Eigen::MatrixXi> quantile_bin(const TabularDataset& data, int max_bins) {
  BinMapper mapper = BinMapper::fit(data, max_bins);
  Eigen::MatrixXi binned(data.n_rows(), data.n_features());
  for (int j = 0; j < data.n_features(); ++j) {
    for (Eigen::Index i = 0; i < data.n_rows(); ++i) {
      binned(i, j) = mapper.bin(j, data.rows(i, j));
    }
  }
  return {std::move(mapper), std::move(binned)};
}

// ---------------------------------------------------------------------------
// Exclusive feature bundling
// ---------------------------------------------------------------------------

namespace {

FeatureBundle make_singleton(const BinMapper& mapper, int feature) {
  FeatureBundle bundle;
  bundle.members = {feature};
  bundle.offsets = {0};
  bundle.num_bins = mapper.num_bins(feature);
  bundle.categorical = mapper.kind(feature) == FeatureKind::kCategorical;
  return bundle;
}

}  // namespace

std::vector<FeatureBundle> singleton_bundles(const BinMapper& mapper) {
  std::vector<FeatureBundle> bundles;
  bundles.reserve(static_cast<std::size_t>(mapper.num_features()));
  for (int j = 0; j < mapper.num_features(); ++j) bundles.push_back(make_singleton(mapper, j));
  return bundles;
}

std::vector<FeatureBundle> efb_bundle(const Eigen::Ref<const Eigen::MatrixXi>& binned,
                                      const BinMapper& mapper, double max_conflict) {
  const Eigen::Index n = binned.rows();
  const int m = static_cast<int>(binned.cols());
  const double allowed = max_conflict * static_cast<double>(n);

  // candidates: numeric features, ranked by non-default (bin != 0) count
  std::vector<int> candidates;
  std::vector<Eigen::Index> non_default(static_cast<std::size_t>(m), 0);
  for (int j = 0; j < m; ++j) {
    if (mapper.kind(j) == FeatureKind::kCategorical) continue;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (binned(i, j) != 0) ++non_default[static_cast<std::size_t>(j)];
    }
    candidates.push_back(j);
  }
  std::sort(candidates.begin(), candidates.end(), [&non_default](int a, int b) {
    const auto na = non_default[static_cast<std::size_t>(a)];
    const auto nb = non_default[static_cast<std::size_t>(b)];
    return na != nb ? na > nb : a < b;
  });

  struct Building {
    std::vector<int> members;
    std::vector<char> used;  // rows with any non-default member
    Eigen::Index conflicts = 0;
  };
  std::vector<Building> building;
  for (const int j : candidates) {
    bool placed = false;
    for (auto& bundle : building) {
      Eigen::Index added = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (binned(i, j) != 0 && bundle.used[static_cast<std::size_t>(i)]) ++added;
      }
      if (static_cast<double>(bundle.conflicts + added) <= allowed) {
        bundle.members.push_back(j);
        bundle.conflicts += added;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (binned(i, j) != 0) bundle.used[static_cast<std::size_t>(i)] = 1;
        }
        placed = true;
        break;
      }
    }
    if (!placed) {
      Building fresh;
      fresh.members = {j};
      fresh.used.assign(static_cast<std::size_t>(n), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (binned(i, j) != 0) fresh.used[static_cast<std::size_t>(i)] = 1;
      }
      building.push_back(std::move(fresh));
    }
  }

  std::vector<FeatureBundle> bundles;
  for (auto& b : building) {
    if (b.members.size() == 1) {
      bundles.push_back(make_singleton(mapper, b.members[0]));
      continue;
    }
    std::sort(b.members.begin(), b.members.end());
    FeatureBundle bundle;
    bundle.members = b.members;
    int offset = 0;
    for (const int member : b.members) {
      bundle.offsets.push_back(offset);
      offset += mapper.num_bins(member) - 1;
    }
    bundle.num_bins = offset + 1;
    bundles.push_back(std::move(bundle));
  }
  for (int j = 0; j < m; ++j) {
    if (mapper.kind(j) == FeatureKind::kCategorical) bundles.push_back(make_singleton(mapper, j));
  }
  std::sort(bundles.begin(), bundles.end(), [](const FeatureBundle& a, const FeatureBundle& b) {
    return a.members.front() < b.members.front();
  });
  return bundles;
}

Eigen::MatrixXi apply_bundles(const Eigen::Ref<const Eigen::MatrixXi>& binned,
                              const std::vector<FeatureBundle>& bundles) {
  Eigen::MatrixXi bundled(binned.rows(), static_cast<Eigen::Index>(bundles.size()));
  for (std::size_t c = 0; c < bundles.size(); ++c) {
    const auto& bundle = bundles[c];
    const auto col = static_cast<Eigen::Index>(c);
    if (bundle.members.size() == 1) {
      bundled.col(col) = binned.col(bundle.members[0]);
      continue;
    }
    for (Eigen::Index i = 0; i < binned.rows(); ++i) {
      int value = 0;
      for (std::size_t j = 0; j < bundle.members.size(); ++j) {
        const int bin = binned(i, bundle.members[j]);
        if (bin != 0) {
          value = bundle.offsets[j] + bin;
          break;  // conflict rule: first non-default member wins
        }
      }
      bundled(i, col) = value;
    }
  }
  return bundled;
}

int bundle_member_bin(const FeatureBundle& bundle, int member_pos, int bundled_value) {
  if (bundle.members.size() == 1) return bundled_value;
  if (bundled_value == 0) return 0;
  const int lo = bundle.offsets[static_cast<std::size_t>(member_pos)];
  const int hi = member_pos + 1 < static_cast<int>(bundle.offsets.size())
                     ? bundle.offsets[static_cast<std::size_t>(member_pos) + 1]
                     : bundle.num_bins - 1;
  if (bundled_value > lo && bundled_value <= hi) return bundled_value - lo;
  return 0;
}

int bundle_owner_of_threshold(const FeatureBundle& bundle, int threshold) {
  int owner = 0;
  for (std::size_t j = 0; j < bundle.offsets.size(); ++j) {
    if (bundle.offsets[j] < threshold) owner = static_cast<int>(j);
  }
  return owner;
}

// ---------------------------------------------------------------------------
// Gradients and sampling
// ---------------------------------------------------------------------------

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> softmax_gradients(
    const std::vector<int>& labels, const Eigen::Ref<const Eigen::MatrixXd>& raw_scores) {
  const Eigen::Index n = raw_scores.rows();
  const Eigen::Index k = raw_scores.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw std::invalid_argument("softmax_gradients: label count mismatch");
  }
  Eigen::MatrixXd grad(n, k);
  Eigen::MatrixXd hess(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw std::invalid_argument("softmax_gradients: label outside [0, k)");
    const double max_score = raw_scores.row(i).maxCoeff();
    Eigen::ArrayXd p = (raw_scores.row(i).array() - max_score).exp();
    p /= p.sum();
    for (Eigen::Index c = 0; c < k; ++c) {
      const double pc = p[c];
      grad(i, c) = pc - (c == y ? 1.0 : 0.0);
      hess(i, c) = pc * (1.0 - pc);
    }
  }
  return {std::move(grad), std::move(hess)};
}

GossSample goss_sample(const Eigen::Ref<const Eigen::VectorXd>& grad_norms, double a, double b,
                       std::uint64_t seed) {
  const auto n = static_cast<int>(grad_norms.size());
  if (a < 0.0 || b < 0.0 || a + b > 1.0 + 1e-12) {
    throw std::invalid_argument("goss_sample: need 0 <= a, b and a + b <= 1");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&grad_norms](int x, int y) {
    const double ax = std::abs(grad_norms[x]);
    const double ay = std::abs(grad_norms[y]);
    return ax != ay ? ax > ay : x < y;
  });

  const int n_top = std::min(n, static_cast<int>(std::ceil(a * n)));
  std::vector<std::pair<int, double>> picked;  // (row, weight)
  picked.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n_top; ++i) picked.emplace_back(order[static_cast<std::size_t>(i)], 1.0);

  if (b > 0.0 && n_top < n) {
    std::vector<int> rest(order.begin() + n_top, order.end());
    std::sort(rest.begin(), rest.end());
    const int n_sample =
        std::min(static_cast<int>(rest.size()), static_cast<int>(std::ceil(b * n)));
    Rng rng(seed);
    const std::vector<int> positions =
        rng.sample_without_replacement(static_cast<int>(rest.size()), n_sample);
    const double weight = (1.0 - a) / b;
    for (const int pos : positions) {
      picked.emplace_back(rest[static_cast<std::size_t>(pos)], weight);
    }
  }

  std::sort(picked.begin(), picked.end());
  GossSample sample;
  sample.indices.reserve(picked.size());
  sample.weights.resize(static_cast<Eigen::Index>(picked.size()));
  for (std::size_t i = 0; i < picked.size(); ++i) {
    sample.indices.push_back(picked[i].first);
    sample.weights[static_cast<Eigen::Index>(i)] = picked[i].second;
  }
  return sample;
}

// ---------------------------------------------------------------------------
// Tree growth
// ---------------------------------------------------------------------------

namespace {

struct HistBin {
  double g = 0.0;
  double h = 0.0;
  int count = 0;
};

using ColumnHist = std::vector<HistBin>;

struct SplitChoice {
  double gain = 0.0;
  int column = -1;
  int threshold = -1;
  bool categorical = false;
  bool valid() const { return column >= 0; }
};

struct LeafState {
  int node_id = 0;
  std::vector<int> rows;
  int depth = 0;
  double sum_g = 0.0;
  double sum_h = 0.0;
  std::vector<ColumnHist> hists;
  SplitChoice best;
  bool open = false;  // has an applicable positive-gain split
};

class TreeGrower {
 public:
  TreeGrower(const Eigen::Ref<const Eigen::MatrixXi>& bundled,
             const std::vector<FeatureBundle>& bundles, const Eigen::Ref<const Eigen::VectorXd>& g,
             const Eigen::Ref<const Eigen::VectorXd>& h,
             const Eigen::Ref<const Eigen::VectorXd>& w, const TrainConfig& config, int n_threads)
      : bundled_(bundled),
        bundles_(bundles),
        grad_(g),
        hess_(h),
        weights_(w),
        config_(config),
        n_threads_(std::max(1, n_threads)) {}

  Tree grow() {
    std::vector<int> active;
    for (Eigen::Index i = 0; i < bundled_.rows(); ++i) {
      if (weights_.size() == 0 || weights_[i] > 0.0) active.push_back(static_cast<int>(i));
    }

    LeafState root;
    root.node_id = 0;
    root.rows = std::move(active);
    root.depth = 0;
    accumulate(root);
    nodes_.push_back(make_leaf(root));
    evaluate(root);
    leaves_.push_back(std::move(root));

    while (static_cast<int>(leaves_.size()) < config_.num_leaves) {
      int pick = -1;
      for (std::size_t i = 0; i < leaves_.size(); ++i) {
        if (!leaves_[i].open) continue;
        if (pick < 0 || leaves_[i].best.gain > leaves_[static_cast<std::size_t>(pick)].best.gain) {
          pick = static_cast<int>(i);
        }
      }
      if (pick < 0) break;
      split(static_cast<std::size_t>(pick));
    }
    return Tree(std::move(nodes_));
  }

 private:
  double weight(int row) const { return weights_.size() == 0 ? 1.0 : weights_[row]; }

  TreeNode make_leaf(const LeafState& leaf) const {
    TreeNode node;
    const double denom = leaf.sum_h + config_.l2_lambda;
    node.value = denom > 0.0 ? -leaf.sum_g / denom : 0.0;
    node.count = static_cast<int>(leaf.rows.size());
    return node;
  }

  void accumulate(LeafState& leaf) {
    leaf.sum_g = 0.0;
    leaf.sum_h = 0.0;
    for (const int row : leaf.rows) {
      const double w = weight(row);
      leaf.sum_g += w * grad_[row];
      leaf.sum_h += w * hess_[row];
    }
    build_hists(leaf);
  }

  void build_hists(LeafState& leaf) {
    leaf.hists.assign(bundles_.size(), {});
    auto fill_columns = [this, &leaf](std::size_t begin, std::size_t end) {
      for (std::size_t c = begin; c < end; ++c) {
        ColumnHist& hist = leaf.hists[c];
        hist.assign(static_cast<std::size_t>(bundles_[c].num_bins), HistBin{});
        const auto col = static_cast<Eigen::Index>(c);
        for (const int row : leaf.rows) {
          const double w = weight(row);
          HistBin& bin = hist[static_cast<std::size_t>(bundled_(row, col))];
          bin.g += w * grad_[row];
          bin.h += w * hess_[row];
          bin.count += 1;
        }
      }
    };
    if (n_threads_ <= 1 || bundles_.size() < 2) {
      fill_columns(0, bundles_.size());
      return;
    }
    // per-column accumulations are independent; any chunking gives the same
    // result as the serial loop
    const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(n_threads_),
                                                     bundles_.size());
    std::vector<std::thread> workers;
    const std::size_t step = (bundles_.size() + chunks - 1) / chunks;
    for (std::size_t start = 0; start < bundles_.size(); start += step) {
      workers.emplace_back(fill_columns, start, std::min(start + step, bundles_.size()));
    }
    for (auto& worker : workers) worker.join();
  }

  double gain_of(double gl, double hl, double gr, double hr) const {
    const double lambda = config_.l2_lambda;
    const double g = gl + gr;
    const double h = hl + hr;
    return gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda);
  }

  void evaluate(LeafState& leaf) {
    leaf.best = SplitChoice{};
    leaf.open = false;
    if (leaf.depth >= config_.max_depth) return;
    const int total = static_cast<int>(leaf.rows.size());
    if (total < 2 * config_.min_data_in_leaf) return;

    std::vector<SplitChoice> per_column(bundles_.size());
    auto scan_columns = [this, &leaf, &per_column, total](std::size_t begin, std::size_t end) {
      for (std::size_t c = begin; c < end; ++c) {
        per_column[c] = best_split_in_column(leaf, static_cast<int>(c), total);
      }
    };
    if (n_threads_ <= 1 || bundles_.size() < 2) {
      scan_columns(0, bundles_.size());
    } else {
      const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(n_threads_),
                                                       bundles_.size());
      std::vector<std::thread> workers;
      const std::size_t step = (bundles_.size() + chunks - 1) / chunks;
      for (std::size_t start = 0; start < bundles_.size(); start += step) {
        workers.emplace_back(scan_columns, start, std::min(start + step, bundles_.size()));
      }
      for (auto& worker : workers) worker.join();
    }
    // fixed merge order: lower column wins ties
    for (const auto& choice : per_column) {
      if (choice.valid() && choice.gain > leaf.best.gain) leaf.best = choice;
    }
    leaf.open = leaf.best.valid() && leaf.best.gain > 0.0;
  }

  SplitChoice best_split_in_column(const LeafState& leaf, int column, int total) const {
    const auto& bundle = bundles_[static_cast<std::size_t>(column)];
    const ColumnHist& hist = leaf.hists[static_cast<std::size_t>(column)];
    SplitChoice best;
    if (bundle.num_bins < 2) return best;

    if (bundle.categorical) {
      // one-bin-vs-rest
      for (int b = 0; b < bundle.num_bins; ++b) {
        const HistBin& bin = hist[static_cast<std::size_t>(b)];
        if (bin.count < config_.min_data_in_leaf) continue;
        if (total - bin.count < config_.min_data_in_leaf) continue;
        const double gain = gain_of(bin.g, bin.h, leaf.sum_g - bin.g, leaf.sum_h - bin.h);
        if (gain > best.gain) best = {gain, column, b, true};
      }
      return best;
    }

    double cum_g = 0.0;
    double cum_h = 0.0;
    int cum_count = 0;
    for (int t = 0; t + 1 < bundle.num_bins; ++t) {
      const HistBin& bin = hist[static_cast<std::size_t>(t)];
      cum_g += bin.g;
      cum_h += bin.h;
      cum_count += bin.count;
      if (cum_count < config_.min_data_in_leaf) continue;
      if (total - cum_count < config_.min_data_in_leaf) break;
      const double gain = gain_of(cum_g, cum_h, leaf.sum_g - cum_g, leaf.sum_h - cum_h);
      if (gain > best.gain) best = {gain, column, t, false};
    }
    return best;
  }

  void split(std::size_t leaf_pos) {
    LeafState leaf = std::move(leaves_[leaf_pos]);
    leaves_.erase(leaves_.begin() + static_cast<std::ptrdiff_t>(leaf_pos));
    const SplitChoice choice = leaf.best;
    const auto col = static_cast<Eigen::Index>(choice.column);

    LeafState left;
    LeafState right;
    left.depth = right.depth = leaf.depth + 1;
    for (const int row : leaf.rows) {
      const int bin = bundled_(row, col);
      const bool goes_left = choice.categorical ? bin == choice.threshold : bin <= choice.threshold;
      (goes_left ? left.rows : right.rows).push_back(row);
    }

    // scan-build the smaller child's histograms, derive the sibling by
    // subtraction from the parent
    LeafState& small = left.rows.size() <= right.rows.size() ? left : right;
    LeafState& large = left.rows.size() <= right.rows.size() ? right : left;
    accumulate(small);
    large.sum_g = 0.0;
    large.sum_h = 0.0;
    for (const int row : large.rows) {
      const double w = weight(row);
      large.sum_g += w * grad_[row];
      large.sum_h += w * hess_[row];
    }
    large.hists = std::move(leaf.hists);
    for (std::size_t c = 0; c < large.hists.size(); ++c) {
      ColumnHist& parent = large.hists[c];
      const ColumnHist& sub = small.hists[c];
      for (std::size_t b = 0; b < parent.size(); ++b) {
        parent[b].g -= sub[b].g;
        parent[b].h -= sub[b].h;
        parent[b].count -= sub[b].count;
      }
    }

    left.node_id = static_cast<int>(nodes_.size());
    nodes_.push_back(make_leaf(left));
    right.node_id = static_cast<int>(nodes_.size());
    nodes_.push_back(make_leaf(right));

    TreeNode& parent = nodes_[static_cast<std::size_t>(leaf.node_id)];
    parent.column = choice.column;
    parent.threshold = choice.threshold;
    parent.categorical = choice.categorical;
    parent.left = left.node_id;
    parent.right = right.node_id;
    parent.gain = choice.gain;
    parent.value = 0.0;

    evaluate(left);
    evaluate(right);
    leaves_.push_back(std::move(left));
    leaves_.push_back(std::move(right));
    // keep frontier ordered by node id so equal gains pick the older leaf
    std::sort(leaves_.begin(), leaves_.end(),
              [](const LeafState& a, const LeafState& b) { return a.node_id < b.node_id; });
  }

  const Eigen::Ref<const Eigen::MatrixXi>& bundled_;
  const std::vector<FeatureBundle>& bundles_;
  const Eigen::Ref<const Eigen::VectorXd>& grad_;
  const Eigen::Ref<const Eigen::VectorXd>& hess_;
  const Eigen::Ref<const Eigen::VectorXd>& weights_;
  const TrainConfig& config_;
  int n_threads_;

  std::vector<TreeNode> nodes_;
  std::vector<LeafState> leaves_;
};

}  // namespace

Tree grow_tree(const Eigen::Ref<const Eigen::MatrixXi>& bundled,
               const std::vector<FeatureBundle>& bundles,
               const Eigen::Ref<const Eigen::VectorXd>& grad,
               const Eigen::Ref<const Eigen::VectorXd>& hess,
               const Eigen::Ref<const Eigen::VectorXd>& weights, const TrainConfig& config,
               int n_threads) {
  if (grad.size() != bundled.rows() || hess.size() != bundled.rows()) {
    throw std::invalid_argument("grow_tree: gradient length mismatch");
  }
  if (weights.size() != 0 && weights.size() != bundled.rows()) {
    throw std::invalid_argument("grow_tree: weight length mismatch");
  }
  TreeGrower grower(bundled, bundles, grad, hess, weights, config, n_threads);
  return grower.grow();
}

double Tree::value_at(const Eigen::Ref<const Eigen::RowVectorXi>& bundled_row) const {
  if (nodes_.empty()) return 0.0;
  int id = 0;
  while (nodes_[static_cast<std::size_t>(id)].left >= 0) {
    const TreeNode& node = nodes_[static_cast<std::size_t>(id)];
    const int bin = bundled_row[node.column];
    const bool goes_left = node.categorical ? bin == node.threshold : bin <= node.threshold;
    id = goes_left ? node.left : node.right;
  }
  return nodes_[static_cast<std::size_t>(id)].value;
}

int Tree::num_leaves() const {
  int count = 0;
  for (const auto& node : nodes_) {
    if (node.left < 0) ++count;
  }
  return count;
}

int Tree::depth() const {
  if (nodes_.empty()) return 0;
  int max_depth = 0;
  std::vector<std::pair<int, int>> stack = {{0, 0}};
  while (!stack.empty()) {
    const auto [id, d] = stack.back();
    stack.pop_back();
    const TreeNode& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      max_depth = std::max(max_depth, d);
    } else {
      stack.emplace_back(node.left, d + 1);
      stack.emplace_back(node.right, d + 1);
    }
  }
  return max_depth;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

double cross_entropy(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double max_score = scores.row(i).maxCoeff();
    const double log_sum = std::log((scores.row(i).array() - max_score).exp().sum()) + max_score;
    loss += log_sum - scores(i, labels[static_cast<std::size_t>(i)]);
  }
  return loss / static_cast<double>(scores.rows());
}

}  // namespace

GbdtModel train(const TabularDataset& data, const std::vector<int>& labels,
                const TrainConfig& config, int num_classes, bool allow_single_class) {
  config.validate();
  data.validate();
  const Eigen::Index n = data.n_rows();
  if (n == 0) throw std::invalid_argument("train: empty dataset");
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw std::invalid_argument("train: label count mismatch");
  }

  int max_label = 0;
  for (const int y : labels) {
    if (y < 0) throw std::invalid_argument("train: negative label");
    max_label = std::max(max_label, y);
  }
  const int k = num_classes > 0 ? num_classes : max_label + 1;
  if (max_label >= k) throw std::invalid_argument("train: label outside [0, num_classes)");
  std::vector<Eigen::Index> class_counts(static_cast<std::size_t>(k), 0);
  for (const int y : labels) class_counts[static_cast<std::size_t>(y)] += 1;
  const auto present =
      std::count_if(class_counts.begin(), class_counts.end(), [](Eigen::Index c) { return c > 0; });
  if (present < 2 && !allow_single_class) {
    throw std::invalid_argument("train: labels hold a single class");
  }

  GbdtModel model;
  model.schema = data.schema;
  model.config = config;
  model.num_classes = k;
  model.learning_rate = config.learning_rate;

  auto [mapper, binned] = quantile_bin(data, config.max_bins);
  model.bin_mapper = std::move(mapper);
  model.bundles = config.efb_enabled
                      ? efb_bundle(binned, model.bin_mapper, config.efb_max_conflict)
                      : singleton_bundles(model.bin_mapper);
  const Eigen::MatrixXi bundled = apply_bundles(binned, model.bundles);

  model.base_score.resize(k);
  for (int c = 0; c < k; ++c) {
    const double prior =
        static_cast<double>(class_counts[static_cast<std::size_t>(c)]) / static_cast<double>(n);
    model.base_score[c] = std::log(std::max(prior, 1e-12));
  }

  Eigen::MatrixXd scores = model.base_score.transpose().replicate(n, 1);
  model.train_loss.push_back(cross_entropy(scores, labels));

  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  for (int t = 0; t < config.num_trees; ++t) {
    auto [grad, hess] = softmax_gradients(labels, scores);

    Eigen::VectorXd weights = ones;
    if (config.goss_enabled) {
      const Eigen::VectorXd norms = grad.cwiseAbs().rowwise().maxCoeff();
      const GossSample sample = goss_sample(norms, config.goss_a, config.goss_b,
                                            Rng::derive(config.seed, 0x9055u + static_cast<std::uint64_t>(t)));
      weights = Eigen::VectorXd::Zero(n);
      for (std::size_t i = 0; i < sample.indices.size(); ++i) {
        weights[sample.indices[i]] = sample.weights[static_cast<Eigen::Index>(i)];
      }
    }

    std::vector<Tree> iteration;
    iteration.reserve(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      Tree tree = grow_tree(bundled, model.bundles, grad.col(c), hess.col(c), weights, config);
      for (Eigen::Index i = 0; i < n; ++i) {
        scores(i, c) += config.learning_rate * tree.value_at(bundled.row(i));
      }
      iteration.push_back(std::move(tree));
    }
    model.trees.push_back(std::move(iteration));
    model.train_loss.push_back(cross_entropy(scores, labels));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

Eigen::RowVectorXi GbdtModel::bundle_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (row.size() != schema.size()) {
    throw std::invalid_argument("predict: row width does not match schema");
  }
  Eigen::RowVectorXi bins(schema.size());
  for (int j = 0; j < schema.size(); ++j) bins[j] = bin_mapper.bin(j, row[j]);
  Eigen::RowVectorXi bundled(static_cast<Eigen::Index>(bundles.size()));
  for (std::size_t c = 0; c < bundles.size(); ++c) {
    const auto& bundle = bundles[c];
    if (bundle.members.size() == 1) {
      bundled[static_cast<Eigen::Index>(c)] = bins[bundle.members[0]];
      continue;
    }
    int value = 0;
    for (std::size_t j = 0; j < bundle.members.size(); ++j) {
      const int bin = bins[bundle.members[j]];
      if (bin != 0) {
        value = bundle.offsets[j] + bin;
        break;
      }
    }
    bundled[static_cast<Eigen::Index>(c)] = value;
  }
  return bundled;
}

Eigen::VectorXd GbdtModel::predict_raw(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  const Eigen::RowVectorXi bundled = bundle_row(row);
  Eigen::VectorXd raw = base_score;
  for (const auto& iteration : trees) {
    for (int c = 0; c < num_classes; ++c) {
      raw[c] += learning_rate * iteration[static_cast<std::size_t>(c)].value_at(bundled);
    }
  }
  return raw;
}

Eigen::VectorXd GbdtModel::predict_proba(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  const Eigen::VectorXd raw = predict_raw(row);
  Eigen::ArrayXd p = (raw.array() - raw.maxCoeff()).exp();
  return p / p.sum();
}

Eigen::MatrixXd GbdtModel::predict_proba(const TabularDataset& data) const {
  Eigen::MatrixXd probs(data.n_rows(), num_classes);
  for (Eigen::Index i = 0; i < data.n_rows(); ++i) {
    probs.row(i) = predict_proba(data.rows.row(i)).transpose();
  }
  return probs;
}

std::vector<int> GbdtModel::predict_class(const TabularDataset& data) const {
  const Eigen::MatrixXd probs = predict_proba(data);
  std::vector<int> classes(static_cast<std::size_t>(data.n_rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index argmax = 0;
    probs.row(i).maxCoeff(&argmax);
    classes[static_cast<std::size_t>(i)] = static_cast<int>(argmax);
  }
  return classes;
}

Eigen::VectorXi split_importance(const GbdtModel& model) {
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(model.schema.size());
  for (const auto& iteration : model.trees) {
    for (const auto& tree : iteration) {
      for (const auto& node : tree.nodes()) {
        if (node.left < 0) continue;
        const auto& bundle = model.bundles[static_cast<std::size_t>(node.column)];
        const int owner =
            node.categorical ? 0 : bundle_owner_of_threshold(bundle, node.threshold);
        counts[bundle.members[static_cast<std::size_t>(owner)]] += 1;
      }
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json schema_to_json(const FeatureSchema& schema) {
  json out = json::array();
  for (const auto& f : schema.features()) {
    json item;
    item["name"] = f.name;
    item["kind"] = f.kind == FeatureKind::kNumeric ? "numeric" : "categorical";
    if (f.kind == FeatureKind::kCategorical) item["levels"] = f.levels;
    out.push_back(std::move(item));
  }
  return out;
}

FeatureSchema schema_from_json(const json& j) {
  std::vector<FeatureSpec> features;
  for (const auto& item : j) {
    FeatureSpec spec;
    spec.name = item.at("name").get<std::string>();
    const auto kind = item.at("kind").get<std::string>();
    spec.kind = kind == "numeric" ? FeatureKind::kNumeric : FeatureKind::kCategorical;
    if (item.contains("levels")) spec.levels = item.at("levels").get<std::vector<std::string>>();
    features.push_back(std::move(spec));
  }
  return FeatureSchema(std::move(features));
}

json config_to_json(const TrainConfig& c) {
  return json{{"num_trees", c.num_trees},
              {"learning_rate", c.learning_rate},
              {"num_leaves", c.num_leaves},
              {"max_depth", c.max_depth},
              {"min_data_in_leaf", c.min_data_in_leaf},
              {"l2_lambda", c.l2_lambda},
              {"goss_a", c.goss_a},
              {"goss_b", c.goss_b},
              {"goss_enabled", c.goss_enabled},
              {"efb_enabled", c.efb_enabled},
              {"efb_max_conflict", c.efb_max_conflict},
              {"max_bins", c.max_bins},
              {"seed", c.seed}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.num_trees = j.at("num_trees").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.num_leaves = j.at("num_leaves").get<int>();
  c.max_depth = j.at("max_depth").get<int>();
  c.min_data_in_leaf = j.at("min_data_in_leaf").get<int>();
  c.l2_lambda = j.at("l2_lambda").get<double>();
  c.goss_a = j.at("goss_a").get<double>();
  c.goss_b = j.at("goss_b").get<double>();
  c.goss_enabled = j.at("goss_enabled").get<bool>();
  c.efb_enabled = j.at("efb_enabled").get<bool>();
  c.efb_max_conflict = j.at("efb_max_conflict").get<double>();
  c.max_bins = j.at("max_bins").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string to_text(const GbdtModel& model) {
  json j;
  j["format"] = "gbdt-model";
  j["version"] = 1;
  j["schema"] = schema_to_json(model.schema);
  j["num_classes"] = model.num_classes;
  j["learning_rate"] = model.learning_rate;
  j["base_score"] = std::vector<double>(model.base_score.data(),
                                        model.base_score.data() + model.base_score.size());
  json kinds = json::array();
  for (const auto kind : model.bin_mapper.kinds_) {
    kinds.push_back(kind == FeatureKind::kNumeric ? "numeric" : "categorical");
  }
  j["bin_mapper"] = {{"kinds", std::move(kinds)},
                     {"bounds", model.bin_mapper.bounds_},
                     {"level_counts", model.bin_mapper.level_counts_}};
  json bundles = json::array();
  for (const auto& bundle : model.bundles) {
    bundles.push_back({{"members", bundle.members},
                       {"offsets", bundle.offsets},
                       {"num_bins", bundle.num_bins},
                       {"categorical", bundle.categorical}});
  }
  j["bundles"] = std::move(bundles);
  json trees = json::array();
  for (const auto& iteration : model.trees) {
    json per_class = json::array();
    for (const auto& tree : iteration) {
      json nodes = json::array();
      for (const auto& node : tree.nodes()) {
        nodes.push_back({{"column", node.column},
                         {"threshold", node.threshold},
                         {"categorical", node.categorical},
                         {"left", node.left},
                         {"right", node.right},
                         {"value", node.value},
                         {"gain", node.gain},
                         {"count", node.count}});
      }
      per_class.push_back(std::move(nodes));
    }
    trees.push_back(std::move(per_class));
  }
  j["trees"] = std::move(trees);
  j["train_loss"] = model.train_loss;
  j["config"] = config_to_json(model.config);
  return j.dump(1) + "\n";
}

GbdtModel model_from_text(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("format").get<std::string>() != "gbdt-model" || j.at("version").get<int>() != 1) {
    throw std::runtime_error("not a version-1 gbdt model file");
  }
  GbdtModel model;
  model.schema = schema_from_json(j.at("schema"));
  model.num_classes = j.at("num_classes").get<int>();
  model.learning_rate = j.at("learning_rate").get<double>();
  const auto base = j.at("base_score").get<std::vector<double>>();
  model.base_score = Eigen::Map<const Eigen::VectorXd>(base.data(),
                                                       static_cast<Eigen::Index>(base.size()));
  const auto& mapper = j.at("bin_mapper");
  for (const auto& kind : mapper.at("kinds")) {
    model.bin_mapper.kinds_.push_back(kind.get<std::string>() == "numeric"
                                          ? FeatureKind::kNumeric
                                          : FeatureKind::kCategorical);
  }
  model.bin_mapper.bounds_ = mapper.at("bounds").get<std::vector<std::vector<double>>>();
  model.bin_mapper.level_counts_ = mapper.at("level_counts").get<std::vector<int>>();
  for (const auto& item : j.at("bundles")) {
    FeatureBundle bundle;
    bundle.members = item.at("members").get<std::vector<int>>();
    bundle.offsets = item.at("offsets").get<std::vector<int>>();
    bundle.num_bins = item.at("num_bins").get<int>();
    bundle.categorical = item.at("categorical").get<bool>();
    model.bundles.push_back(std::move(bundle));
  }
  for (const auto& iteration : j.at("trees")) {
    std::vector<Tree> per_class;
    for (const auto& tree : iteration) {
      std::vector<TreeNode> nodes;
      for (const auto& item : tree) {
        TreeNode node;
        node.column = item.at("column").get<int>();
        node.threshold = item.at("threshold").get<int>();
        node.categorical = item.at("categorical").get<bool>();
        node.left = item.at("left").get<int>();
        node.right = item.at("right").get<int>();
        node.value = item.at("value").get<double>();
        node.gain = item.at("gain").get<double>();
        node.count = item.at("count").get<int>();
        nodes.push_back(node);
      }
      per_class.emplace_back(std::move(nodes));
    }
    model.trees.push_back(std::move(per_class));
  }
  model.train_loss = j.at("train_loss").get<std::vector<double>>();
  model.config = config_from_json(j.at("config"));
  return model;
}

void save_model(const std::string& path, const GbdtModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_text(model);
  if (!out) throw std::runtime_error("write failed for " + path);
}

GbdtModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return model_from_text(buffer.str());
}

}  // namespace nowcast::gbdt
