#include "nowcast/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "nowcast/csv.hpp"
#include "nowcast/rng.hpp"

namespace nowcast::labeling {

namespace {

struct LloydRun {
  Eigen::VectorXd centroids;     // kept sorted ascending
  std::vector<int> assignments;  // over the sorted points
  double wcss = std::numeric_limits<double>::infinity();
};

int nearest_centroid(const Eigen::VectorXd& centroids, double x) {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int c = 0; c < centroids.size(); ++c) {
    const double d = (x - centroids[c]) * (x - centroids[c]);
    if (d < best_dist) {  // strict: tie falls to the lower centroid index
      best_dist = d;
      best = c;
    }
  }
  return best;
}

// Greedy k-means++ seeding over sorted points: several candidates are drawn
// proportional to the squared distance to the nearest chosen centroid and
// the one lowering the total potential most wins.
Eigen::VectorXd seed_centroids(const Eigen::VectorXd& sorted, int k, Rng& rng) {
  const Eigen::Index n = sorted.size();
  const int candidates = 1;
  Eigen::VectorXd centroids(k);
  centroids[0] = sorted[rng.uniform_int(0, n - 1)];
  Eigen::VectorXd dist2 = (sorted.array() - centroids[0]).square();
  for (int c = 1; c < k; ++c) {
    double best_potential = std::numeric_limits<double>::infinity();
    double best_value = sorted[n - 1];
    Eigen::VectorXd best_dist2;
    for (int attempt = 0; attempt < candidates; ++attempt) {
      const double total = dist2.sum();
      double pick = rng.uniform() * total;
      Eigen::Index chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        pick -= dist2[i];
        if (pick <= 0.0) {
          chosen = i;
          break;
        }
      }
      Eigen::VectorXd next_dist2 =
          dist2.cwiseMin((sorted.array() - sorted[chosen]).square().matrix());
      const double potential = next_dist2.sum();
      if (potential < best_potential) {
        best_potential = potential;
        best_value = sorted[chosen];
        best_dist2 = std::move(next_dist2);
      }
    }
    centroids[c] = best_value;
    dist2 = best_dist2;
  }
  std::sort(centroids.data(), centroids.data() + centroids.size());
  return centroids;
}

// Exact cost of one contiguous segment [a, b) around its own mean.
class SegmentCost {
 public:
  explicit SegmentCost(const Eigen::VectorXd& sorted)
      : sum_(sorted.size() + 1), sum_sq_(sorted.size() + 1) {
    sum_[0] = 0.0;
    sum_sq_[0] = 0.0;
    for (Eigen::Index i = 0; i < sorted.size(); ++i) {
      sum_[i + 1] = sum_[i] + sorted[i];
      sum_sq_[i + 1] = sum_sq_[i] + sorted[i] * sorted[i];
    }
  }

  double cost(int a, int b) const {
    const double count = b - a;
    const double sum = sum_[b] - sum_[a];
    return (sum_sq_[b] - sum_sq_[a]) - sum * sum / count;
  }

  double mean(int a, int b) const { return (sum_[b] - sum_[a]) / (b - a); }

 private:
  Eigen::VectorXd sum_;
  Eigen::VectorXd sum_sq_;
};

/// Exact coordinate descent on the segment boundaries: each boundary in turn
/// moves to its optimal position with the neighbors held fixed, sweeping
/// until no boundary moves. Escapes the local optima Lloyd alone settles
/// into on 1-D data; point transfers within a boundary's whole feasible
/// range are considered, not just single steps.
// optimal position of one boundary with its neighbors held fixed
int best_position(const SegmentCost& costs, int lo, int hi, int current) {
  int best_pos = current;
  double best_cost = costs.cost(lo, current) + costs.cost(current, hi);
  for (int pos = lo + 1; pos <= hi - 1; ++pos) {
    const double cost = costs.cost(lo, pos) + costs.cost(pos, hi);
    if (cost < best_cost) {
      best_cost = cost;
      best_pos = pos;
    }
  }
  return best_pos;
}

// exact coordinate descent over boundary positions
bool coordinate_descent(const SegmentCost& costs, std::vector<int>& b) {
  const int k = static_cast<int>(b.size()) - 1;
  bool any = false;
  bool sweep_changed = true;
  while (sweep_changed) {
    sweep_changed = false;
    for (int j = 1; j < k; ++j) {
      const int pos = best_position(costs, b[static_cast<std::size_t>(j) - 1],
                                    b[static_cast<std::size_t>(j) + 1],
                                    b[static_cast<std::size_t>(j)]);
      if (pos != b[static_cast<std::size_t>(j)]) {
        b[static_cast<std::size_t>(j)] = pos;
        sweep_changed = true;
        any = true;
      }
    }
  }
  return any;
}

bool refine_boundaries(const SegmentCost& costs, std::vector<int>& bounds) {
  const int k = static_cast<int>(bounds.size()) - 1;

  auto descend = [&costs](std::vector<int>& b) { return coordinate_descent(costs, b); };

  auto total_cost = [&](const std::vector<int>& b) {
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      total += costs.cost(b[static_cast<std::size_t>(j)], b[static_cast<std::size_t>(j) + 1]);
    }
    return total;
  };

  bool changed = descend(bounds);
  if (k < 3) return changed;

  while (true) {
    const double current = total_cost(bounds);
    double best_value = current - 1e-12;
    std::vector<int> best_bounds;

    // split-merge jumps, each polished by coordinate descent before being
    // judged: dropping a boundary and re-inserting it elsewhere is often
    // uphill on its own but downhill after the other boundaries adjust.
    // Every local minimum of the insertion-cost curve (best four) is a
    // candidate, not just the argmin, which may sit in the basin just left.
    for (int drop = 1; drop < k; ++drop) {
      std::vector<int> merged;
      merged.reserve(bounds.size() - 1);
      for (int j = 0; j <= k; ++j) {
        if (j != drop) merged.push_back(bounds[static_cast<std::size_t>(j)]);
      }
      for (std::size_t seg = 0; seg + 1 < merged.size(); ++seg) {
        const int lo = merged[seg];
        const int hi = merged[seg + 1];
        if (hi - lo < 2) continue;
        std::vector<std::pair<double, int>> minima;  // (insert cost, position)
        double prev = std::numeric_limits<double>::infinity();
        double here = costs.cost(lo, lo + 1) + costs.cost(lo + 1, hi);
        for (int pos = lo + 1; pos <= hi - 1; ++pos) {
          const double next = pos + 1 <= hi - 1
                                  ? costs.cost(lo, pos + 1) + costs.cost(pos + 1, hi)
                                  : std::numeric_limits<double>::infinity();
          if (here <= prev && here <= next) minima.emplace_back(here, pos);
          prev = here;
          here = next;
        }
        std::sort(minima.begin(), minima.end());
        if (minima.size() > 4) minima.resize(4);
        for (const auto& [insert_cost, pos] : minima) {
          std::vector<int> candidate = merged;
          candidate.insert(candidate.begin() + static_cast<std::ptrdiff_t>(seg) + 1, pos);
          descend(candidate);
          const double value = total_cost(candidate);
          if (value < best_value) {
            best_value = value;
            best_bounds = std::move(candidate);
          }
        }
      }
    }

    // block shifts: slide a contiguous run of boundaries by one shared
    // delta (the per-delta landscape is not unimodal, so scan all of them)
    for (int j0 = 1; j0 < k; ++j0) {
      for (int j1 = j0; j1 < k; ++j1) {
        const int s_min = bounds[static_cast<std::size_t>(j0) - 1] + 1 -
                          bounds[static_cast<std::size_t>(j0)];
        const int s_max = bounds[static_cast<std::size_t>(j1) + 1] - 1 -
                          bounds[static_cast<std::size_t>(j1)];
        double best_delta = 0.0;
        int best_s = 0;
        double run_cost = 0.0;
        for (int j = j0 - 1; j <= j1; ++j) {
          run_cost += costs.cost(bounds[static_cast<std::size_t>(j)],
                                 bounds[static_cast<std::size_t>(j) + 1]);
        }
        for (int s = s_min; s <= s_max; ++s) {
          if (s == 0) continue;
          double shifted = costs.cost(bounds[static_cast<std::size_t>(j0) - 1],
                                      bounds[static_cast<std::size_t>(j0)] + s);
          for (int j = j0; j < j1; ++j) {
            shifted += costs.cost(bounds[static_cast<std::size_t>(j)] + s,
                                  bounds[static_cast<std::size_t>(j) + 1] + s);
          }
          shifted += costs.cost(bounds[static_cast<std::size_t>(j1)] + s,
                                bounds[static_cast<std::size_t>(j1) + 1]);
          if (shifted - run_cost < best_delta) {
            best_delta = shifted - run_cost;
            best_s = s;
          }
        }
        if (best_s != 0) {
          std::vector<int> candidate = bounds;
          for (int j = j0; j <= j1; ++j) candidate[static_cast<std::size_t>(j)] += best_s;
          descend(candidate);
          const double value = total_cost(candidate);
          if (value < best_value) {
            best_value = value;
            best_bounds = std::move(candidate);
          }
        }
      }
    }

    if (best_bounds.empty()) break;
    bounds = std::move(best_bounds);
    changed = true;
  }
  return changed;
}

// One pass of classic Lloyd iteration to an assignment fixpoint.
void lloyd_iterate(const Eigen::VectorXd& sorted, int k, int max_iters, LloydRun& run) {
  const Eigen::Index n = sorted.size();
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = nearest_centroid(run.centroids, sorted[i]);
      if (c != run.assignments[static_cast<std::size_t>(i)]) {
        run.assignments[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    if (!changed) break;

    Eigen::VectorXd sums = Eigen::VectorXd::Zero(k);
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = run.assignments[static_cast<std::size_t>(i)];
      sums[c] += sorted[i];
      counts[c] += 1;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        run.centroids[c] = sums[c] / counts[c];
      } else {
        // re-seed an emptied cluster at the point farthest from its centroid
        double worst = -1.0;
        Eigen::Index worst_i = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const int a = run.assignments[static_cast<std::size_t>(i)];
          const double d = (sorted[i] - run.centroids[a]) * (sorted[i] - run.centroids[a]);
          if (d > worst) {
            worst = d;
            worst_i = i;
          }
        }
        run.centroids[c] = sorted[worst_i];
      }
    }
    std::sort(run.centroids.data(), run.centroids.data() + run.centroids.size());
  }
}

// Contiguous segment boundaries from a fixpoint assignment; empty when the
// assignment is not a clean k-segment cover (possible at the iteration cap).
std::vector<int> bounds_from_assignments(const std::vector<int>& assignments, int k) {
  const int n = static_cast<int>(assignments.size());
  std::vector<int> bounds(static_cast<std::size_t>(k) + 1, 0);
  bounds[static_cast<std::size_t>(k)] = n;
  int expected = 0;
  for (int i = 0; i < n; ++i) {
    const int c = assignments[static_cast<std::size_t>(i)];
    if (c < expected) return {};
    while (expected < c) bounds[static_cast<std::size_t>(++expected)] = i;
  }
  if (expected != k - 1) return {};
  for (int c = 0; c < k; ++c) {
    if (bounds[static_cast<std::size_t>(c)] >= bounds[static_cast<std::size_t>(c) + 1]) return {};
  }
  return bounds;
}

LloydRun lloyd(const Eigen::VectorXd& sorted, const SegmentCost& costs, int k, Rng& rng,
               int max_iters) {
  const Eigen::Index n = sorted.size();
  LloydRun run;
  run.centroids = seed_centroids(sorted, k, rng);
  run.assignments.assign(static_cast<std::size_t>(n), -1);
  lloyd_iterate(sorted, k, max_iters, run);

  std::vector<int> bounds = bounds_from_assignments(run.assignments, k);
  if (!bounds.empty()) {
    refine_boundaries(costs, bounds);

    // basin hopping: random cut positions, polished by coordinate descent,
    // kept only when they beat the incumbent; escapes joint-move local
    // optima that no single structured move reaches
    constexpr int kHops = 20;
    auto total_cost = [&costs, k](const std::vector<int>& b) {
      double total = 0.0;
      for (int j = 0; j < k; ++j) {
        total += costs.cost(b[static_cast<std::size_t>(j)], b[static_cast<std::size_t>(j) + 1]);
      }
      return total;
    };
    double incumbent = total_cost(bounds);
    for (int hop = 0; k >= 3 && hop < kHops; ++hop) {
      std::vector<int> cuts = rng.sample_without_replacement(static_cast<int>(n) - 1, k - 1);
      std::vector<int> candidate(static_cast<std::size_t>(k) + 1, 0);
      candidate[static_cast<std::size_t>(k)] = static_cast<int>(n);
      for (int j = 1; j < k; ++j) {
        candidate[static_cast<std::size_t>(j)] = cuts[static_cast<std::size_t>(j) - 1] + 1;
      }
      coordinate_descent(costs, candidate);
      if (total_cost(candidate) < incumbent - 1e-12) {
        bounds = std::move(candidate);
        refine_boundaries(costs, bounds);
        incumbent = total_cost(bounds);
      }
    }

    // materialize the refined segments, then a final Lloyd polish so the
    // nearest-centroid invariant holds at the returned fixpoint
    for (int c = 0; c < k; ++c) {
      run.centroids[c] = costs.mean(bounds[static_cast<std::size_t>(c)],
                                    bounds[static_cast<std::size_t>(c) + 1]);
    }
    lloyd_iterate(sorted, k, max_iters, run);
  }

  run.wcss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = run.assignments[static_cast<std::size_t>(i)];
    run.wcss += (sorted[i] - run.centroids[c]) * (sorted[i] - run.centroids[c]);
  }
  return run;
}

}  // namespace

KmeansResult kmeans_1d(const Eigen::Ref<const Eigen::VectorXd>& points, int k, int restarts,
                       std::uint64_t seed) {
  if (points.size() == 0) throw std::invalid_argument("kmeans_1d: empty input");
  if (k < 1) throw std::invalid_argument("kmeans_1d: k must be >= 1");
  if (restarts < 1) throw std::invalid_argument("kmeans_1d: restarts must be >= 1");

  const Eigen::Index n = points.size();
  // sort once: makes the result a function of the multiset of values, and
  // 1-D clusters are contiguous in the sorted order anyway
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&points](Eigen::Index a, Eigen::Index b) { return points[a] < points[b]; });
  Eigen::VectorXd sorted(n);
  for (Eigen::Index i = 0; i < n; ++i) sorted[i] = points[order[static_cast<std::size_t>(i)]];

  Eigen::Index distinct = 1;
  for (Eigen::Index i = 1; i < n; ++i) {
    if (sorted[i] != sorted[i - 1]) ++distinct;
  }
  if (k > distinct) {
    throw std::invalid_argument("kmeans_1d: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(distinct) + " distinct point values");
  }

  constexpr int kMaxLloydIters = 300;
  const SegmentCost costs(sorted);
  LloydRun best;
  for (int r = 0; r < restarts; ++r) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(r)));
    LloydRun run = lloyd(sorted, costs, k, rng, kMaxLloydIters);
    if (run.wcss < best.wcss) best = std::move(run);  // tie keeps the lower restart index
  }

  KmeansResult result;
  result.k = k;
  result.centroids = best.centroids;
  result.assignments.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    result.assignments[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        best.assignments[static_cast<std::size_t>(i)];
  }
  result.wcss = best.wcss;
  return result;
}

std::vector<std::pair<int, double>> elbow_curve(const Eigen::Ref<const Eigen::VectorXd>& points,
                                                int k_lo, int k_hi, int restarts,
                                                std::uint64_t seed) {
  if (k_lo < 1 || k_hi < k_lo) throw std::invalid_argument("elbow_curve: bad k range");
  std::vector<std::pair<int, double>> curve;
  for (int k = k_lo; k <= k_hi; ++k) {
    curve.emplace_back(k, kmeans_1d(points, k, restarts, seed).wcss);
  }
  return curve;
}

std::vector<CellLabel> label_cells(const std::vector<GridCell>& cells, int k, std::uint64_t seed,
                                   int restarts) {
  if (cells.empty()) throw std::invalid_argument("label_cells: no cells");
  Eigen::VectorXd sums(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    sums[static_cast<Eigen::Index>(i)] = cells[i].claim_sum;
  }
  const KmeansResult km = kmeans_1d(sums, k, restarts, seed);
  std::vector<CellLabel> labels;
  labels.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    labels.push_back({cells[i].id, cells[i].claim_sum, km.assignments[i]});
  }
  return labels;
}

void write_cell_labels_csv(const std::string& path, const std::vector<CellLabel>& labels) {
  CsvTable table;
  table.header = {"cell_col", "cell_row", "claim_sum", "pde_class"};
  for (const auto& label : labels) {
    table.rows.push_back({std::to_string(label.id.col), std::to_string(label.id.row),
                          format_double(label.claim_sum), std::to_string(label.pde_class)});
  }
  write_csv(path, table);
}

std::vector<CellLabel> read_cell_labels_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::vector<std::string> expected = {"cell_col", "cell_row", "claim_sum", "pde_class"};
  if (table.header != expected) {
    throw std::runtime_error(path + ": expected header cell_col,cell_row,claim_sum,pde_class");
  }
  std::vector<CellLabel> labels;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = path + ":" + std::to_string(i + 2);
    CellLabel label;
    label.id.col = static_cast<int>(parse_int(row[0], where + " cell_col"));
    label.id.row = static_cast<int>(parse_int(row[1], where + " cell_row"));
    label.claim_sum = parse_double(row[2], where + " claim_sum");
    label.pde_class = static_cast<int>(parse_int(row[3], where + " pde_class"));
    labels.push_back(label);
  }
  return labels;
}

void write_elbow_csv(const std::string& path, const std::vector<std::pair<int, double>>& curve) {
  CsvTable table;
  table.header = {"k", "wcss"};
  for (const auto& [k, wcss] : curve) {
    table.rows.push_back({std::to_string(k), format_double(wcss)});
  }
  write_csv(path, table);
}

}  // namespace nowcast::labeling
