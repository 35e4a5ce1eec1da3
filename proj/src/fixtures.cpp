#include "nowcast/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "nowcast/rng.hpp"

namespace nowcast::fixtures {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

TabularDataset make_imbalanced_tabular(const FixtureSpec& spec) {
  if (spec.n_rows < 1) throw std::invalid_argument("fixture: n_rows must be >= 1");
  if (spec.signal_strength < 0.0) throw std::invalid_argument("fixture: negative signal strength");
  const int k = static_cast<int>(spec.prevalences.size());
  const std::vector<int> counts = largest_remainder_counts(spec.n_rows, spec.prevalences);

  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(spec.n_rows));
  for (int c = 0; c < k; ++c) {
    labels.insert(labels.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(c)]), c);
  }
  Rng rng(spec.seed);
  rng.shuffle(labels);

  const int m = spec.n_signal_features + spec.n_noise_features;
  std::vector<FeatureSpec> features;
  features.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < spec.n_signal_features; ++j) {
    features.push_back({"signal_" + std::to_string(j), FeatureKind::kNumeric, {}});
  }
  for (int j = 0; j < spec.n_noise_features; ++j) {
    features.push_back({"noise_" + std::to_string(j), FeatureKind::kNumeric, {}});
  }

  TabularDataset data;
  data.schema = FeatureSchema(std::move(features));
  data.labels = labels;
  data.rows.resize(spec.n_rows, m);

  // Class 0 is a broad background over the feature range; higher classes sit
  // at increasing radii along one hazard direction, as progressively tighter
  // bumps — ordinal severity, with adjacent classes genuinely overlapping.
  // Both the offset and the concentration scale with signal strength, so
  // strength 0 leaves every class identically distributed. The broad
  // background bounds the class-likelihood ratios, which is what makes the
  // imbalanced raw data genuinely hard rather than merely small.
  constexpr double kBackgroundSigma = 0.28;
  constexpr double kSeparation = 0.3;
  const double bump_sigma = kBackgroundSigma - 0.16 * spec.signal_strength;
  for (int i = 0; i < spec.n_rows; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    const double radius = k < 2 ? 0.0 : static_cast<double>(c) / (static_cast<double>(k) - 1.0);
    const double sigma = c == 0 ? kBackgroundSigma : bump_sigma;
    for (int j = 0; j < spec.n_signal_features; ++j) {
      const double direction = (j % 2 == 0) ? 1.0 : -1.0;
      const double center = 0.5 + spec.signal_strength * kSeparation * radius * direction;
      data.rows(i, j) = clamp01(center + sigma * rng.normal());
    }
    for (int j = 0; j < spec.n_noise_features; ++j) {
      data.rows(i, spec.n_signal_features + j) = clamp01(0.5 + 0.15 * rng.normal());
    }
  }
  return data;
}

std::pair<std::vector<ClaimRecord>, std::vector<ClaimRecord>> make_claim_fixture(
    const GridSpec& grid, const std::vector<CellId>& hotspot_cells, int n_claims,
    std::uint64_t seed) {
  for (const auto& cell : hotspot_cells) {
    if (cell.col < 0 || cell.col >= grid.n_cols || cell.row < 0 || cell.row >= grid.n_rows) {
      throw std::invalid_argument("claim fixture: hotspot outside grid");
    }
  }
  Rng rng(seed);
  std::vector<ClaimRecord> nfip;
  std::vector<ClaimRecord> ia;
  if (n_claims == 0) return {nfip, ia};

  // exactly the first 95% of claims land in hotspots so aggregation contracts
  // hold by construction, not by binomial luck
  const int n_hotspot = static_cast<int>(std::ceil(0.95 * n_claims));
  auto sample_point = [&](int index, double& x, double& y) {
    const bool in_hotspot = !hotspot_cells.empty() && index < n_hotspot;
    if (in_hotspot) {
      const auto& cell = hotspot_cells[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(hotspot_cells.size()) - 1))];
      x = grid.origin_x + (cell.col + rng.uniform()) * grid.cell_size;
      y = grid.origin_y + (cell.row + rng.uniform()) * grid.cell_size;
    } else {
      x = grid.origin_x + rng.uniform() * grid.cell_size * grid.n_cols;
      y = grid.origin_y + rng.uniform() * grid.cell_size * grid.n_rows;
    }
  };

  int claim_seq = 0;
  for (int i = 0; i < n_claims; ++i) {
    double x = 0.0;
    double y = 0.0;
    sample_point(i, x, y);
    const std::string building = "B" + std::to_string(i);
    // NFIP claims are an order of magnitude larger, as in the real sources
    ClaimRecord record;
    record.building_id = building;
    record.x = x;
    record.y = y;
    const double roll = rng.uniform();
    if (roll < 0.45) {
      record.claim_id = "C" + std::to_string(claim_seq++);
      record.source = ClaimSource::kNfip;
      record.amount = 5000.0 + 45000.0 * rng.uniform();
      nfip.push_back(record);
    } else if (roll < 0.85) {
      record.claim_id = "C" + std::to_string(claim_seq++);
      record.source = ClaimSource::kIa;
      record.amount = 500.0 + 4500.0 * rng.uniform();
      ia.push_back(record);
    } else {
      // overlapping building: a claim in both sources
      record.claim_id = "C" + std::to_string(claim_seq++);
      record.source = ClaimSource::kNfip;
      record.amount = 5000.0 + 45000.0 * rng.uniform();
      nfip.push_back(record);
      ClaimRecord dup = record;
      dup.claim_id = "C" + std::to_string(claim_seq++);
      dup.source = ClaimSource::kIa;
      dup.amount = 500.0 + 4500.0 * rng.uniform();
      ia.push_back(dup);
    }
  }
  return {nfip, ia};
}

}  // namespace nowcast::fixtures
