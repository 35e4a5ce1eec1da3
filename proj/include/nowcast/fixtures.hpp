#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "nowcast/dataset.hpp"

namespace nowcast::fixtures {

/// Generator settings for synthetic stand-in data. Signal features carry
/// class-dependent Gaussian bumps whose separation scales with
/// signal_strength; noise features are class-independent.
struct FixtureSpec {
  int n_rows = 1000;
  std::vector<double> prevalences = {0.964, 0.008, 0.028};
  double signal_strength = 1.0;
  int n_signal_features = 4;
  int n_noise_features = 4;
  std::uint64_t seed = 0;
};

/// Labeled tabular data with exact per-class counts (largest remainder),
/// all numeric features inside [0, 1].
TabularDataset make_imbalanced_tabular(const FixtureSpec& spec);

/// Claim lists for both sources: roughly 90% of claims land in the hotspot
/// cells, building ids overlap across sources so merging has work to do.
std::pair<std::vector<ClaimRecord>, std::vector<ClaimRecord>> make_claim_fixture(
    const GridSpec& grid, const std::vector<CellId>& hotspot_cells, int n_claims,
    std::uint64_t seed);

}  // namespace nowcast::fixtures
