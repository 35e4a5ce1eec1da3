#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nowcast/dataset.hpp"
#include "nowcast/gbdt.hpp"
#include "nowcast/synth.hpp"

namespace nowcast::tuning {

/// Inclusive integer ranges for the six searched quantities.
struct SearchSpace {
  std::array<int, 2> class0_count = {1000, 24000};
  std::array<int, 2> class1_count = {1000, 8000};
  std::array<int, 2> class2_count = {1000, 8000};
  std::array<int, 2> num_leaves = {10, 50};
  std::array<int, 2> max_depth = {3, 15};
  std::array<int, 2> min_data_in_leaf = {20, 100};

  void validate() const;
};

struct Trial {
  int index = 0;
  std::array<int, 3> class_counts = {0, 0, 0};
  int num_leaves = 0;
  int max_depth = 0;
  int min_data_in_leaf = 0;
  double map_eval = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
};

struct Partition {
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  std::uint64_t seed = 0;
};

/// Per-class shuffled split; each class's train share is within one row of
/// train_frac. Throws when any class has fewer than 2 rows.
Partition stratified_split(const std::vector<int>& labels, double train_frac, std::uint64_t seed);

/// Uniform sampling without replacement down to exactly target_counts[c]
/// rows per class; original row order is preserved within the selection.
TabularDataset undersample(const TabularDataset& data, const std::vector<int>& target_counts,
                           std::uint64_t seed);

struct RandomSearchResult {
  Trial best;                 // argmax map_eval, ties to the lower index
  std::vector<Trial> trials;  // ordered by trial index
  gbdt::GbdtModel best_model;
};

/// Random search over the six-dimensional space: per trial, sample uniformly,
/// undersample the pool, train a GBDT, and score mAP on eval_set. Failed
/// trials are recorded and skipped, not fatal. Per-trial seeds derive from
/// (seed, trial index).
RandomSearchResult random_search(const TabularDataset& pool, const TabularDataset& eval_set,
                                 const SearchSpace& space, int iterations,
                                 const gbdt::TrainConfig& fixed_gbdt, std::uint64_t seed);

/// trial log CSV:
/// trial,class0,class1,class2,num_leaves,max_depth,min_data_in_leaf,map_eval,status
void write_trials_csv(const std::string& path, const std::vector<Trial>& trials);

// ---------------------------------------------------------------------------
// Synthesizer grid search
// ---------------------------------------------------------------------------

struct SynthGridProtocol {
  int n_samples = 50000;
  std::vector<double> ratios = {0.6, 0.2, 0.2};
  double holdout_frac = 0.2;  // pretraining split of the generated data
  gbdt::TrainConfig gbdt_config;
};

struct SynthGridCell {
  double gen_lr = 0.0;
  double disc_lr = 0.0;
  int epochs = 0;
  double map_pretrain = 0.0;  // GBDT mAP on held-out generated rows
  double map_real = 0.0;      // GBDT mAP on the real evaluation rows
  bool failed = false;
  std::string error;
};

/// For every (gen_lr, disc_lr) pair, train one synthesizer with snapshots at
/// the epoch grid points, then per snapshot generate a dataset, train a GBDT
/// on it, and record both the pretraining mAP (held-out generated slice) and
/// the real-data mAP. Cells come back ranked by pretraining mAP, failed
/// cells last.
std::vector<SynthGridCell> grid_search_synth(const TabularDataset& train80,
                                             const TabularDataset& real_eval,
                                             const std::vector<double>& gen_lrs,
                                             const std::vector<double>& disc_lrs,
                                             const std::vector<int>& epoch_grid,
                                             const synth::SynthConfig& base,
                                             const SynthGridProtocol& protocol,
                                             std::uint64_t seed);

void write_synth_grid_csv(const std::string& path, const std::vector<SynthGridCell>& cells);

}  // namespace nowcast::tuning
