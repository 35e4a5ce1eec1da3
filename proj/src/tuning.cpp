#include "nowcast/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nowcast/csv.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/rng.hpp"

namespace nowcast::tuning {

void SearchSpace::validate() const {
  auto check = [](const std::array<int, 2>& range, const char* name, int floor) {
    if (range[0] > range[1] || range[0] < floor) {
      throw std::invalid_argument(std::string("search space: bad range for ") + name);
    }
  };
  check(class0_count, "class0_count", 1);
  check(class1_count, "class1_count", 1);
  check(class2_count, "class2_count", 1);
  check(num_leaves, "num_leaves", 2);
  check(max_depth, "max_depth", 1);
  check(min_data_in_leaf, "min_data_in_leaf", 1);
}

Partition stratified_split(const std::vector<int>& labels, double train_frac, std::uint64_t seed) {
  if (labels.empty()) throw std::invalid_argument("stratified_split: no labels");
  if (!(train_frac > 0.0) || !(train_frac < 1.0)) {
    throw std::invalid_argument("stratified_split: train_frac must be in (0, 1)");
  }
  int k = 0;
  for (const int y : labels) {
    if (y < 0) throw std::invalid_argument("stratified_split: negative label");
    k = std::max(k, y + 1);
  }
  std::vector<std::vector<int>> class_rows(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    class_rows[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  }

  Partition partition;
  partition.seed = seed;
  for (int c = 0; c < k; ++c) {
    auto& rows = class_rows[static_cast<std::size_t>(c)];
    if (rows.empty()) continue;
    if (rows.size() < 2) {
      throw std::invalid_argument("stratified_split: class " + std::to_string(c) +
                                  " has a single row");
    }
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(rows);
    const auto n = static_cast<double>(rows.size());
    auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
    n_train = std::clamp<std::size_t>(n_train, 1, rows.size() - 1);
    partition.train_indices.insert(partition.train_indices.end(), rows.begin(),
                                   rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    partition.test_indices.insert(partition.test_indices.end(),
                                  rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  std::sort(partition.train_indices.begin(), partition.train_indices.end());
  std::sort(partition.test_indices.begin(), partition.test_indices.end());
  return partition;
}

TabularDataset undersample(const TabularDataset& data, const std::vector<int>& target_counts,
                           std::uint64_t seed) {
  if (!data.has_labels()) throw std::invalid_argument("undersample: dataset must carry labels");
  const int k = static_cast<int>(target_counts.size());
  std::vector<std::vector<int>> class_rows(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const int y = data.labels[i];
    if (y < 0 || y >= k) {
      throw std::invalid_argument("undersample: label outside the target_counts range");
    }
    class_rows[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  std::vector<int> selected;
  for (int c = 0; c < k; ++c) {
    const auto& rows = class_rows[static_cast<std::size_t>(c)];
    const int target = target_counts[static_cast<std::size_t>(c)];
    if (target < 0) throw std::invalid_argument("undersample: negative target count");
    if (target > static_cast<int>(rows.size())) {
      throw std::invalid_argument("undersample: class " + std::to_string(c) + " has only " +
                                  std::to_string(rows.size()) + " rows, need " +
                                  std::to_string(target));
    }
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(c)));
    const std::vector<int> picks =
        rng.sample_without_replacement(static_cast<int>(rows.size()), target);
    for (const int p : picks) selected.push_back(rows[static_cast<std::size_t>(p)]);
  }
  std::sort(selected.begin(), selected.end());
  return data.select(selected);
}

RandomSearchResult random_search(const TabularDataset& pool, const TabularDataset& eval_set,
                                 const SearchSpace& space, int iterations,
                                 const gbdt::TrainConfig& fixed_gbdt, std::uint64_t seed) {
  space.validate();
  if (iterations < 1) throw std::invalid_argument("random_search: iterations must be >= 1");
  if (!pool.has_labels() || !eval_set.has_labels()) {
    throw std::invalid_argument("random_search: pool and eval_set must carry labels");
  }
  // the eval mAP is undefined for an absent class; fail fast
  std::vector<int> eval_counts(3, 0);
  for (const int y : eval_set.labels) {
    if (y < 0 || y > 2) throw std::invalid_argument("random_search: eval label outside [0, 3)");
    eval_counts[static_cast<std::size_t>(y)] += 1;
  }
  for (int c = 0; c < 3; ++c) {
    if (eval_counts[static_cast<std::size_t>(c)] == 0) {
      throw std::invalid_argument("random_search: eval_set is missing class " + std::to_string(c));
    }
  }

  RandomSearchResult result;
  int best_index = -1;
  for (int t = 0; t < iterations; ++t) {
    const std::uint64_t trial_seed = Rng::derive(seed, static_cast<std::uint64_t>(t));
    Rng rng(trial_seed);
    Trial trial;
    trial.index = t;
    trial.seed = trial_seed;
    trial.class_counts = {
        static_cast<int>(rng.uniform_int(space.class0_count[0], space.class0_count[1])),
        static_cast<int>(rng.uniform_int(space.class1_count[0], space.class1_count[1])),
        static_cast<int>(rng.uniform_int(space.class2_count[0], space.class2_count[1]))};
    trial.num_leaves = static_cast<int>(rng.uniform_int(space.num_leaves[0], space.num_leaves[1]));
    trial.max_depth = static_cast<int>(rng.uniform_int(space.max_depth[0], space.max_depth[1]));
    trial.min_data_in_leaf =
        static_cast<int>(rng.uniform_int(space.min_data_in_leaf[0], space.min_data_in_leaf[1]));

    try {
      const TabularDataset sampled = undersample(
          pool, {trial.class_counts[0], trial.class_counts[1], trial.class_counts[2]},
          Rng::derive(trial_seed, 1));
      gbdt::TrainConfig config = fixed_gbdt;
      config.num_leaves = trial.num_leaves;
      config.max_depth = trial.max_depth;
      config.min_data_in_leaf = trial.min_data_in_leaf;
      config.seed = Rng::derive(trial_seed, 2);
      gbdt::GbdtModel model = gbdt::train(sampled, sampled.labels, config, 3);
      trial.map_eval = metrics::mean_average_precision(model.predict_proba(eval_set),
                                                       eval_set.labels);
      if (best_index < 0 || trial.map_eval > result.best.map_eval) {
        best_index = t;
        result.best = trial;
        result.best_model = std::move(model);
      }
    } catch (const std::exception& e) {
      trial.failed = true;
      trial.error = e.what();
    }
    result.trials.push_back(std::move(trial));
  }
  if (best_index < 0) throw std::runtime_error("random_search: every trial failed");
  return result;
}

void write_trials_csv(const std::string& path, const std::vector<Trial>& trials) {
  CsvTable table;
  table.header = {"trial",     "class0",           "class1",   "class2", "num_leaves",
                  "max_depth", "min_data_in_leaf", "map_eval", "status"};
  for (const auto& trial : trials) {
    table.rows.push_back({std::to_string(trial.index), std::to_string(trial.class_counts[0]),
                          std::to_string(trial.class_counts[1]),
                          std::to_string(trial.class_counts[2]), std::to_string(trial.num_leaves),
                          std::to_string(trial.max_depth), std::to_string(trial.min_data_in_leaf),
                          trial.failed ? "" : format_double(trial.map_eval),
                          trial.failed ? "failed" : "ok"});
  }
  write_csv(path, table);
}

// ---------------------------------------------------------------------------
// Synthesizer grid search
// ---------------------------------------------------------------------------

std::vector<SynthGridCell> grid_search_synth(const TabularDataset& train80,
                                             const TabularDataset& real_eval,
                                             const std::vector<double>& gen_lrs,
                                             const std::vector<double>& disc_lrs,
                                             const std::vector<int>& epoch_grid,
                                             const synth::SynthConfig& base,
                                             const SynthGridProtocol& protocol,
                                             std::uint64_t seed) {
  if (gen_lrs.empty() || disc_lrs.empty() || epoch_grid.empty()) {
    throw std::invalid_argument("grid_search_synth: empty grid");
  }
  if (!train80.has_labels() || !real_eval.has_labels()) {
    throw std::invalid_argument("grid_search_synth: datasets must carry labels");
  }
  const int k = static_cast<int>(protocol.ratios.size());

  std::vector<int> epochs = epoch_grid;
  std::sort(epochs.begin(), epochs.end());
  const int max_epochs = epochs.back();

  std::vector<SynthGridCell> cells;
  std::uint64_t pair_index = 0;
  for (const double gen_lr : gen_lrs) {
    for (const double disc_lr : disc_lrs) {
      synth::SynthConfig config = base;
      config.gen_lr = gen_lr;
      config.disc_lr = disc_lr;
      config.max_epochs = max_epochs;
      config.checkpoint_every = std::min(config.checkpoint_every, max_epochs);
      config.seed = Rng::derive(seed, pair_index);

      // one training run per learning-rate pair; the epoch grid points are
      // its snapshots, mirroring checkpoint review
      std::vector<synth::Checkpoint> checkpoints;
      std::string fit_error;
      try {
        synth::FitResult fitted = synth::fit_with_snapshots(train80, k, config, epochs);
        checkpoints = std::move(fitted.checkpoints);
      } catch (const std::exception& e) {
        fit_error = e.what();
      }

      for (const int epoch : epochs) {
        SynthGridCell cell;
        cell.gen_lr = gen_lr;
        cell.disc_lr = disc_lr;
        cell.epochs = epoch;
        const auto checkpoint =
            std::find_if(checkpoints.begin(), checkpoints.end(),
                         [epoch](const synth::Checkpoint& c) { return c.epoch == epoch; });
        if (checkpoint == checkpoints.end()) {
          cell.failed = true;
          cell.error = fit_error.empty() ? "missing checkpoint" : fit_error;
          cells.push_back(std::move(cell));
          continue;
        }
        try {
          const std::uint64_t cell_seed =
              Rng::derive(seed, (pair_index << 20) + static_cast<std::uint64_t>(epoch));
          const TabularDataset generated = synth::sample(checkpoint->model, protocol.n_samples,
                                                         protocol.ratios, cell_seed);
          const Partition split =
              stratified_split(generated.labels, 1.0 - protocol.holdout_frac, cell_seed);
          const TabularDataset pre_train = generated.select(split.train_indices);
          const TabularDataset pre_eval = generated.select(split.test_indices);

          gbdt::TrainConfig gbdt_config = protocol.gbdt_config;
          gbdt_config.seed = Rng::derive(cell_seed, 7);
          const gbdt::GbdtModel model = gbdt::train(pre_train, pre_train.labels, gbdt_config, k);
          cell.map_pretrain =
              metrics::mean_average_precision(model.predict_proba(pre_eval), pre_eval.labels);
          cell.map_real =
              metrics::mean_average_precision(model.predict_proba(real_eval), real_eval.labels);
        } catch (const std::exception& e) {
          cell.failed = true;
          cell.error = e.what();
        }
        cells.push_back(std::move(cell));
      }
      ++pair_index;
    }
  }
  std::stable_sort(cells.begin(), cells.end(), [](const SynthGridCell& a, const SynthGridCell& b) {
    if (a.failed != b.failed) return !a.failed;
    return a.map_pretrain > b.map_pretrain;
  });
  return cells;
}

void write_synth_grid_csv(const std::string& path, const std::vector<SynthGridCell>& cells) {
  CsvTable table;
  table.header = {"gen_lr", "disc_lr", "epochs", "map_pretrain", "map_real", "status"};
  for (const auto& cell : cells) {
    table.rows.push_back({format_double(cell.gen_lr), format_double(cell.disc_lr),
                          std::to_string(cell.epochs),
                          cell.failed ? "" : format_double(cell.map_pretrain),
                          cell.failed ? "" : format_double(cell.map_real),
                          cell.failed ? "failed" : "ok"});
  }
  write_csv(path, table);
}

}  // namespace nowcast::tuning
