#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nowcast/dataset.hpp"
#include "nowcast/gbdt.hpp"
#include "nowcast/synth.hpp"
#include "nowcast/tuning.hpp"

namespace nowcast::pipeline {

inline constexpr const char* kVersion = "0.1.0";

struct LabelingSection {
  int k = 3;
  int elbow_k_min = 1;
  int elbow_k_max = 6;
  int restarts = 10;
};

struct SynthSection {
  synth::SynthConfig config;
  int n_samples = 50000;
  std::vector<double> ratios = {0.6, 0.2, 0.2};
  // non-empty grid: cmd_augment searches it first and adopts the best cell
  std::vector<double> grid_gen_lrs;
  std::vector<double> grid_disc_lrs;
  std::vector<int> grid_epochs;
};

struct SearchSection {
  tuning::SearchSpace space;
  int iterations = 1000;
};

/// Declarative pipeline configuration; a single JSON file. Every numeric
/// default in the library is overridable here. Seeds are mandatory — there is
/// no wall-clock seeding anywhere.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string claims_path;
  std::string features_path;
  std::string output_dir;
  GridSpec grid;
  double cap_percentile = 0.99;
  FeatureSchema schema;
  LabelingSection labeling;
  SynthSection synth;
  gbdt::TrainConfig gbdt;
  SearchSection search;
  double train_frac = 0.8;
  std::string train_input = "augmented";  // or "real"
  std::string evaluate_input = "real_test";  // "real_test", "real_all", or a dataset CSV path
  std::string config_hash;  // of the raw config bytes, filled at load
};

PipelineConfig load_config(const std::string& path);

// Each command reads its inputs, writes its artifacts under output_dir plus a
// run manifest, and returns 0 on success. Missing upstream artifacts raise
// errors naming the expected file.
int cmd_ingest(const PipelineConfig& config);
int cmd_label(const PipelineConfig& config);
int cmd_augment(const PipelineConfig& config);
int cmd_train(const PipelineConfig& config);
int cmd_tune(const PipelineConfig& config);
int cmd_evaluate(const PipelineConfig& config);
int cmd_importance(const PipelineConfig& config);

}  // namespace nowcast::pipeline
