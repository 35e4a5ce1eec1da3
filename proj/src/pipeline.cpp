#include "nowcast/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nowcast/csv.hpp"
#include "nowcast/labeling.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/rng.hpp"

namespace nowcast::pipeline {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

FeatureSchema schema_from_config(const json& j) {
  std::vector<FeatureSpec> features;
  for (const auto& item : j) {
    FeatureSpec spec;
    spec.name = item.at("name").get<std::string>();
    const auto kind = item.at("kind").get<std::string>();
    if (kind == "numeric") {
      spec.kind = FeatureKind::kNumeric;
    } else if (kind == "categorical") {
      spec.kind = FeatureKind::kCategorical;
      spec.levels = item.at("levels").get<std::vector<std::string>>();
    } else {
      throw std::runtime_error("schema: unknown kind '" + kind + "'");
    }
    features.push_back(std::move(spec));
  }
  return FeatureSchema(std::move(features));
}

std::string artifact(const PipelineConfig& config, const std::string& name) {
  return config.output_dir + "/" + name;
}

struct ManifestWriter {
  const PipelineConfig& config;
  std::string command;
  std::vector<std::string> artifacts;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void add(const std::string& path) { artifacts.push_back(path); }

  ~ManifestWriter() {
    try {
      const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - start)
                               .count();
      json j;
      j["command"] = command;
      j["version"] = kVersion;
      j["seed"] = config.seed;
      j["config_hash"] = config.config_hash;
      j["wall_ms"] = elapsed;
      j["artifacts"] = artifacts;
      std::ofstream out(artifact(config, "manifest_" + command + ".json"));
      out << j.dump(1) << "\n";
    } catch (...) {
      // manifests are best-effort bookkeeping
    }
  }
};

}  // namespace

PipelineConfig load_config(const std::string& path) {
  const std::string bytes = read_file(path);
  const json j = json::parse(bytes);
  PipelineConfig config;
  config.config_hash = fnv1a_hex(bytes);
  if (!j.contains("seed")) throw std::runtime_error("config: 'seed' is mandatory");
  config.seed = j.at("seed").get<std::uint64_t>();

  const auto paths = j.at("paths");
  maybe(paths, "claims", config.claims_path);
  maybe(paths, "features", config.features_path);
  config.output_dir = paths.at("output_dir").get<std::string>();

  if (j.contains("grid")) {
    const auto& grid = j.at("grid");
    maybe(grid, "origin_x", config.grid.origin_x);
    maybe(grid, "origin_y", config.grid.origin_y);
    maybe(grid, "cell_size", config.grid.cell_size);
    maybe(grid, "n_cols", config.grid.n_cols);
    maybe(grid, "n_rows", config.grid.n_rows);
  }
  maybe(j, "cap_percentile", config.cap_percentile);
  if (j.contains("schema")) config.schema = schema_from_config(j.at("schema"));

  if (j.contains("labeling")) {
    const auto& labeling = j.at("labeling");
    maybe(labeling, "k", config.labeling.k);
    maybe(labeling, "elbow_k_min", config.labeling.elbow_k_min);
    maybe(labeling, "elbow_k_max", config.labeling.elbow_k_max);
    maybe(labeling, "restarts", config.labeling.restarts);
  }

  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    auto& c = config.synth.config;
    maybe(s, "latent_dim", c.latent_dim);
    maybe(s, "hidden_dims", c.hidden_dims);
    maybe(s, "gen_lr", c.gen_lr);
    maybe(s, "disc_lr", c.disc_lr);
    maybe(s, "batch_size", c.batch_size);
    maybe(s, "max_epochs", c.max_epochs);
    maybe(s, "checkpoint_every", c.checkpoint_every);
    maybe(s, "gumbel_tau", c.gumbel_tau);
    maybe(s, "adam_beta1", c.adam_beta1);
    maybe(s, "adam_beta2", c.adam_beta2);
    maybe(s, "adam_eps", c.adam_eps);
    maybe(s, "n_samples", config.synth.n_samples);
    maybe(s, "ratios", config.synth.ratios);
    if (s.contains("grid")) {
      const auto& grid = s.at("grid");
      maybe(grid, "gen_lr", config.synth.grid_gen_lrs);
      maybe(grid, "disc_lr", config.synth.grid_disc_lrs);
      maybe(grid, "epochs", config.synth.grid_epochs);
    }
  }

  if (j.contains("gbdt")) {
    const auto& g = j.at("gbdt");
    auto& c = config.gbdt;
    maybe(g, "num_trees", c.num_trees);
    maybe(g, "learning_rate", c.learning_rate);
    maybe(g, "num_leaves", c.num_leaves);
    maybe(g, "max_depth", c.max_depth);
    maybe(g, "min_data_in_leaf", c.min_data_in_leaf);
    maybe(g, "l2_lambda", c.l2_lambda);
    maybe(g, "goss_a", c.goss_a);
    maybe(g, "goss_b", c.goss_b);
    maybe(g, "goss_enabled", c.goss_enabled);
    maybe(g, "efb_enabled", c.efb_enabled);
    maybe(g, "efb_max_conflict", c.efb_max_conflict);
    maybe(g, "max_bins", c.max_bins);
  }

  if (j.contains("search")) {
    const auto& s = j.at("search");
    maybe(s, "iterations", config.search.iterations);
    if (s.contains("space")) {
      const auto& space = s.at("space");
      maybe(space, "class0_count", config.search.space.class0_count);
      maybe(space, "class1_count", config.search.space.class1_count);
      maybe(space, "class2_count", config.search.space.class2_count);
      maybe(space, "num_leaves", config.search.space.num_leaves);
      maybe(space, "max_depth", config.search.space.max_depth);
      maybe(space, "min_data_in_leaf", config.search.space.min_data_in_leaf);
    }
  }

  if (j.contains("split")) maybe(j.at("split"), "train_frac", config.train_frac);
  if (j.contains("train")) maybe(j.at("train"), "input", config.train_input);
  if (j.contains("evaluate")) maybe(j.at("evaluate"), "input", config.evaluate_input);
  return config;
}

// ---------------------------------------------------------------------------
// Shared loaders
// ---------------------------------------------------------------------------

namespace {

/// Join the feature table with per-cell labels; every feature row must have a
/// label.
TabularDataset load_real_dataset(const PipelineConfig& config) {
  auto [cells, data] = read_feature_table_csv(config.features_path, config.schema);
  const auto labels = labeling::read_cell_labels_csv(artifact(config, "labels.csv"));
  std::map<std::pair<int, int>, int> by_cell;
  for (const auto& label : labels) by_cell[{label.id.col, label.id.row}] = label.pde_class;
  data.labels.reserve(cells.size());
  for (const auto& cell : cells) {
    const auto it = by_cell.find({cell.col, cell.row});
    if (it == by_cell.end()) {
      throw std::runtime_error("no label for cell (" + std::to_string(cell.col) + ", " +
                               std::to_string(cell.row) + ") in labels.csv");
    }
    data.labels.push_back(it->second);
  }
  return data;
}

/// The 80/20 real-data partition is computed once per output directory and
/// reused by every downstream command; same config + seed, same split.
tuning::Partition ensure_partition(const PipelineConfig& config, const std::vector<int>& labels) {
  const std::string path = artifact(config, "partition.json");
  if (fs::exists(path)) {
    const json j = json::parse(read_file(path));
    tuning::Partition partition;
    partition.seed = j.at("seed").get<std::uint64_t>();
    partition.train_indices = j.at("train_indices").get<std::vector<int>>();
    partition.test_indices = j.at("test_indices").get<std::vector<int>>();
    return partition;
  }
  const tuning::Partition partition =
      tuning::stratified_split(labels, config.train_frac, Rng::derive(config.seed, 0x5917));
  json j;
  j["seed"] = partition.seed;
  j["train_indices"] = partition.train_indices;
  j["test_indices"] = partition.test_indices;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << "\n";
  return partition;
}

int num_pipeline_classes(const PipelineConfig& config) { return config.labeling.k; }

}  // namespace

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_ingest(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  ManifestWriter manifest{config, "ingest"};

  const std::vector<ClaimRecord> all = read_claims_csv(config.claims_path);
  std::vector<ClaimRecord> nfip;
  std::vector<ClaimRecord> ia;
  for (const auto& record : all) {
    (record.source == ClaimSource::kNfip ? nfip : ia).push_back(record);
  }
  const std::vector<ClaimRecord> merged = merge_claims(nfip, ia);
  write_claims_csv(artifact(config, "merged_claims.csv"), merged);
  manifest.add("merged_claims.csv");

  std::vector<NormalizedClaim> normalized;
  if (!merged.empty()) normalized = normalize_claims(merged, config.cap_percentile);
  write_normalized_claims_csv(artifact(config, "normalized_claims.csv"), normalized);
  manifest.add("normalized_claims.csv");

  const std::vector<GridCell> cells = aggregate_to_grid(sum_by_building(normalized), config.grid);
  write_grid_cells_csv(artifact(config, "grid_cells.csv"), cells);
  manifest.add("grid_cells.csv");

  std::cout << "ingest: " << all.size() << " claims read, " << merged.size() << " after merge, "
            << cells.size() << " grid cells written\n";
  return 0;
}

int cmd_label(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  ManifestWriter manifest{config, "label"};

  const std::vector<GridCell> cells = read_grid_cells_csv(artifact(config, "grid_cells.csv"));
  Eigen::VectorXd sums(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) sums[static_cast<Eigen::Index>(i)] = cells[i].claim_sum;

  std::vector<double> distinct(sums.data(), sums.data() + sums.size());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const int k_hi = std::min(config.labeling.elbow_k_max, static_cast<int>(distinct.size()));

  const auto curve = labeling::elbow_curve(sums, config.labeling.elbow_k_min, k_hi,
                                           config.labeling.restarts,
                                           Rng::derive(config.seed, 0xE1B0));
  labeling::write_elbow_csv(artifact(config, "elbow.csv"), curve);
  manifest.add("elbow.csv");

  const auto labels = labeling::label_cells(cells, config.labeling.k,
                                            Rng::derive(config.seed, 0x1AB3),
                                            config.labeling.restarts);
  labeling::write_cell_labels_csv(artifact(config, "labels.csv"), labels);
  manifest.add("labels.csv");

  std::vector<std::size_t> class_counts(static_cast<std::size_t>(config.labeling.k), 0);
  for (const auto& label : labels) class_counts[static_cast<std::size_t>(label.pde_class)] += 1;
  std::cout << "label: " << labels.size() << " cells into " << config.labeling.k << " classes (";
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    std::cout << (c > 0 ? ", " : "") << class_counts[c];
  }
  std::cout << ")\n";
  return 0;
}

int cmd_augment(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  ManifestWriter manifest{config, "augment"};

  const TabularDataset real = load_real_dataset(config);
  const tuning::Partition partition = ensure_partition(config, real.labels);
  manifest.add("partition.json");
  const TabularDataset train80 = real.select(partition.train_indices);
  const int k = num_pipeline_classes(config);

  synth::SynthConfig synth_config = config.synth.config;
  synth_config.seed = Rng::derive(config.seed, 0x5F17);

  // a declared grid is searched first, checkpoint-review style; the winning
  // cell decides the final synthesizer settings
  if (!config.synth.grid_gen_lrs.empty()) {
    const TabularDataset real_test = real.select(partition.test_indices);
    tuning::SynthGridProtocol protocol;
    protocol.n_samples = config.synth.n_samples;
    protocol.ratios = config.synth.ratios;
    protocol.gbdt_config = config.gbdt;
    const auto cells = tuning::grid_search_synth(
        train80, real_test, config.synth.grid_gen_lrs, config.synth.grid_disc_lrs,
        config.synth.grid_epochs, synth_config, protocol, Rng::derive(config.seed, 0x641D));
    tuning::write_synth_grid_csv(artifact(config, "synth_grid.csv"), cells);
    manifest.add("synth_grid.csv");
    if (cells.empty() || cells.front().failed) {
      throw std::runtime_error("synthesizer grid search produced no usable cell");
    }
    synth_config.gen_lr = cells.front().gen_lr;
    synth_config.disc_lr = cells.front().disc_lr;
    synth_config.max_epochs = cells.front().epochs;
    synth_config.checkpoint_every = std::min(synth_config.checkpoint_every,
                                             synth_config.max_epochs);
    std::cout << "augment: grid selected gen_lr=" << format_double(synth_config.gen_lr)
              << " disc_lr=" << format_double(synth_config.disc_lr)
              << " epochs=" << synth_config.max_epochs << "\n";
  }

  const std::string checkpoint_dir = artifact(config, "checkpoints");
  fs::create_directories(checkpoint_dir);
  const synth::FitResult fitted = synth::fit(train80, k, synth_config, checkpoint_dir);
  synth::save_model(artifact(config, "synth_model.json"), fitted.model);
  manifest.add("synth_model.json");
  synth::write_loss_log_csv(artifact(config, "loss_log.csv"), fitted.model.log);
  manifest.add("loss_log.csv");

  const TabularDataset augmented =
      synth::sample(fitted.model, config.synth.n_samples, config.synth.ratios,
                    Rng::derive(config.seed, 0xA46));
  write_dataset_csv(artifact(config, "augmented.csv"), augmented);
  manifest.add("augmented.csv");

  std::cout << "augment: " << fitted.checkpoints.size() << " checkpoints, "
            << augmented.n_rows() << " synthetic rows written\n";
  return 0;
}

int cmd_train(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  ManifestWriter manifest{config, "train"};

  TabularDataset train_data;
  if (config.train_input == "augmented") {
    train_data = read_dataset_csv(artifact(config, "augmented.csv"), config.schema, true);
  } else if (config.train_input == "real") {
    const TabularDataset real = load_real_dataset(config);
    const tuning::Partition partition = ensure_partition(config, real.labels);
    train_data = real.select(partition.train_indices);
  } else {
    throw std::runtime_error("train.input must be 'augmented' or 'real', got '" +
                             config.train_input + "'");
  }

  gbdt::TrainConfig train_config = config.gbdt;
  train_config.seed = Rng::derive(config.seed, 0x7EA1);
  const gbdt::GbdtModel model =
      gbdt::train(train_data, train_data.labels, train_config, num_pipeline_classes(config));
  gbdt::save_model(artifact(config, "gbdt_model.json"), model);
  manifest.add("gbdt_model.json");

  std::cout << "train: " << train_data.n_rows() << " rows, " << model.trees.size()
            << " boosting iterations, final loss "
            << format_double(model.train_loss.back()) << "\n";
  return 0;
}

int cmd_tune(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  ManifestWriter manifest{config, "tune"};

  const TabularDataset pool =
      read_dataset_csv(artifact(config, "augmented.csv"), config.schema, true);
  const TabularDataset real = load_real_dataset(config);
  const tuning::Partition partition = ensure_partition(config, real.labels);
  const TabularDataset eval_set = real.select(partition.test_indices);

  const tuning::RandomSearchResult result =
      tuning::random_search(pool, eval_set, config.search.space, config.search.iterations,
                            config.gbdt, Rng::derive(config.seed, 0x7E57));
  tuning::write_trials_csv(artifact(config, "trials.csv"), result.trials);
  manifest.add("trials.csv");

  nlohmann::json best;
  best["trial"] = result.best.index;
  best["class_counts"] = result.best.class_counts;
  best["num_leaves"] = result.best.num_leaves;
  best["max_depth"] = result.best.max_depth;
  best["min_data_in_leaf"] = result.best.min_data_in_leaf;
  best["map_eval"] = result.best.map_eval;
  {
    std::ofstream out(artifact(config, "best_trial.json"));
    if (!out) throw std::runtime_error("cannot write best_trial.json");
    out << best.dump(1) << "\n";
  }
  manifest.add("best_trial.json");
  gbdt::save_model(artifact(config, "gbdt_model.json"), result.best_model);
  manifest.add("gbdt_model.json");

  std::cout << "tune: " << result.trials.size() << " trials, best trial " << result.best.index
            << " map " << format_double(result.best.map_eval) << "\n";
  return 0;
}

int cmd_evaluate(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  ManifestWriter manifest{config, "evaluate"};

  const gbdt::GbdtModel model = gbdt::load_model(artifact(config, "gbdt_model.json"));

  TabularDataset eval_set;
  if (config.evaluate_input == "real_test") {
    const TabularDataset real = load_real_dataset(config);
    const tuning::Partition partition = ensure_partition(config, real.labels);
    eval_set = real.select(partition.test_indices);
  } else if (config.evaluate_input == "real_all") {
    eval_set = load_real_dataset(config);
  } else {
    eval_set = read_dataset_csv(config.evaluate_input, config.schema, true);
  }

  const Eigen::MatrixXd probs = model.predict_proba(eval_set);
  const std::vector<int> predicted = model.predict_class(eval_set);
  const int k = model.num_classes;

  const metrics::ConfusionMatrix cm = metrics::confusion(eval_set.labels, predicted, k);
  const std::vector<double> ap = metrics::per_class_average_precision(probs, eval_set.labels);
  const double map = std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(ap.size());
  const double acc = metrics::accuracy(eval_set.labels, predicted);

  {
    std::ofstream out(artifact(config, "report.txt"));
    if (!out) throw std::runtime_error("cannot write report.txt");
    out << metrics::format_evaluation_report(cm, ap, map, acc);
  }
  manifest.add("report.txt");

  for (int c = 0; c < k; ++c) {
    std::vector<double> scores(static_cast<std::size_t>(eval_set.n_rows()));
    std::vector<bool> positives(static_cast<std::size_t>(eval_set.n_rows()));
    for (Eigen::Index i = 0; i < eval_set.n_rows(); ++i) {
      scores[static_cast<std::size_t>(i)] = probs(i, c);
      positives[static_cast<std::size_t>(i)] = eval_set.labels[static_cast<std::size_t>(i)] == c;
    }
    const std::string name = "pr_curve_class_" + std::to_string(c) + ".csv";
    metrics::write_pr_curve_csv(artifact(config, name), metrics::pr_curve(scores, positives));
    manifest.add(name);
  }

  std::cout << "evaluate: " << eval_set.n_rows() << " rows, accuracy " << format_double(acc)
            << ", map " << format_double(map) << "\n";
  return 0;
}

int cmd_importance(const PipelineConfig& config) {
  fs::create_directories(config.output_dir);
  ManifestWriter manifest{config, "importance"};

  const gbdt::GbdtModel model = gbdt::load_model(artifact(config, "gbdt_model.json"));
  const Eigen::VectorXi counts = gbdt::split_importance(model);

  std::vector<int> order(static_cast<std::size_t>(counts.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&counts](int a, int b) { return counts[a] > counts[b]; });

  CsvTable table;
  table.header = {"feature", "split_count"};
  for (const int j : order) {
    table.rows.push_back({model.schema.feature(j).name, std::to_string(counts[j])});
  }
  write_csv(artifact(config, "importance.csv"), table);
  manifest.add("importance.csv");

  std::cout << "importance: " << counts.sum() << " splits over " << counts.size()
            << " features\n";
  return 0;
}

}  // namespace nowcast::pipeline
