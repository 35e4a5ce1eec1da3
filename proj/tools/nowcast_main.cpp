#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "nowcast/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"grid-level flood damage nowcasting pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_override = 0;
  bool has_seed_override = false;

  const std::map<std::string, std::function<int(const nowcast::pipeline::PipelineConfig&)>>
      commands = {{"ingest", nowcast::pipeline::cmd_ingest},
                  {"label", nowcast::pipeline::cmd_label},
                  {"augment", nowcast::pipeline::cmd_augment},
                  {"train", nowcast::pipeline::cmd_train},
                  {"tune", nowcast::pipeline::cmd_tune},
                  {"evaluate", nowcast::pipeline::cmd_evaluate},
                  {"importance", nowcast::pipeline::cmd_importance}};

  const std::map<std::string, std::string> about = {
      {"ingest", "merge claim sources, normalize, aggregate onto the grid"},
      {"label", "k-means damage classes per cell plus the elbow curve"},
      {"augment", "fit the conditional synthesizer and generate augmented data"},
      {"train", "train the boosted-tree classifier"},
      {"tune", "random search over imbalance ratios and tree hyperparameters"},
      {"evaluate", "accuracy, per-class AP, mAP, confusion and PR curves"},
      {"importance", "per-feature split counts"}};

  for (const auto& [name, description] : about) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "pipeline config JSON")->required();
    sub->add_option("--seed", seed_override, "override the config seed")
        ->each([&has_seed_override](const std::string&) { has_seed_override = true; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    nowcast::pipeline::PipelineConfig config = nowcast::pipeline::load_config(config_path);
    if (has_seed_override) config.seed = seed_override;
    const std::string command = app.get_subcommands().front()->get_name();
    return commands.at(command)(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
