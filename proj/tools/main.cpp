#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "popgraph/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(item, &used);
    if (used != item.size()) throw CLI::ValidationError("--seeds", "'" + item + "' is not an integer");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw CLI::ValidationError("--seeds", "no seeds given");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive population-graph learning experiments"};
  app.require_subcommand(1);

  std::string config_path, out, seeds, run_dir, what = "attention";
  std::size_t workers = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Experiment config (JSON); defaults apply when omitted")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "Output directory (overrides the config)");
    cmd->add_option("--seeds", seeds, "Comma-separated seeds (overrides the config)");
    cmd->add_option("--workers", workers, "Concurrent runs (overrides the config)");
  };
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset and its metadata");
  add_common(generate);
  auto* train = app.add_subcommand("train", "Train the adaptive pipeline for every seed");
  add_common(train);
  auto* ablate = app.add_subcommand("ablate", "Run the phenotype-subset x metric x method grid");
  add_common(ablate);
  auto* exporter = app.add_subcommand("export", "Export attention or graphs from a trained run directory");
  exporter->add_option("run_dir", run_dir, "Run directory written by 'train'")->required();
  exporter->add_option("--what", what, "attention | graph-static | graph-learned")
      ->check(CLI::IsMember({"attention", "graph-static", "graph-learned"}));
  exporter->add_option("--out", out, "Output directory (defaults to the run directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (exporter->parsed()) {
      const auto result = popgraph::cmd_export(run_dir, popgraph::export_what_from_string(what), out);
      for (const auto& f : result.files) std::cout << "wrote " << f << '\n';
      if (result.homophily) std::cout << "homophily " << *result.homophily << '\n';
      if (result.sampled_homophily) std::cout << "sampled homophily " << *result.sampled_homophily << '\n';
      return 0;
    }

    popgraph::ExperimentConfig config;
    if (!config_path.empty()) config = popgraph::ExperimentConfig::load(config_path);
    if (!out.empty()) config.output = out;
    if (!seeds.empty()) config.seeds = parse_seeds(seeds);
    if (workers > 0) config.workers = workers;

    if (generate->parsed()) {
      const auto result = popgraph::cmd_generate(config, config.output);
      std::cout << "wrote " << result.csv_path << "\nwrote " << result.meta_path << '\n';
      return 0;
    }
    if (train->parsed()) {
      const auto summary = popgraph::cmd_train(config);
      for (const auto& run : summary.runs) {
        std::cout << "seed " << run.seed << ": ";
        if (!run.metrics) {
          std::cout << "FAILED " << run.error << '\n';
        } else if (run.metrics->mae) {
          std::cout << "MAE " << *run.metrics->mae << " r " << run.metrics->pearson_r.value_or(NAN) << '\n';
        } else {
          std::cout << "accuracy " << run.metrics->accuracy.value_or(NAN) << " AUC "
                    << run.metrics->macro_auc.value_or(NAN) << '\n';
        }
      }
      std::cout << "wrote " << summary.aggregate_path << '\n';
      return summary.exit_code;
    }
    const auto summary = popgraph::cmd_ablate(config);
    for (const auto& row : summary.rows) {
      if (!row.metrics) std::cerr << row.subset << '/' << row.metric << '/' << row.method << " seed " << row.seed
                                  << " FAILED: " << row.error << '\n';
    }
    std::cout << "wrote " << summary.table_path << '\n';
    return summary.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
