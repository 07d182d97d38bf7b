#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "popgraph/baselines.hpp"
#include "popgraph/dataset.hpp"
#include "popgraph/trainer.hpp"

namespace popgraph {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string source = "synthetic";  // or "csv"
  std::uint64_t seed = 0;
  SyntheticConfig synthetic;
  std::string csv_path;
  CsvSchema schema;
};

struct AblationConfig {
  std::vector<std::string> subsets{"non_imaging", "both", "imaging"};
  std::vector<std::string> metrics{"euclidean", "cosine", "hyperbolic", "random"};
  std::vector<std::string> methods{"adaptive", "static", "random", "linear"};
};

struct BaselineConfig {
  double ridge = kDefaultRidge;
  std::size_t static_k = 5;
  DistanceMetric static_metric = DistanceMetric::cosine;
};

/// Everything needed to reproduce an experiment. The string "random" as the
/// training metric selects uniformly random graphs.
struct ExperimentConfig {
  DatasetConfig dataset;
  TrainConfig train;
  bool random_metric = false;
  AblationConfig ablation;
  BaselineConfig baselines;
  std::string output = "runs";
  std::vector<std::uint64_t> seeds{0};
  std::size_t workers = 1;

  /// Full document, including output location and seeds.
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  /// FNV-1a over the canonical (sorted-key) form of the experiment content.
  /// Output directory, seeds and worker count do not participate.
  std::string hash() const;
};

/// Loads or generates the dataset, splits and normalizes it, and derives
/// class labels for classification.
PopulationDataset build_dataset(const ExperimentConfig& config);

/// Training configuration for one seed.
TrainConfig train_config_for(const ExperimentConfig& config, std::uint64_t seed);

std::string metrics_to_json(const MetricsRecord& record);
std::string history_to_csv(std::span<const EpochRecord> history);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  double median = 0.0;
};
Summary summarize(std::vector<double> values);

// ---------------------------------------------------------------------------
// Commands. Each returns the process exit status.

struct GenerateResult {
  std::string csv_path;
  std::string meta_path;
};
GenerateResult cmd_generate(const ExperimentConfig& config, const std::string& out_dir);

struct SeedRun {
  std::uint64_t seed = 0;
  std::optional<MetricsRecord> metrics;
  std::optional<double> attention_precision;
  std::string error;
};

struct TrainSummary {
  std::vector<SeedRun> runs;
  std::string aggregate_path;
  int exit_code = 0;
};
TrainSummary cmd_train(const ExperimentConfig& config);

struct AblationRow {
  std::string subset;
  std::string metric;  // "-" when the method ignores it
  std::string method;
  std::uint64_t seed = 0;
  std::optional<MetricsRecord> metrics;
  std::string error;
};

struct AblationSummary {
  std::vector<AblationRow> rows;
  std::string table_path;
  int exit_code = 0;
};
AblationSummary cmd_ablate(const ExperimentConfig& config);

enum class ExportWhat { attention, graph_static, graph_learned };
ExportWhat export_what_from_string(const std::string& s);

struct ExportResult {
  std::vector<std::string> files;
  std::optional<double> homophily;
  std::optional<double> sampled_homophily;
};
ExportResult cmd_export(const std::string& run_dir, ExportWhat what, const std::string& out_dir);

}  // namespace popgraph
