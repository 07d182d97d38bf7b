#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "popgraph/tensor.hpp"

namespace popgraph {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ColumnKind { non_imaging, imaging, feature };

const char* to_string(ColumnKind kind);
ColumnKind column_kind_from_string(const std::string& s);

enum class Relevance { unknown, relevant, noise };

struct SplitMasks {
  std::vector<bool> train;
  std::vector<bool> val;
  std::vector<bool> test;

  std::size_t count_train() const;
  std::size_t count_val() const;
  std::size_t count_test() const;
};

struct PhenotypeInfo {
  std::string name;
  ColumnKind kind = ColumnKind::non_imaging;
  Relevance relevance = Relevance::unknown;
};

/// One row per subject.
///
/// Phenotypes are ordered non-imaging first, then imaging (q || s). Imaging
/// phenotypes are not stored separately: each is a column of the node
/// feature matrix, referenced by `imaging_columns`.
struct PopulationDataset {
  Matrix features;                         // N x M
  std::vector<std::string> feature_names;  // M
  Matrix non_imaging;                      // N x Q
  std::vector<std::string> non_imaging_names;
  std::vector<std::size_t> imaging_columns;  // S indices into features
  std::vector<Relevance> relevance;          // Q + S, phenotype order
  std::vector<std::string> ids;
  std::vector<double> labels;  // years
  SplitMasks masks;
  std::optional<std::vector<std::size_t>> classes;
  std::uint64_t seed = 0;

  std::size_t num_subjects() const { return labels.size(); }
  std::size_t num_non_imaging() const { return non_imaging.cols(); }
  std::size_t num_imaging() const { return imaging_columns.size(); }
  std::size_t num_phenotypes() const { return num_non_imaging() + num_imaging(); }

  /// N x (Q+S) matrix in phenotype order.
  Matrix phenotype_matrix() const;
  std::vector<PhenotypeInfo> phenotype_info() const;
  std::vector<double> train_labels() const;
};

struct SyntheticConfig {
  std::size_t subjects = 800;
  std::size_t non_imaging = 20;
  std::size_t imaging = 20;
  std::size_t features = 30;  // M >= imaging; extra columns are pure noise
  std::size_t relevant_non_imaging = 10;
  std::size_t relevant_imaging = 10;
  double noise_std = 0.5;
  double age_min = 47.0;
  double age_max = 81.0;
  /// Share of relevant columns using a saturating shape instead of a linear one.
  double saturating_fraction = 0.5;
  std::array<double, 3> split_fractions{0.75, 0.05, 0.20};
};

/// Draws a population whose relevant columns are monotone in age.
///
/// Ages are uniform on [age_min, age_max]. With u the age rescaled to [0, 1],
/// a relevant column is sign * shape(u) + N(0, noise_std^2), shape being
/// either u or the saturating (1 - e^{-3u}) / (1 - e^{-3}). Noise columns are
/// age-independent and uniform, with the variance of a linear relevant
/// column. Being bounded, they keep their full spread after min-max scaling.
/// Values are raw; call normalize_minmax before training.
PopulationDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

struct CsvSchema {
  std::string label_column = "age";
  std::string id_column = "id";
  /// Columns absent from the map are ignored.
  std::map<std::string, ColumnKind> kinds;
};

struct CsvLoadResult {
  PopulationDataset dataset;
  std::size_t dropped_rows = 0;
  std::string report;
};

/// Reads `id,<columns>,age`. Rows with an empty required cell are dropped.
/// The returned dataset has no split assigned.
CsvLoadResult load_csv(const std::string& path, const CsvSchema& schema);
CsvLoadResult parse_csv(const std::string& text, const CsvSchema& schema);

/// Writes every column with round-trip precision; the schema that reloads it
/// is returned by csv_schema_for.
void write_csv(const PopulationDataset& dataset, const std::string& path);
std::string to_csv(const PopulationDataset& dataset);
CsvSchema csv_schema_for(const PopulationDataset& dataset);

/// Train-split min-max scaling of every feature and non-imaging column.
/// Constant columns map to 0.5; val/test values are clamped to [0, 1].
void normalize_minmax(PopulationDataset& dataset);

/// Uniform random partition with largest-remainder sizing.
SplitMasks split(std::size_t subjects, const std::array<double, 3>& fractions, std::uint64_t seed);

/// Class labels from train-label quantiles; returns the bin edges used.
std::vector<double> make_class_labels(PopulationDataset& dataset, std::size_t n_classes = 4);
std::vector<std::size_t> assign_classes(const std::vector<double>& labels, const std::vector<double>& edges);

enum class PhenotypeSubset { both, non_imaging_only, imaging_only };
const char* to_string(PhenotypeSubset subset);
PhenotypeSubset phenotype_subset_from_string(const std::string& s);

/// Drops phenotype columns outside `subset`. Node features are unchanged.
PopulationDataset select_phenotypes(const PopulationDataset& dataset, PhenotypeSubset subset);

}  // namespace popgraph
