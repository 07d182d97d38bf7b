#include "popgraph/dataset.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "popgraph/rng.hpp"

namespace popgraph {
namespace {

std::size_t count(const std::vector<bool>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

std::string column_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02zu", prefix, i);
  return buf;
}

// Which of `total` columns carry signal; positions are shuffled so relevance
// is not tied to column order.
std::vector<bool> pick_relevant(std::size_t total, std::size_t relevant, Rng& rng) {
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = total; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<bool> flags(total, false);
  for (std::size_t i = 0; i < relevant; ++i) flags[order[i]] = true;
  return flags;
}

struct ColumnDrawer {
  const SyntheticConfig& config;
  const std::vector<double>& unit_age;
  Rng& rng;

  std::vector<double> relevant() {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const bool saturating = rng.uniform() < config.saturating_fraction;
    constexpr double kCurvature = 3.0;
    const double norm = 1.0 - std::exp(-kCurvature);
    std::vector<double> col(unit_age.size());
    for (std::size_t i = 0; i < col.size(); ++i) {
      const double u = unit_age[i];
      const double shape = saturating ? (1.0 - std::exp(-kCurvature * u)) / norm : u;
      col[i] = sign * shape + config.noise_std * rng.normal();
    }
    return col;
  }

  std::vector<double> noise() {
    const double spread = std::sqrt(1.0 / 12.0 + config.noise_std * config.noise_std);
    std::vector<double> col(unit_age.size());
    // Bounded like a questionnaire score; same variance as a linear relevant column.
    const double half_width = spread * std::sqrt(3.0);
    for (double& v : col) v = 0.5 + half_width * (2.0 * rng.uniform() - 1.0);
    return col;
  }
};

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && (s[start] == ' ' || s[start] == '\t')) ++start;
  return s.substr(start);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::non_imaging: return "non_imaging";
    case ColumnKind::imaging: return "imaging";
    case ColumnKind::feature: return "feature";
  }
  return "?";
}

ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "non_imaging" || s == "non-imaging") return ColumnKind::non_imaging;
  if (s == "imaging") return ColumnKind::imaging;
  if (s == "feature") return ColumnKind::feature;
  throw DataError("unknown column kind '" + s + "' (expected non_imaging, imaging or feature)");
}

std::size_t SplitMasks::count_train() const { return count(train); }
std::size_t SplitMasks::count_val() const { return count(val); }
std::size_t SplitMasks::count_test() const { return count(test); }

Matrix PopulationDataset::phenotype_matrix() const {
  const std::size_t n = num_subjects(), q = num_non_imaging(), s = num_imaging();
  Matrix out(n, q + s);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < q; ++c) out(i, c) = non_imaging(i, c);
    for (std::size_t c = 0; c < s; ++c) out(i, q + c) = features(i, imaging_columns[c]);
  }
  return out;
}

std::vector<PhenotypeInfo> PopulationDataset::phenotype_info() const {
  std::vector<PhenotypeInfo> info;
  info.reserve(num_phenotypes());
  for (std::size_t c = 0; c < num_non_imaging(); ++c) {
    info.push_back({non_imaging_names[c], ColumnKind::non_imaging, Relevance::unknown});
  }
  for (std::size_t c = 0; c < num_imaging(); ++c) {
    info.push_back({feature_names[imaging_columns[c]], ColumnKind::imaging, Relevance::unknown});
  }
  if (relevance.size() == info.size()) {
    for (std::size_t c = 0; c < info.size(); ++c) info[c].relevance = relevance[c];
  }
  return info;
}

std::vector<double> PopulationDataset::train_labels() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (masks.train[i]) out.push_back(labels[i]);
  }
  return out;
}

PopulationDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.subjects < 20) throw DataError("generate_synthetic: need at least 20 subjects");
  if (config.relevant_non_imaging > config.non_imaging) {
    throw DataError("generate_synthetic: relevant_non_imaging exceeds non_imaging column count");
  }
  if (config.relevant_imaging > config.imaging) {
    throw DataError("generate_synthetic: relevant_imaging exceeds imaging column count");
  }
  if (config.features < config.imaging) {
    throw DataError("generate_synthetic: features (M) must be at least the imaging column count");
  }
  if (config.relevant_non_imaging + config.relevant_imaging == 0) {
    throw DataError("generate_synthetic: degenerate config, no relevant columns carry an age signal");
  }
  if (!(config.age_max > config.age_min)) throw DataError("generate_synthetic: empty age range");
  if (!(config.noise_std >= 0.0)) throw DataError("generate_synthetic: noise_std must be non-negative");

  Rng rng(seed);
  const std::size_t n = config.subjects;
  PopulationDataset ds;
  ds.seed = seed;
  ds.labels.resize(n);
  std::vector<double> unit_age(n);
  for (std::size_t i = 0; i < n; ++i) {
    unit_age[i] = rng.uniform();
    ds.labels[i] = config.age_min + (config.age_max - config.age_min) * unit_age[i];
    ds.ids.push_back(std::to_string(i));
  }

  const auto relevant_q = pick_relevant(config.non_imaging, config.relevant_non_imaging, rng);
  const auto relevant_s = pick_relevant(config.imaging, config.relevant_imaging, rng);
  ColumnDrawer draw{config, unit_age, rng};

  ds.non_imaging = Matrix(n, config.non_imaging);
  for (std::size_t c = 0; c < config.non_imaging; ++c) {
    auto col = relevant_q[c] ? draw.relevant() : draw.noise();
    for (std::size_t i = 0; i < n; ++i) ds.non_imaging(i, c) = col[i];
    ds.non_imaging_names.push_back(column_name("nonimg", c));
    ds.relevance.push_back(relevant_q[c] ? Relevance::relevant : Relevance::noise);
  }

  ds.features = Matrix(n, config.features);
  for (std::size_t c = 0; c < config.features; ++c) {
    const bool imaging = c < config.imaging;
    auto col = (imaging && relevant_s[c]) ? draw.relevant() : draw.noise();
    for (std::size_t i = 0; i < n; ++i) ds.features(i, c) = col[i];
    if (imaging) {
      ds.feature_names.push_back(column_name("img", c));
      ds.imaging_columns.push_back(c);
      ds.relevance.push_back(relevant_s[c] ? Relevance::relevant : Relevance::noise);
    } else {
      ds.feature_names.push_back(column_name("feat", c - config.imaging));
    }
  }

  ds.masks = split(n, config.split_fractions, seed ^ 1ULL);
  return ds;
}

CsvLoadResult parse_csv(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: missing header row");
  const auto header = split_line(line);

  auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };

  const auto label_col = find_column(schema.label_column);
  if (!label_col) throw DataError("csv: label column '" + schema.label_column + "' not in header");
  const auto id_col = find_column(schema.id_column);

  std::vector<std::size_t> non_imaging_cols, feature_cols;
  std::vector<bool> feature_is_imaging;
  for (const auto& [name, kind] : schema.kinds) {
    if (!find_column(name)) throw DataError("csv: kind map names unknown column '" + name + "'");
  }
  // File order, not map order.
  for (std::size_t c = 0; c < header.size(); ++c) {
    auto it = schema.kinds.find(header[c]);
    if (it == schema.kinds.end()) continue;
    if (it->second == ColumnKind::non_imaging) {
      non_imaging_cols.push_back(c);
    } else {
      feature_cols.push_back(c);
      feature_is_imaging.push_back(it->second == ColumnKind::imaging);
    }
  }

  std::vector<std::size_t> required = non_imaging_cols;
  required.insert(required.end(), feature_cols.begin(), feature_cols.end());
  required.push_back(*label_col);

  std::vector<std::vector<double>> rows;
  std::vector<std::string> ids;
  std::size_t dropped = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line);
    cells.resize(std::max(cells.size(), header.size()));
    bool missing = false;
    std::vector<double> parsed(header.size(), 0.0);
    for (std::size_t c : required) {
      const std::string& cell = cells[c];
      if (cell.empty()) {
        missing = true;
        continue;
      }
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(cell.c_str(), &end);
      if (end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v)) {
        throw DataError("csv: non-numeric value '" + cell + "' at row " + std::to_string(line_no) +
                        ", column '" + header[c] + "'");
      }
      parsed[c] = v;
    }
    if (missing) {
      ++dropped;
      continue;
    }
    rows.push_back(std::move(parsed));
    ids.push_back(id_col ? cells[*id_col] : std::to_string(rows.size() - 1));
  }
  if (rows.empty()) throw DataError("csv: zero usable rows");

  CsvLoadResult result;
  auto& ds = result.dataset;
  const std::size_t n = rows.size();
  ds.ids = std::move(ids);
  ds.non_imaging = Matrix(n, non_imaging_cols.size());
  ds.features = Matrix(n, feature_cols.size());
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < non_imaging_cols.size(); ++c) ds.non_imaging(i, c) = rows[i][non_imaging_cols[c]];
    for (std::size_t c = 0; c < feature_cols.size(); ++c) ds.features(i, c) = rows[i][feature_cols[c]];
    ds.labels[i] = rows[i][*label_col];
  }
  for (std::size_t c : non_imaging_cols) ds.non_imaging_names.push_back(header[c]);
  for (std::size_t c = 0; c < feature_cols.size(); ++c) {
    ds.feature_names.push_back(header[feature_cols[c]]);
    if (feature_is_imaging[c]) ds.imaging_columns.push_back(c);
  }
  ds.masks = {std::vector<bool>(n, false), std::vector<bool>(n, false), std::vector<bool>(n, false)};
  result.dropped_rows = dropped;
  result.report = "loaded " + std::to_string(n) + " rows, dropped " + std::to_string(dropped);
  return result;
}

CsvLoadResult load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("csv: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

std::string to_csv(const PopulationDataset& ds) {
  std::ostringstream out;
  out << "id";
  for (const auto& name : ds.non_imaging_names) out << ',' << name;
  for (const auto& name : ds.feature_names) out << ',' << name;
  out << ",age\n";
  for (std::size_t i = 0; i < ds.num_subjects(); ++i) {
    out << (i < ds.ids.size() ? ds.ids[i] : std::to_string(i));
    for (std::size_t c = 0; c < ds.num_non_imaging(); ++c) out << ',' << format_double(ds.non_imaging(i, c));
    for (std::size_t c = 0; c < ds.features.cols(); ++c) out << ',' << format_double(ds.features(i, c));
    out << ',' << format_double(ds.labels[i]) << '\n';
  }
  return out.str();
}

void write_csv(const PopulationDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("csv: cannot write '" + path + "'");
  out << to_csv(dataset);
  if (!out) throw DataError("csv: write failed for '" + path + "'");
}

CsvSchema csv_schema_for(const PopulationDataset& ds) {
  CsvSchema schema;
  for (const auto& name : ds.non_imaging_names) schema.kinds[name] = ColumnKind::non_imaging;
  for (const auto& name : ds.feature_names) schema.kinds[name] = ColumnKind::feature;
  for (std::size_t c : ds.imaging_columns) schema.kinds[ds.feature_names[c]] = ColumnKind::imaging;
  return schema;
}

void normalize_minmax(PopulationDataset& ds) {
  const auto& train = ds.masks.train;
  if (train.size() != ds.num_subjects() || ds.masks.count_train() == 0) {
    throw DataError("normalize_minmax: train mask is empty");
  }
  auto normalize = [&](Matrix& m) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t i = 0; i < m.rows(); ++i) {
        if (!train[i]) continue;
        lo = std::min(lo, m(i, c));
        hi = std::max(hi, m(i, c));
      }
      const double range = hi - lo;
      for (std::size_t i = 0; i < m.rows(); ++i) {
        m(i, c) = range > 0.0 ? std::clamp((m(i, c) - lo) / range, 0.0, 1.0) : 0.5;
      }
    }
  };
  normalize(ds.features);
  normalize(ds.non_imaging);
}

SplitMasks split(std::size_t subjects, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw DataError("split: fractions must sum to 1");
  for (double f : fractions) {
    if (!(f > 0.0)) throw DataError("split: every fraction must be positive, an empty split is not allowed");
  }
  if (subjects < 3) throw DataError("split: need at least 3 subjects for three non-empty splits");

  // Largest remainder; ties go to the lower split index.
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = fractions[s] * static_cast<double>(subjects);
    sizes[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[s] = exact - static_cast<double>(sizes[s]);
    assigned += sizes[s];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < subjects; ++i, ++assigned) ++sizes[order[i % 3]];
  // A split rounded to zero borrows one subject from the largest split.
  for (std::size_t s = 0; s < 3; ++s) {
    if (sizes[s] > 0) continue;
    auto largest = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    if (sizes[largest] < 2) throw DataError("split: too few subjects for three non-empty splits");
    --sizes[largest];
    ++sizes[s];
  }

  std::vector<std::size_t> perm(subjects);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = subjects; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

  SplitMasks masks{std::vector<bool>(subjects, false), std::vector<bool>(subjects, false),
                   std::vector<bool>(subjects, false)};
  for (std::size_t i = 0; i < subjects; ++i) {
    const std::size_t node = perm[i];
    if (i < sizes[0]) {
      masks.train[node] = true;
    } else if (i < sizes[0] + sizes[1]) {
      masks.val[node] = true;
    } else {
      masks.test[node] = true;
    }
  }
  return masks;
}

std::vector<std::size_t> assign_classes(const std::vector<double>& labels, const std::vector<double>& edges) {
  std::vector<std::size_t> classes(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    classes[i] = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), labels[i]) - edges.begin());
  }
  return classes;
}

std::vector<double> make_class_labels(PopulationDataset& ds, std::size_t n_classes) {
  if (n_classes < 2) throw DataError("make_class_labels: need at least 2 classes");
  auto train = ds.train_labels();
  if (train.empty()) throw DataError("make_class_labels: empty train split");
  std::sort(train.begin(), train.end());
  if (train.front() == train.back()) throw DataError("make_class_labels: train labels are all equal");

  const std::size_t n = train.size();
  std::vector<double> edges;
  for (std::size_t i = 1; i < n_classes; ++i) {
    const std::size_t pos = i * n / n_classes;
    if (pos == 0) throw DataError("make_class_labels: too few train subjects for " + std::to_string(n_classes) + " classes");
    edges.push_back(0.5 * (train[pos - 1] + train[pos]));
  }
  auto classes = assign_classes(ds.labels, edges);
  std::vector<std::size_t> train_counts(n_classes, 0);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (ds.masks.train[i]) ++train_counts[classes[i]];
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (train_counts[c] == 0) {
      throw DataError("make_class_labels: tied labels leave class " + std::to_string(c) +
                      " empty; use fewer classes");
    }
  }
  ds.classes = std::move(classes);
  return edges;
}

const char* to_string(PhenotypeSubset subset) {
  switch (subset) {
    case PhenotypeSubset::both: return "both";
    case PhenotypeSubset::non_imaging_only: return "non_imaging";
    case PhenotypeSubset::imaging_only: return "imaging";
  }
  return "?";
}

PhenotypeSubset phenotype_subset_from_string(const std::string& s) {
  if (s == "both") return PhenotypeSubset::both;
  if (s == "non_imaging" || s == "non-imaging") return PhenotypeSubset::non_imaging_only;
  if (s == "imaging") return PhenotypeSubset::imaging_only;
  throw DataError("unknown phenotype subset '" + s + "' (expected both, non_imaging or imaging)");
}

PopulationDataset select_phenotypes(const PopulationDataset& ds, PhenotypeSubset subset) {
  PopulationDataset out = ds;
  const std::size_t q = ds.num_non_imaging();
  const bool has_relevance = ds.relevance.size() == ds.num_phenotypes();
  if (subset == PhenotypeSubset::non_imaging_only) {
    out.imaging_columns.clear();
    if (has_relevance) out.relevance.resize(q);
  } else if (subset == PhenotypeSubset::imaging_only) {
    out.non_imaging = Matrix(ds.num_subjects(), 0);
    out.non_imaging_names.clear();
    if (has_relevance) out.relevance.erase(out.relevance.begin(), out.relevance.begin() + static_cast<std::ptrdiff_t>(q));
  }
  if (out.num_phenotypes() == 0) throw DataError("select_phenotypes: subset leaves no phenotype columns");
  return out;
}

}  // namespace popgraph
