#include "popgraph/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"
#include "popgraph/checkpoint.hpp"

namespace popgraph {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Reads keys from one JSON object and rejects any it did not consume, so a
// misspelled key fails loudly instead of silently using the default.
class BlockReader {
 public:
  BlockReader(const json& doc, std::string where) : doc_(doc), where_(std::move(where)) {
    if (!doc_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return doc_.contains(key) ? &doc_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.contains(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& doc_;
  std::string where_;
  std::set<std::string> seen_;
};

json experiment_content(const ExperimentConfig& c) {
  const auto& s = c.dataset.synthetic;
  json kinds = json::object();
  for (const auto& [name, kind] : c.dataset.schema.kinds) kinds[name] = to_string(kind);
  json dataset = {
      {"source", c.dataset.source},
      {"seed", c.dataset.seed},
      {"subjects", s.subjects},
      {"non_imaging", s.non_imaging},
      {"imaging", s.imaging},
      {"features", s.features},
      {"relevant_non_imaging", s.relevant_non_imaging},
      {"relevant_imaging", s.relevant_imaging},
      {"noise_std", s.noise_std},
      {"age_min", s.age_min},
      {"age_max", s.age_max},
      {"saturating_fraction", s.saturating_fraction},
      {"split", s.split_fractions},
      {"csv_path", c.dataset.csv_path},
      {"label_column", c.dataset.schema.label_column},
      {"id_column", c.dataset.schema.id_column},
      {"columns", kinds},
  };
  const auto& t = c.train;
  json train = {
      {"learning_rate", t.optimizer.learning_rate},
      {"beta1", t.optimizer.beta1},
      {"beta2", t.optimizer.beta2},
      {"adam_epsilon", t.optimizer.epsilon},
      {"weight_decay", t.optimizer.weight_decay},
      {"epochs", t.epochs},
      {"patience", t.patience},
      {"k", t.k},
      {"metric", c.random_metric ? std::string("random") : std::string(to_string(t.metric))},
      {"inference_samples", t.inference_samples},
      {"lambda", t.graph_loss_weight},
      {"graph_loss", to_string(t.graph_loss_form)},
      {"conv_units", t.gcn.conv_units},
      {"fc_units", t.gcn.fc_units},
      {"attention_hidden", t.attention_hidden},
      {"huber_delta", t.huber_delta},
      {"initial_log_temperature", t.initial_log_temperature},
  };
  if (t.frozen_attention) train["frozen_attention"] = *t.frozen_attention;
  return {
      {"dataset", dataset},
      {"task", to_string(t.task)},
      {"n_classes", t.n_classes},
      {"train", train},
      {"ablation",
       {{"subsets", c.ablation.subsets}, {"metrics", c.ablation.metrics}, {"methods", c.ablation.methods}}},
      {"baselines",
       {{"ridge", c.baselines.ridge},
        {"static_k", c.baselines.static_k},
        {"static_metric", to_string(c.baselines.static_metric)}}},
  };
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

// Runs jobs [0, n) on up to `workers` threads.
void run_parallel(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

json summary_json(const Summary& s) {
  return {{"n", s.n}, {"mean", s.mean}, {"std", s.std}, {"median", s.median}};
}

double primary_metric(const MetricsRecord& m) {
  return m.task == Task::regression ? m.mae.value_or(NAN) : m.accuracy.value_or(NAN);
}

}  // namespace

std::string ExperimentConfig::to_json() const {
  json doc = experiment_content(*this);
  doc["output"] = output;
  doc["seeds"] = seeds;
  doc["workers"] = workers;
  return doc.dump(2) + "\n";
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(experiment_content(*this).dump()); }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  BlockReader root(doc, "config");
  std::string task = to_string(c.train.task);
  root.get("task", task);
  try {
    c.train.task = task_from_string(task);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.task: ") + e.what());
  }
  root.get("n_classes", c.train.n_classes);
  root.get("output", c.output);
  root.get("seeds", c.seeds);
  root.get("workers", c.workers);

  if (const json* d = root.child("dataset")) {
    BlockReader r(*d, "config.dataset");
    auto& s = c.dataset.synthetic;
    r.get("source", c.dataset.source);
    r.get("seed", c.dataset.seed);
    r.get("subjects", s.subjects);
    r.get("non_imaging", s.non_imaging);
    r.get("imaging", s.imaging);
    r.get("features", s.features);
    r.get("relevant_non_imaging", s.relevant_non_imaging);
    r.get("relevant_imaging", s.relevant_imaging);
    r.get("noise_std", s.noise_std);
    r.get("age_min", s.age_min);
    r.get("age_max", s.age_max);
    r.get("saturating_fraction", s.saturating_fraction);
    r.get("split", s.split_fractions);
    r.get("csv_path", c.dataset.csv_path);
    r.get("label_column", c.dataset.schema.label_column);
    r.get("id_column", c.dataset.schema.id_column);
    std::map<std::string, std::string> kinds;
    r.get("columns", kinds);
    for (const auto& [name, kind] : kinds) {
      try {
        c.dataset.schema.kinds[name] = column_kind_from_string(kind);
      } catch (const std::exception& e) {
        throw ConfigError("config.dataset.columns." + name + ": " + e.what());
      }
    }
    r.finish();
    if (c.dataset.source != "synthetic" && c.dataset.source != "csv") {
      throw ConfigError("config.dataset.source: expected 'synthetic' or 'csv', got '" + c.dataset.source + "'");
    }
  }

  if (const json* t = root.child("train")) {
    BlockReader r(*t, "config.train");
    auto& tc = c.train;
    r.get("learning_rate", tc.optimizer.learning_rate);
    r.get("beta1", tc.optimizer.beta1);
    r.get("beta2", tc.optimizer.beta2);
    r.get("adam_epsilon", tc.optimizer.epsilon);
    r.get("weight_decay", tc.optimizer.weight_decay);
    r.get("epochs", tc.epochs);
    r.get("patience", tc.patience);
    r.get("k", tc.k);
    std::string metric = to_string(tc.metric);
    r.get("metric", metric);
    if (metric == "random") {
      c.random_metric = true;
    } else {
      try {
        tc.metric = distance_metric_from_string(metric);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config.train.metric: ") + e.what());
      }
    }
    r.get("inference_samples", tc.inference_samples);
    r.get("lambda", tc.graph_loss_weight);
    std::string form = to_string(tc.graph_loss_form);
    r.get("graph_loss", form);
    try {
      tc.graph_loss_form = graph_loss_form_from_string(form);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.train.graph_loss: ") + e.what());
    }
    r.get("conv_units", tc.gcn.conv_units);
    r.get("fc_units", tc.gcn.fc_units);
    r.get("attention_hidden", tc.attention_hidden);
    r.get("huber_delta", tc.huber_delta);
    r.get("initial_log_temperature", tc.initial_log_temperature);
    std::vector<double> frozen;
    if (t->contains("frozen_attention")) {
      r.get("frozen_attention", frozen);
      tc.frozen_attention = frozen;
    } else {
      r.get("frozen_attention", frozen);
    }
    r.finish();
  }

  if (const json* a = root.child("ablation")) {
    BlockReader r(*a, "config.ablation");
    r.get("subsets", c.ablation.subsets);
    r.get("metrics", c.ablation.metrics);
    r.get("methods", c.ablation.methods);
    r.finish();
  }

  if (const json* b = root.child("baselines")) {
    BlockReader r(*b, "config.baselines");
    r.get("ridge", c.baselines.ridge);
    r.get("static_k", c.baselines.static_k);
    std::string metric = to_string(c.baselines.static_metric);
    r.get("static_metric", metric);
    try {
      c.baselines.static_metric = distance_metric_from_string(metric);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.baselines.static_metric: ") + e.what());
    }
    r.finish();
  }
  root.finish();

  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.train: ") + e.what());
  }
  if (c.seeds.empty()) throw ConfigError("config.seeds: at least one seed is required");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  try {
    return from_json(read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
}

PopulationDataset build_dataset(const ExperimentConfig& config) {
  PopulationDataset ds;
  if (config.dataset.source == "synthetic") {
    ds = generate_synthetic(config.dataset.synthetic, config.dataset.seed);
  } else {
    if (config.dataset.csv_path.empty()) throw ConfigError("config.dataset.csv_path: required for a csv source");
    CsvLoadResult loaded = load_csv(config.dataset.csv_path, config.dataset.schema);
    ds = std::move(loaded.dataset);
    ds.seed = config.dataset.seed;
    ds.masks = split(ds.num_subjects(), config.dataset.synthetic.split_fractions, config.dataset.seed);
  }
  normalize_minmax(ds);
  if (config.train.task == Task::classification) make_class_labels(ds, config.train.n_classes);
  return ds;
}

TrainConfig train_config_for(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig tc = config.train;
  tc.seed = seed;
  tc.graph_mode = config.random_metric ? GraphMode::random : GraphMode::adaptive;
  return tc;
}

std::string metrics_to_json(const MetricsRecord& r) {
  json doc;
  doc["config_hash"] = r.config_hash;
  doc["seed"] = r.seed;
  doc["task"] = to_string(r.task);
  doc["method"] = r.method;
  doc["mae"] = optional_number(r.mae);
  doc["pearson_r"] = optional_number(r.pearson_r);
  doc["accuracy"] = optional_number(r.accuracy);
  doc["macro_auc"] = optional_number(r.macro_auc);
  doc["macro_f1"] = optional_number(r.macro_f1);
  doc["homophily"] = optional_number(r.homophily);
  doc["sampled_homophily"] = optional_number(r.sampled_homophily);
  doc["epsilon"] = r.epsilon;
  doc["temperature"] = r.temperature;
  doc["best_epoch"] = r.best_epoch;
  doc["epochs_run"] = r.epochs_run;
  doc["warnings"] = r.warnings;
  json history = json::array();
  for (const auto& e : r.history) {
    history.push_back({{"epoch", e.epoch},
                       {"L_total", e.total},
                       {"L_gcn", e.gcn},
                       {"L_graph", e.graph},
                       {"val_metric", e.val_metric},
                       {"temperature", e.temperature}});
  }
  doc["history"] = std::move(history);
  return doc.dump(1) + "\n";
}

std::string history_to_csv(std::span<const EpochRecord> history) {
  std::string out = "epoch,L_total,L_gcn,L_graph,val_metric\n";
  for (const auto& e : history) {
    out += std::to_string(e.epoch) + ',' + fmt(e.total) + ',' + fmt(e.gcn) + ',' + fmt(e.graph) + ',' +
           fmt(e.val_metric) + '\n';
  }
  return out;
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return s;
}

GenerateResult cmd_generate(const ExperimentConfig& config, const std::string& out_dir) {
  if (config.dataset.source != "synthetic") throw ConfigError("generate: dataset source must be synthetic");
  const PopulationDataset ds = generate_synthetic(config.dataset.synthetic, config.dataset.seed);
  const fs::path dir(out_dir);
  GenerateResult result{(dir / "dataset.csv").string(), (dir / "dataset.meta.json").string()};
  fs::create_directories(dir);
  write_csv(ds, result.csv_path);

  json meta;
  meta["config_hash"] = config.hash();
  meta["seed"] = ds.seed;
  meta["subjects"] = ds.num_subjects();
  meta["label_column"] = "age";
  json columns = json::array();
  std::size_t relevant_non_imaging = 0, relevant_imaging = 0;
  for (const auto& p : ds.phenotype_info()) {
    const bool relevant = p.relevance == Relevance::relevant;
    columns.push_back({{"name", p.name}, {"kind", to_string(p.kind)}, {"relevant", relevant}});
    if (relevant) ++(p.kind == ColumnKind::imaging ? relevant_imaging : relevant_non_imaging);
  }
  meta["phenotypes"] = std::move(columns);
  meta["relevant_non_imaging"] = relevant_non_imaging;
  meta["relevant_imaging"] = relevant_imaging;
  meta["feature_columns"] = ds.feature_names;
  json kinds = json::object();
  for (const auto& [name, kind] : csv_schema_for(ds).kinds) kinds[name] = to_string(kind);
  meta["schema"] = std::move(kinds);
  auto ids_of = [&](const std::vector<bool>& mask) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) ids.push_back(ds.ids[i]);
    }
    return ids;
  };
  meta["split"] = {{"train", ids_of(ds.masks.train)}, {"val", ids_of(ds.masks.val)}, {"test", ids_of(ds.masks.test)}};
  write_text(result.meta_path, meta.dump(1) + "\n");
  return result;
}

TrainSummary cmd_train(const ExperimentConfig& config) {
  const std::string hash = config.hash();
  const PopulationDataset dataset = build_dataset(config);
  const PreparedData data = PreparedData::from(dataset);
  const bool has_relevance = std::any_of(data.phenotype_info.begin(), data.phenotype_info.end(),
                                         [](const PhenotypeInfo& p) { return p.relevance == Relevance::relevant; });
  const fs::path root(config.output);
  fs::create_directories(root);

  TrainSummary summary;
  summary.runs.resize(config.seeds.size());
  run_parallel(config.seeds.size(), config.workers, [&](std::size_t idx) {
    SeedRun& run = summary.runs[idx];
    run.seed = config.seeds[idx];
    const fs::path dir = root / ("seed_" + std::to_string(run.seed));
    try {
      ExperimentConfig single = config;
      single.seeds = {run.seed};
      single.output = dir.string();
      write_text(dir / "config.json", single.to_json());

      const TrainConfig tc = train_config_for(config, run.seed);
      RunOutcome outcome = run_pipeline(data, tc);
      outcome.metrics.config_hash = hash;

      save_checkpoint(outcome.trained.model, hash, (dir / "checkpoint.json").string());
      write_text(dir / "history.csv", history_to_csv(outcome.metrics.history));
      write_text(dir / "metrics.json", metrics_to_json(outcome.metrics));
      write_text(dir / "timing.json", json{{"config_hash", hash}, {"wall_seconds", outcome.metrics.wall_seconds}}.dump() + "\n");

      const AttentionVector attention = current_attention(outcome.trained.model, data, tc);
      write_text(dir / "attention.csv", attention_to_csv(attention));
      write_text(dir / "attention.json", attention_to_json(attention));
      export_graph(outcome.final_graph, data.labels, (dir / "graph_learned.dot").string(), GraphFormat::dot);
      export_graph(outcome.final_graph, data.labels, (dir / "graph_learned.json").string(), GraphFormat::json);
      if (outcome.final_sample) {
        export_graph(*outcome.final_sample, data.labels, (dir / "graph_sampled.dot").string(), GraphFormat::dot);
        export_graph(*outcome.final_sample, data.labels, (dir / "graph_sampled.json").string(), GraphFormat::json);
      }
      if (has_relevance) run.attention_precision = precision_at_relevant(attention);
      run.metrics = std::move(outcome.metrics);
    } catch (const std::exception& e) {
      run.error = e.what();
      try {
        write_text(dir / "error.txt", run.error + "\n");
      } catch (const std::exception&) {
      }
    }
  });

  json aggregate;
  aggregate["config_hash"] = hash;
  aggregate["runs"] = json::array();
  std::map<std::string, std::vector<double>> columns;
  for (const auto& run : summary.runs) {
    json entry = {{"seed", run.seed}};
    if (run.metrics) {
      const auto& m = *run.metrics;
      entry["status"] = "ok";
      entry["mae"] = optional_number(m.mae);
      entry["pearson_r"] = optional_number(m.pearson_r);
      entry["accuracy"] = optional_number(m.accuracy);
      entry["macro_auc"] = optional_number(m.macro_auc);
      entry["macro_f1"] = optional_number(m.macro_f1);
      entry["homophily"] = optional_number(m.homophily);
      entry["sampled_homophily"] = optional_number(m.sampled_homophily);
      entry["attention_precision"] = optional_number(run.attention_precision);
      for (const char* key :
           {"mae", "pearson_r", "accuracy", "macro_auc", "macro_f1", "homophily", "sampled_homophily",
            "attention_precision"}) {
        if (!entry[key].is_null()) columns[key].push_back(entry[key].get<double>());
      }
    } else {
      entry["status"] = "failed";
      entry["error"] = run.error;
      summary.exit_code = 1;
    }
    aggregate["runs"].push_back(std::move(entry));
  }
  json stats = json::object();
  for (const auto& [key, values] : columns) stats[key] = summary_json(summarize(values));
  aggregate["summary"] = std::move(stats);
  summary.aggregate_path = (root / "aggregate.json").string();
  write_text(summary.aggregate_path, aggregate.dump(1) + "\n");
  return summary;
}

AblationSummary cmd_ablate(const ExperimentConfig& config) {
  struct Cell {
    std::string subset, metric, method;
  };
  const auto& ab = config.ablation;
  for (const auto& s : ab.subsets) {
    try {
      phenotype_subset_from_string(s);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.ablation.subsets: ") + e.what());
    }
  }
  for (const auto& m : ab.metrics) {
    if (m == "random") continue;
    try {
      distance_metric_from_string(m);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.ablation.metrics: ") + e.what());
    }
  }
  for (const auto& m : ab.methods) {
    if (m != "adaptive" && m != "static" && m != "random" && m != "linear") {
      throw ConfigError("config.ablation.methods: unknown method '" + m + "'");
    }
  }

  std::vector<Cell> cells;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  auto add = [&](Cell c) {
    if (seen.insert({c.subset, c.metric, c.method}).second) cells.push_back(std::move(c));
  };
  for (const auto& subset : ab.subsets) {
    for (const auto& metric : ab.metrics) {
      for (const auto& method : ab.methods) {
        if (method == "linear") {
          add({"-", "-", "linear"});
        } else if (method == "random" || metric == "random") {
          add({subset, "-", "random"});
        } else {
          add({subset, metric, method});
        }
      }
    }
  }
  if (cells.empty()) throw ConfigError("ablate: the ablation grid is empty");

  const std::string hash = config.hash();
  const PopulationDataset base = build_dataset(config);
  std::map<std::string, PreparedData> prepared;
  prepared.emplace("-", PreparedData::from(base));
  for (const auto& subset : ab.subsets) {
    prepared.emplace(subset, PreparedData::from(select_phenotypes(base, phenotype_subset_from_string(subset))));
  }

  AblationSummary summary;
  for (const auto& cell : cells) {
    for (auto seed : config.seeds) summary.rows.push_back({cell.subset, cell.metric, cell.method, seed, {}, {}});
  }
  run_parallel(summary.rows.size(), config.workers, [&](std::size_t idx) {
    AblationRow& row = summary.rows[idx];
    const PreparedData& data = prepared.at(row.subset);
    try {
      TrainConfig tc = train_config_for(config, row.seed);
      if (row.method == "linear") {
        row.metrics = linear_experiment(data, tc.task, tc.n_classes, config.baselines.ridge);
      } else if (row.method == "random") {
        tc.graph_mode = GraphMode::random;
        row.metrics = run_pipeline(data, tc).metrics;
      } else if (row.method == "static") {
        row.metrics = static_gcn_experiment(data, FeatureSource::phenotypes, config.baselines.static_k,
                                            distance_metric_from_string(row.metric), tc)
                          .metrics;
      } else {
        tc.graph_mode = GraphMode::adaptive;
        tc.metric = distance_metric_from_string(row.metric);
        row.metrics = run_pipeline(data, tc).metrics;
      }
      row.metrics->seed = row.seed;
      row.metrics->config_hash = hash;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });

  const fs::path root(config.output);
  std::string runs_csv = "subset,metric,method,seed,status,mae,pearson_r,accuracy,macro_auc,macro_f1,homophily\n";
  for (const auto& row : summary.rows) {
    runs_csv += row.subset + ',' + row.metric + ',' + row.method + ',' + std::to_string(row.seed) + ',';
    if (row.metrics) {
      const auto& m = *row.metrics;
      runs_csv += "ok," + fmt(m.mae) + ',' + fmt(m.pearson_r) + ',' + fmt(m.accuracy) + ',' + fmt(m.macro_auc) + ',' +
                  fmt(m.macro_f1) + ',' + fmt(m.homophily) + '\n';
    } else {
      runs_csv += "failed,,,,,,\n";
      summary.exit_code = 1;
    }
  }
  write_text(root / "ablation_runs.csv", runs_csv);

  struct TableRow {
    Cell cell;
    Summary primary, secondary;
    std::size_t rank = 0;
  };
  const bool regression = config.train.task == Task::regression;
  std::vector<TableRow> table;
  for (const auto& cell : cells) {
    std::vector<double> primary, secondary;
    for (const auto& row : summary.rows) {
      if (row.subset != cell.subset || row.metric != cell.metric || row.method != cell.method || !row.metrics) continue;
      primary.push_back(primary_metric(*row.metrics));
      const auto& second = regression ? row.metrics->pearson_r : row.metrics->macro_auc;
      if (second) secondary.push_back(*second);
    }
    table.push_back({cell, summarize(primary), summarize(secondary), 0});
  }
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double x = table[a].primary.mean, y = table[b].primary.mean;
    return regression ? x < y : x > y;
  });
  for (std::size_t r = 0; r < order.size(); ++r) table[order[r]].rank = r + 1;

  const std::string p = regression ? "mae" : "accuracy";
  const std::string s = regression ? "r" : "auc";
  std::string table_csv = "subset,metric,method,n," + p + "_mean," + p + "_std," + p + "_median," + s + "_mean," + s +
                          "_std,rank\n";
  json table_json = json::array();
  for (const auto& t : table) {
    table_csv += t.cell.subset + ',' + t.cell.metric + ',' + t.cell.method + ',' + std::to_string(t.primary.n) + ',' +
                 fmt(t.primary.mean) + ',' + fmt(t.primary.std) + ',' + fmt(t.primary.median) + ',' +
                 fmt(t.secondary.mean) + ',' + fmt(t.secondary.std) + ',' + std::to_string(t.rank) + '\n';
    table_json.push_back({{"subset", t.cell.subset},
                          {"metric", t.cell.metric},
                          {"method", t.cell.method},
                          {p, summary_json(t.primary)},
                          {s, summary_json(t.secondary)},
                          {"rank", t.rank}});
  }
  summary.table_path = (root / "ablation_table.csv").string();
  write_text(summary.table_path, table_csv);
  write_text(root / "ablation.json", json{{"config_hash", hash}, {"table", table_json}}.dump(1) + "\n");
  return summary;
}

ExportWhat export_what_from_string(const std::string& s) {
  if (s == "attention") return ExportWhat::attention;
  if (s == "graph-static") return ExportWhat::graph_static;
  if (s == "graph-learned") return ExportWhat::graph_learned;
  throw std::invalid_argument("unknown export target '" + s + "' (expected attention, graph-static or graph-learned)");
}

ExportResult cmd_export(const std::string& run_dir, ExportWhat what, const std::string& out_dir) {
  const fs::path dir(run_dir);
  const fs::path checkpoint = dir / "checkpoint.json";
  if (!fs::exists(checkpoint)) throw CheckpointError("export: no checkpoint in '" + run_dir + "'");
  const ExperimentConfig config = ExperimentConfig::load((dir / "config.json").string());
  std::string stored_hash;
  const PipelineModel model = load_checkpoint(checkpoint.string(), &stored_hash);
  if (stored_hash != config.hash()) {
    throw CheckpointError("export: checkpoint hash " + stored_hash + " does not match config hash " + config.hash());
  }
  const PreparedData data = PreparedData::from(build_dataset(config));
  const TrainConfig tc = train_config_for(config, config.seeds.front());
  const fs::path out(out_dir.empty() ? run_dir : out_dir);
  fs::create_directories(out);

  ExportResult result;
  if (what == ExportWhat::attention) {
    const AttentionVector attention = current_attention(model, data, tc);
    result.files = {(out / "attention.csv").string(), (out / "attention.json").string()};
    write_text(result.files[0], attention_to_csv(attention));
    write_text(result.files[1], attention_to_json(attention));
    return result;
  }

  const HomophilyMode mode =
      tc.task == Task::regression ? HomophilyMode::regression : HomophilyMode::classification;
  std::vector<double> homophily_labels = data.labels;
  if (tc.task == Task::classification) homophily_labels.assign(data.classes.begin(), data.classes.end());

  const std::string stem = what == ExportWhat::graph_static ? "graph_static" : "graph_learned";
  result.files = {(out / (stem + ".dot")).string(), (out / (stem + ".json")).string()};
  if (what == ExportWhat::graph_static) {
    const EdgeList edges =
        static_graph(data, FeatureSource::phenotypes, config.baselines.static_k, config.baselines.static_metric);
    export_graph(edges, data.labels, result.files[0], GraphFormat::dot);
    export_graph(edges, data.labels, result.files[1], GraphFormat::json);
    result.homophily = homophily_score(edges, homophily_labels, mode);
  } else if (tc.graph_mode == GraphMode::adaptive) {
    const EdgeList edges = attention_knn_graph(model, data, tc);
    export_graph(edges, data.labels, result.files[0], GraphFormat::dot);
    export_graph(edges, data.labels, result.files[1], GraphFormat::json);
    result.homophily = homophily_score(edges, homophily_labels, mode);

    Rng rng = Rng::stream(tc.seed, 3);
    SampledGraph sample;
    draw_graph(model, data, tc, {}, rng, &sample);
    result.files.push_back((out / "graph_sampled.dot").string());
    result.files.push_back((out / "graph_sampled.json").string());
    export_graph(sample, data.labels, result.files[2], GraphFormat::dot);
    export_graph(sample, data.labels, result.files[3], GraphFormat::json);
    result.sampled_homophily = homophily_score(sample.edges, homophily_labels, mode);
  } else {
    Rng rng = Rng::stream(tc.seed, 3);
    const EdgeList edges = draw_graph(model, data, tc, {}, rng);
    export_graph(edges, data.labels, result.files[0], GraphFormat::dot);
    export_graph(edges, data.labels, result.files[1], GraphFormat::json);
    result.homophily = homophily_score(edges, homophily_labels, mode);
  }
  return result;
}

}  // namespace popgraph
