#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "popgraph/checkpoint.hpp"
#include "popgraph/experiment.hpp"

using namespace popgraph;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("popgraph_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

ExperimentConfig quick_config(const fs::path& out) {
  ExperimentConfig c;
  auto& s = c.dataset.synthetic;
  s.subjects = 60;
  s.non_imaging = 4;
  s.imaging = 4;
  s.features = 6;
  s.relevant_non_imaging = 2;
  s.relevant_imaging = 2;
  c.train.epochs = 4;
  c.train.patience = 0;
  c.train.k = 3;
  c.train.gcn = {16, 8};
  c.train.inference_samples = 2;
  c.output = out.string();
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(POPGRAPH_CLI_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config survives a round trip through its file format") {
  ExperimentConfig c = quick_config("/tmp/x");
  c.train.metric = DistanceMetric::hyperbolic;
  c.train.graph_loss_form = GraphLossForm::kernel;
  c.train.frozen_attention = std::vector<double>{0.1, 0.2};
  c.dataset.schema.kinds["q1"] = ColumnKind::non_imaging;
  c.seeds = {3, 1, 4};
  c.ablation.metrics = {"cosine"};
  const std::string text = c.to_json();
  const auto back = ExperimentConfig::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.hash() == c.hash());
  CHECK(back.seeds == c.seeds);
  CHECK(back.train.metric == DistanceMetric::hyperbolic);
  CHECK(*back.train.frozen_attention == *c.train.frozen_attention);

  ExperimentConfig random = c;
  random.random_metric = true;
  CHECK(ExperimentConfig::from_json(random.to_json()).random_metric);
}

TEST_CASE("config hash ignores key order and run bookkeeping") {
  const auto a = ExperimentConfig::from_json(
      R"({"task": "regression", "train": {"k": 4, "epochs": 7}, "dataset": {"subjects": 90, "seed": 2}})");
  const auto b = ExperimentConfig::from_json(
      R"({"dataset": {"seed": 2, "subjects": 90}, "train": {"epochs": 7, "k": 4}, "task": "regression"})");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);

  ExperimentConfig moved = a;
  moved.output = "elsewhere";
  moved.seeds = {5, 6};
  moved.workers = 3;
  CHECK(moved.hash() == a.hash());
  ExperimentConfig changed = a;
  changed.train.k = 5;
  CHECK(changed.hash() != a.hash());
}

TEST_CASE("config errors name the offending key") {
  try {
    ExperimentConfig::from_json(R"({"train": {"epoch": 3}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("config.train") != std::string::npos);
  }
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"colour": 1})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"train": {"k": "five"}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"train": {"graph_loss": "other"}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"seeds": []})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("generate writes the dataset and its metadata") {
  const auto dir = scratch("generate");
  auto c = quick_config(dir);
  const auto r = cmd_generate(c, (dir / "a").string());
  const std::string csv = slurp(r.csv_path);
  CHECK(line_count(csv) == 61);  // header + N rows
  const auto meta = json::parse(slurp(r.meta_path));
  CHECK(meta["config_hash"] == c.hash());
  CHECK(meta["relevant_non_imaging"] == 2);
  CHECK(meta["relevant_imaging"] == 2);
  std::size_t flagged = 0;
  for (const auto& p : meta["phenotypes"]) flagged += p["relevant"].get<bool>() ? 1 : 0;
  CHECK(flagged == 4);
  CHECK(meta["split"]["train"].size() + meta["split"]["val"].size() + meta["split"]["test"].size() == 60);

  c.dataset.seed = 1;
  const auto other = cmd_generate(c, (dir / "b").string());
  CHECK(slurp(other.csv_path) != csv);

  // The written file loads back through the CSV path.
  ExperimentConfig from_csv = quick_config(dir);
  from_csv.dataset.source = "csv";
  from_csv.dataset.csv_path = r.csv_path;
  for (const auto& [name, kind] : meta["schema"].items()) {
    from_csv.dataset.schema.kinds[name] = column_kind_from_string(kind.get<std::string>());
  }
  CHECK(build_dataset(from_csv).num_subjects() == 60);
  fs::remove_all(dir);
}

TEST_CASE("train with one seed: aggregate equals the run") {
  const auto dir = scratch("train_one");
  const auto c = quick_config(dir);
  const auto s = cmd_train(c);
  CHECK(s.exit_code == 0);
  REQUIRE(s.runs.size() == 1);
  REQUIRE(s.runs[0].metrics.has_value());
  const auto agg = json::parse(slurp(s.aggregate_path));
  CHECK(agg["config_hash"] == c.hash());
  CHECK(agg["summary"]["mae"]["mean"].get<double>() == *s.runs[0].metrics->mae);
  CHECK(agg["summary"]["mae"]["std"].get<double>() == 0.0);

  const fs::path run = dir / "seed_0";
  for (const char* f : {"checkpoint.json", "history.csv", "metrics.json", "attention.csv", "attention.json",
                        "graph_learned.dot", "graph_learned.json", "graph_sampled.dot", "graph_sampled.json",
                        "config.json", "timing.json"}) {
    CHECK_MESSAGE(fs::exists(run / f), f);
  }
  const auto metrics = json::parse(slurp(run / "metrics.json"));
  CHECK(metrics["config_hash"] == c.hash());
  CHECK(line_count(slurp(run / "history.csv")) == 1 + c.train.epochs);
  std::string stored;
  load_checkpoint((run / "checkpoint.json").string(), &stored);
  CHECK(stored == c.hash());

  // Same config and seed: byte-identical metrics.
  const std::string first = slurp(run / "metrics.json");
  cmd_train(c);
  CHECK(slurp(run / "metrics.json") == first);
  fs::remove_all(dir);
}

TEST_CASE("train with several seeds aggregates every run") {
  const auto dir = scratch("train_many");
  auto c = quick_config(dir);
  c.seeds = {0, 1, 2};
  const auto s = cmd_train(c);
  CHECK(s.exit_code == 0);
  const auto agg = json::parse(slurp(s.aggregate_path));
  REQUIRE(agg["runs"].size() == 3);
  double mean = 0.0;
  for (const auto& r : s.runs) mean += *r.metrics->mae / 3.0;
  CHECK(agg["summary"]["mae"]["mean"].get<double>() == doctest::Approx(mean));
  CHECK(agg["summary"]["mae"]["n"] == 3);
  for (std::uint64_t seed : {0, 1, 2}) CHECK(fs::exists(dir / ("seed_" + std::to_string(seed)) / "metrics.json"));
  fs::remove_all(dir);
}

TEST_CASE("failing runs keep partial results and set the exit status") {
  const auto dir = scratch("train_fail");
  auto c = quick_config(dir);
  c.train.k = 200;  // above the node count
  const auto s = cmd_train(c);
  CHECK(s.exit_code != 0);
  CHECK_FALSE(s.runs[0].metrics.has_value());
  CHECK(fs::exists(dir / "seed_0" / "error.txt"));
  const auto agg = json::parse(slurp(s.aggregate_path));
  CHECK(agg["runs"][0]["status"] == "failed");
  fs::remove_all(dir);
}

TEST_CASE("export attention and graphs from a run") {
  const auto dir = scratch("export");
  const auto c = quick_config(dir);
  cmd_train(c);
  const std::string run = (dir / "seed_0").string();
  const auto out = dir / "out";

  const auto att = cmd_export(run, ExportWhat::attention, out.string());
  REQUIRE(att.files.size() == 2);
  CHECK(line_count(slurp(att.files[0])) == 1 + 8);  // header + Q + S

  const auto stat = cmd_export(run, ExportWhat::graph_static, out.string());
  CHECK(stat.homophily.has_value());
  const std::string dot = slurp(stat.files[0]);
  CHECK(dot.rfind("digraph ", 0) == 0);
  CHECK(dot.find("fillcolor=\"#") != std::string::npos);
  const std::regex edge(R"(  \d+ -> \d+;)");
  const auto edges = std::distance(std::sregex_iterator(dot.begin(), dot.end(), edge), std::sregex_iterator());
  CHECK(static_cast<std::size_t>(edges) == 60 * c.baselines.static_k);

  const auto learned = cmd_export(run, ExportWhat::graph_learned, out.string());
  CHECK(learned.homophily.has_value());
  CHECK(learned.sampled_homophily.has_value());
  CHECK(learned.files.size() == 4);
  for (const auto& f : learned.files) CHECK(fs::exists(f));

  CHECK_THROWS_AS(cmd_export((dir / "missing").string(), ExportWhat::attention, ""), CheckpointError);
  CHECK_THROWS(export_what_from_string("weights"));
  fs::remove_all(dir);
}

TEST_CASE("ablation writes one row per cell and seed plus a ranked table") {
  const auto dir = scratch("ablate");
  auto c = quick_config(dir);
  c.ablation.subsets = {"both", "imaging"};
  c.ablation.metrics = {"euclidean", "random"};
  c.ablation.methods = {"adaptive", "linear"};
  c.seeds = {0, 1};
  const auto s = cmd_ablate(c);
  CHECK(s.exit_code == 0);
  // adaptive: 2 subsets x 2 metrics; linear ignores subsets and metrics.
  const std::string table = slurp(s.table_path);
  CHECK(line_count(table) == 1 + 4 + 1);
  CHECK(table.rfind("subset,metric,method,n,mae_mean", 0) == 0);
  CHECK(line_count(slurp(dir / "ablation_runs.csv")) == 1 + 5 * 2);
  const auto doc = json::parse(slurp(dir / "ablation.json"));
  std::set<std::size_t> ranks;
  for (const auto& row : doc["table"]) ranks.insert(row["rank"].get<std::size_t>());
  CHECK(ranks == std::set<std::size_t>{1, 2, 3, 4, 5});

  c.ablation.methods = {};
  CHECK_THROWS_AS(cmd_ablate(c), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("the default ablation grid is runnable") {
  const auto dir = scratch("ablate_default");
  auto c = quick_config(dir);
  c.train.epochs = 1;
  c.train.inference_samples = 1;
  c.ablation = ExperimentConfig{}.ablation;
  const auto s = cmd_ablate(c);
  CHECK(s.exit_code == 0);
  CHECK(line_count(slurp(s.table_path)) > 1);
  fs::remove_all(dir);
}

TEST_CASE("summaries") {
  const auto s = summarize({1, 2, 3, 10});
  CHECK(s.n == 4);
  CHECK(s.mean == 4.0);
  CHECK(s.median == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(50.0 / 3.0)));
  CHECK(summarize({5}).std == 0.0);
}

TEST_CASE("command-line exit codes") {
  const auto dir = scratch("binary");
  auto c = quick_config(dir / "runs");
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << c.to_json();
  CHECK(run_cli("generate --config " + cfg.string() + " --out " + (dir / "data").string()) == 0);
  CHECK(fs::exists(dir / "data" / "dataset.csv"));
  CHECK(run_cli("train --config " + cfg.string() + " --seeds 0") == 0);
  CHECK(run_cli("export " + (dir / "runs" / "seed_0").string() + " --what graph-static") == 0);

  c.train.k = 500;
  const fs::path bad = dir / "bad.json";
  std::ofstream(bad) << c.to_json();
  CHECK(run_cli("train --config " + bad.string()) == 1);

  const fs::path broken = dir / "broken.json";
  std::ofstream(broken) << R"({"train": {"nope": 1}})";
  CHECK(run_cli("train --config " + broken.string()) == 2);
  CHECK(run_cli("export " + (dir / "nowhere").string()) == 2);
  CHECK(run_cli("") != 0);
  CHECK(run_cli("train --seeds x") != 0);
  fs::remove_all(dir);
}

}  // TEST_SUITE
