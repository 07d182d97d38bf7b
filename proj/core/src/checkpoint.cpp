#include "popgraph/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <utility>

#include "json.hpp"

namespace popgraph {
namespace {

using nlohmann::json;

std::vector<std::pair<const char*, Tensor>> named_tensors(const PipelineModel& m) {
  return {{"attention.w1", m.attention.w1}, {"attention.b1", m.attention.b1}, {"attention.w2", m.attention.w2},
          {"attention.b2", m.attention.b2}, {"gcn.w1", m.gcn.w1},             {"gcn.w2", m.gcn.w2},
          {"gcn.b2", m.gcn.b2},             {"gcn.w3", m.gcn.w3},             {"gcn.b3", m.gcn.b3},
          {"log_temperature", m.log_temperature}};
}

Tensor read_tensor(const json& tensors, const char* name) {
  if (!tensors.contains(name)) throw CheckpointError(std::string("checkpoint: missing tensor '") + name + "'");
  const json& t = tensors.at(name);
  const auto rows = t.at("shape").at(0).get<std::size_t>();
  const auto cols = t.at("shape").at(1).get<std::size_t>();
  auto values = t.at("values").get<std::vector<double>>();
  if (values.size() != rows * cols) {
    throw CheckpointError(std::string("checkpoint: tensor '") + name + "' has " + std::to_string(values.size()) +
                          " values for shape [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  return Tensor::parameter(Matrix(rows, cols, std::move(values)));
}

}  // namespace

std::string checkpoint_to_json(const PipelineModel& model, const std::string& config_hash) {
  json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["config_hash"] = config_hash;
  json tensors = json::object();
  for (const auto& [name, t] : named_tensors(model)) {
    const auto v = t.value().values();
    tensors[name] = {{"shape", {t.rows(), t.cols()}}, {"values", std::vector<double>(v.begin(), v.end())}};
  }
  doc["tensors"] = std::move(tensors);
  return doc.dump() + "\n";
}

PipelineModel checkpoint_from_json(const std::string& text, std::string* config_hash) {
  json doc;
  try {
    doc = json::parse(text);
    if (doc.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw CheckpointError("checkpoint: unsupported format version " + doc.at("format_version").dump());
    }
    const json& t = doc.at("tensors");
    PipelineModel m;
    m.attention = {read_tensor(t, "attention.w1"), read_tensor(t, "attention.b1"), read_tensor(t, "attention.w2"),
                   read_tensor(t, "attention.b2")};
    m.gcn = {read_tensor(t, "gcn.w1"), read_tensor(t, "gcn.w2"), read_tensor(t, "gcn.b2"), read_tensor(t, "gcn.w3"),
             read_tensor(t, "gcn.b3")};
    m.log_temperature = read_tensor(t, "log_temperature");
    if (config_hash) *config_hash = doc.at("config_hash").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void save_checkpoint(const PipelineModel& model, const std::string& config_hash, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_json(model, config_hash);
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

PipelineModel load_checkpoint(const std::string& path, std::string* config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str(), config_hash);
}

}  // namespace popgraph
