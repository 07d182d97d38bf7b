#pragma once

#include <string>

#include "popgraph/trainer.hpp"

namespace popgraph {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointFormatVersion = 1;

/// JSON document holding every named parameter tensor with its shape.
std::string checkpoint_to_json(const PipelineModel& model, const std::string& config_hash);
PipelineModel checkpoint_from_json(const std::string& text, std::string* config_hash = nullptr);

void save_checkpoint(const PipelineModel& model, const std::string& config_hash, const std::string& path);
PipelineModel load_checkpoint(const std::string& path, std::string* config_hash = nullptr);

}  // namespace popgraph
