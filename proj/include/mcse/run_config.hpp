#pragma once

#include <string>
#include <vector>

#include "mcse/model.hpp"
#include "mcse/scenesim.hpp"
#include "mcse/train.hpp"

namespace mcse::config {

/// Toolkit-wide JSON configuration with sections {stft, model, train,
/// simulate}. Every field is optional and defaults to the module default;
/// unknown keys are rejected.
struct RunConfig {
  model::ModelConfig model;  // carries the stft section
  model::TrainOptions train;
  scenesim::SceneTemplate simulate;
  std::vector<std::string> source_wavs;  // simulate.source_wavs
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Checkpoint sidecar: the {stft, model} sections of the run config.
std::string model_config_to_json(const model::ModelConfig& config);
model::ModelConfig model_config_from_json(const std::string& json_text);
model::ModelConfig load_model_sidecar(const std::string& path);

std::string variant_name(model::Variant v);
std::string bottleneck_name(model::BottleneckKind b);
model::Variant variant_from_name(const std::string& name);
model::BottleneckKind bottleneck_from_name(const std::string& name);

}  // namespace mcse::config
