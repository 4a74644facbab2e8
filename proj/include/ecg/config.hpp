#pragma once

#include <filesystem>
#include <string>

#include "ecg/dsp.hpp"
#include "ecg/model.hpp"
#include "ecg/training.hpp"

namespace ecg {

// The merged run configuration. The text format is one "key = value"
// pair per line, '#' comments; field names follow the structs; absent
// fields keep their defaults.
struct RunConfig {
  nn::ModelSpec model;
  TrainConfig train;
  PreprocessConfig preprocess;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace ecg
