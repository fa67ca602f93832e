#pragma once

#include <string>

#include "pmt/model.hpp"
#include "pmt/train_config.hpp"

namespace pmt {

// Run configuration merged from documented defaults and a UTF-8 key=value
// file ('#' starts a comment). Unknown keys are a hard error; the effective
// merged configuration is echoed into the run directory.
struct RunConfig {
  PMTransConfig model;
  TrainConfig train;
};

RunConfig default_run_config();

// Applies one key=value assignment; throws ConfigError for unknown keys or
// unparsable values.
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Every key in a fixed order, one per line.
std::string serialize_run_config(const RunConfig& cfg);

std::string serialize_model_config(const PMTransConfig& cfg);
PMTransConfig parse_model_config(const std::string& text);

}  // namespace pmt
