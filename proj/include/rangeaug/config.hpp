#pragma once

// JSON configuration mirroring TrainConfig, with dotted-path overrides such as
// "curriculum.delta_end" = "5".

#include <string>
#include <utility>
#include <vector>

#include "rangeaug/schedule.hpp"
#include "rangeaug/trainer.hpp"

namespace rangeaug {

std::vector<Curriculum> default_sweep_candidates();

struct RunConfig {
  TrainConfig train;
  std::vector<Curriculum> sweep_candidates = default_sweep_candidates();
};

struct ConfigKey {
  std::string name;  // dotted path
  std::string help;
};

// Every key the config schema accepts, in document order.
const std::vector<ConfigKey>& config_keys();

// Unknown keys and type mismatches throw std::invalid_argument naming the key.
RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);

// `value` is parsed as JSON when possible, otherwise taken as a string.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses labels of the form produced by Curriculum::label(), e.g.
// "cosine_40_10", "linear_40_5", "fixed_20".
Curriculum parse_curriculum_label(const std::string& label);

}  // namespace rangeaug
