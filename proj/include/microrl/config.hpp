#pragma once

#include <string>
#include <string_view>

#include "microrl/trainer.hpp"

namespace microrl {

// Applies one `key = value` setting; throws std::invalid_argument naming the
// key when it is unknown or the value does not parse.
void apply_config_setting(TrainConfig& cfg, std::string_view key, std::string_view value);

// Parses a config file of `key = value` lines ('#' comments, blank lines
// allowed) on top of the defaults. Throws std::runtime_error with a path:line
// diagnostic on bad lines.
TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_text(std::string_view text, std::string_view origin = "<config>");

// Canonical `key = value` rendering of every setting, suitable for re-parsing.
std::string dump_config(const TrainConfig& cfg);

}  // namespace microrl
