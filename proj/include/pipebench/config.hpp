#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "pipebench/pipelines.hpp"
#include "pipebench/scenegen.hpp"

namespace pipebench {

// Flat key=value config files ('#' comments). Unknown keys are a hard error.
// Defaults <- file <- command-line overrides, in that precedence.
struct ConfigBundle {
    DatasetConfig data;
    TrainConfig cnn, transformer, composite, baseline;
    SweepConfig sweep;

    nlohmann::json to_json() const;  // fully resolved echo
};

ConfigBundle default_config();

// overrides are "key=value" strings using the same keys as the file.
ConfigBundle resolve_config(const std::optional<std::string>& path,
                            const std::vector<std::string>& overrides);

// The echo written into run directories; parse it back to reconstruct models.
ConfigBundle config_from_json(const nlohmann::json& echo);

}  // namespace pipebench
