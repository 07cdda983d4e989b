#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "pipebench/evalreport.hpp"
#include "pipebench/pipelines.hpp"

namespace pipebench {

// One directory per run:
//   config        resolved key=value echo (reproduces the run exactly)
//   created       unix seconds, used for newest-wins report ordering
//   metrics.jsonl one JSON object per eval point
//   result.json   {regime, mean_err, std_err, n, decode_failures,
//                  wall_seconds, label_cost:{T,N,total}}
//   per_sample.csv, checkpoint files
void store_config_echo(const std::string& run_dir, const nlohmann::json& resolved);
void store_created(const std::string& run_dir);
void append_metric(const std::string& run_dir, const MetricPoint& m);
void store_result(const std::string& run_dir, const std::string& regime, const EvalResult& eval,
                  double wall_seconds, const LabelCost& cost);
void store_per_sample(const std::string& run_dir, const std::vector<double>& per_sample);

nlohmann::json load_result(const std::string& run_dir);
nlohmann::json load_config_echo(const std::string& run_dir);
std::optional<int64_t> load_created(const std::string& run_dir);

// Scan a directory of run directories (anything with result.json).
std::vector<std::string> list_runs(const std::string& runs_dir);

}  // namespace pipebench
