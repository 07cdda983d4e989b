#pragma once

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pipebench/composite.hpp"
#include "pipebench/evalreport.hpp"
#include "pipebench/models.hpp"

namespace pipebench {

struct TrainConfig {
    std::string regime;  // cnn | transformer | chained | composite | baseline
    double learning_rate = 0.0;
    int batch_size = 64;
    int64_t steps = 0;
    int epochs = 0;  // when > 0 overrides steps
    uint64_t seed = 1;
    int64_t train_samples = 0;  // 0 = whole split
    int64_t eval_samples = 0;
    int decimals = 3;
    int cnn_outputs = 6;
    int64_t eval_every = 500;
    bool noise_augment = false;  // context jitter of +/- 0.5 * 10^-D

    void validate() const;
};

struct LabelCost {
    int tasks = 1;      // T
    int64_t unit = 0;   // N
    int64_t total = 0;  // T*N for chained, N otherwise

    nlohmann::json to_json() const { return {{"T", tasks}, {"N", unit}, {"total", total}}; }
};

struct MetricPoint {
    int64_t step = 0;
    double loss = 0.0;
    double eval_err = 0.0;
    double grad_probe = -1.0;  // >= 0 only for the end-to-end regime
};

struct RunRecord {
    std::string run_id;
    std::string regime;
    nlohmann::json resolved_config;
    nlohmann::json model_spec;
    std::vector<MetricPoint> history;
    EvalResult final_eval;
    double wall_seconds = 0.0;
    LabelCost label_cost;
    uint64_t seed = 0;
    std::vector<std::string> artifacts;
};

// Training entry points. `data_dir` holds train.csv/eval.csv/test.csv from
// generate_dataset. Artifacts land in run_dir; pass "" to skip persistence.
RunRecord train_cnn_stage(const TrainConfig& cfg, const std::string& data_dir,
                          const std::string& run_dir);
RunRecord train_transformer_stage(const TrainConfig& cfg, const std::string& data_dir,
                                  const std::string& run_dir);
// Two independent stages; coord_data_dir may equal image_data_dir.
RunRecord train_chained(const TrainConfig& cnn_cfg, const TrainConfig& transformer_cfg,
                        const std::string& image_data_dir, const std::string& coord_data_dir,
                        const std::string& run_dir);
RunRecord train_composite(const TrainConfig& cfg, const std::string& data_dir,
                          const std::string& run_dir);
RunRecord train_baseline_cnn(const TrainConfig& cfg, const std::string& data_dir,
                             const std::string& run_dir);

// Inference over a manifest split using the checkpoints stored in run_dir.
// Writes result.json/per_sample.csv back into run_dir when write_back.
EvalResult eval_run(const std::string& run_dir, const std::string& data_dir,
                    const std::string& split, bool write_back);

// Chained inference with an arbitrary value source (real CNN or an oracle
// feeding ground-truth coordinates straight into the connector).
using ValueSource = std::function<std::vector<double>(const SampleRecord&, int64_t row)>;
EvalResult eval_chained_with_values(Transformer<float>& transformer, int decimals,
                                    const ValueSource& values, const Manifest& split);

struct SweepConfig {
    std::string regime = "transformer";
    std::vector<double> learning_rates;
    std::vector<int> decimals;
    std::vector<uint64_t> seeds;
    int max_runs = 16;
    uint64_t subsample_seed = 7;
};

// Cartesian product of the grid (random subsample above max_runs), sorted by
// final eval error. Individual failures are recorded, not fatal.
struct SweepEntry {
    std::string run_dir;
    TrainConfig config;
    bool failed = false;
    std::string error;
    double eval_err = 0.0;
};
std::vector<SweepEntry> sweep(const SweepConfig& grid, const TrainConfig& base,
                              const std::string& data_dir, const std::string& out_dir);

}  // namespace pipebench
