#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pipebench/scenegen.hpp"

namespace pipebench {

struct EvalResult {
    double mean_err = 0.0;
    double std_err = 0.0;
    int64_t n = 0;
    int64_t decode_failures = 0;
    std::vector<double> per_sample;  // kept for recomputation checks
};

// Euclidean distance between prediction and truth; [0, sqrt(2)] on the unit
// square. Decode failures are scored at the maximum.
inline constexpr double kMaxError = 1.4142135623730951;

double point_error(const Point& pred, const Point& truth);

// Inference callback: nullopt marks a decode failure for that row.
using InferenceFn = std::function<std::optional<Point>(const SampleRecord&, int64_t row)>;

EvalResult evaluate(const InferenceFn& model, const Manifest& test_set);

// One comparison row per training regime.
struct ComparisonRow {
    std::string regime;
    double mean_err = 0.0;
    double std_err = 0.0;
    int64_t n = 0;
    int64_t decode_failures = 0;
    double wall_seconds = 0.0;
    std::string label_cost_expr;      // "2N" or "N"
    int64_t label_cost_total = -1;    // -1 when unknown (reference rows)
    std::string source;               // "run" or "reference"
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
};

// comparison.csv round-trips through these two.
void write_comparison_csv(const ComparisonTable& table, const std::string& path);
ComparisonTable read_comparison_csv(const std::string& path);

// Writes comparison.csv, comparison.svg (error-bar plot with the data table
// embedded) and report.md under out_dir. Duplicate regimes resolve to the
// newest run; a warning line is returned for each one dropped.
std::vector<std::string> build_report(const ComparisonTable& table, const std::string& out_dir);

}  // namespace pipebench
