#include "pipebench/runstore.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "pipebench/common.hpp"

namespace fs = std::filesystem;

namespace pipebench {

namespace {
void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << content;
    if (!f) throw DataError("write failed: " + path);
}
}  // namespace

void store_config_echo(const std::string& run_dir, const nlohmann::json& resolved) {
    fs::create_directories(run_dir);
    write_text((fs::path(run_dir) / "config").string(), resolved.dump(2) + "\n");
}

void store_created(const std::string& run_dir) {
    fs::create_directories(run_dir);
    auto now = std::chrono::duration_cast<std::chrono::seconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
    write_text((fs::path(run_dir) / "created").string(), std::to_string(now) + "\n");
}

void append_metric(const std::string& run_dir, const MetricPoint& m) {
    std::ofstream f((fs::path(run_dir) / "metrics.jsonl").string(), std::ios::app | std::ios::binary);
    if (!f) throw DataError("cannot open metrics.jsonl in " + run_dir);
    nlohmann::json j = {{"step", m.step}, {"loss", m.loss}, {"eval_err", m.eval_err}};
    if (m.grad_probe >= 0.0) j["grad_probe"] = m.grad_probe;
    f << j.dump() << "\n";
}

void store_result(const std::string& run_dir, const std::string& regime, const EvalResult& eval,
                  double wall_seconds, const LabelCost& cost) {
    nlohmann::json j = {{"regime", regime},
                        {"mean_err", eval.mean_err},
                        {"std_err", eval.std_err},
                        {"n", eval.n},
                        {"decode_failures", eval.decode_failures},
                        {"wall_seconds", wall_seconds},
                        {"label_cost", cost.to_json()}};
    write_text((fs::path(run_dir) / "result.json").string(), j.dump(2) + "\n");
}

void store_per_sample(const std::string& run_dir, const std::vector<double>& per_sample) {
    std::ofstream f((fs::path(run_dir) / "per_sample.csv").string(), std::ios::binary);
    if (!f) throw DataError("cannot open per_sample.csv in " + run_dir);
    f << "index,error\n";
    f.precision(17);
    for (size_t i = 0; i < per_sample.size(); ++i) f << i << ',' << per_sample[i] << '\n';
}

nlohmann::json load_result(const std::string& run_dir) {
    std::ifstream f((fs::path(run_dir) / "result.json").string());
    if (!f) throw DataError("no result.json in " + run_dir);
    nlohmann::json j;
    f >> j;
    return j;
}

nlohmann::json load_config_echo(const std::string& run_dir) {
    std::ifstream f((fs::path(run_dir) / "config").string());
    if (!f) throw DataError("no config echo in " + run_dir);
    nlohmann::json j;
    f >> j;
    return j;
}

std::optional<int64_t> load_created(const std::string& run_dir) {
    std::ifstream f((fs::path(run_dir) / "created").string());
    if (!f) return std::nullopt;
    int64_t t = 0;
    f >> t;
    if (!f) return std::nullopt;
    return t;
}

std::vector<std::string> list_runs(const std::string& runs_dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(runs_dir)) throw DataError("not a directory: " + runs_dir);
    for (const auto& e : fs::directory_iterator(runs_dir)) {
        if (e.is_directory() && fs::exists(e.path() / "result.json")) out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace pipebench
