#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pipebench/config.hpp"
#include "pipebench/models.hpp"
#include "pipebench/pipelines.hpp"
#include "pipebench/runstore.hpp"

namespace fs = std::filesystem;
using namespace pipebench;

namespace {

struct GlobalOpts {
    std::optional<std::string> config;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
    bool serial = false;
    int threads_opt = 0;
};

void apply_globals(const GlobalOpts& g) {
    if (g.serial)
        set_threads(1);
    else if (g.threads_opt > 0)
        set_threads(g.threads_opt);
}

ConfigBundle resolve(const GlobalOpts& g) {
    ConfigBundle b = resolve_config(g.config, g.overrides);
    if (g.seed) {
        b.data.seed = *g.seed;
        b.cnn.seed = *g.seed;
        b.transformer.seed = *g.seed;
        b.composite.seed = *g.seed;
        b.baseline.seed = *g.seed;
    }
    return b;
}

void add_common(CLI::App* cmd, GlobalOpts& g) {
    cmd->add_option("--config", g.config, "config file (key = value lines)");
    cmd->add_option("--set", g.overrides, "override, key=value (repeatable)");
    cmd->add_option("--seed", g.seed, "seed override applied to all stages");
    cmd->add_flag("--serial", g.serial, "single-threaded deterministic mode");
    cmd->add_option("--threads", g.threads_opt, "worker cap (default: PIPEBENCH_THREADS or hardware)");
}

int report_command(const std::string& runs_dir, const std::string& baseline_csv,
                   const std::string& out_dir) {
    ComparisonTable table;
    if (!baseline_csv.empty()) {
        ComparisonTable ref = read_comparison_csv(baseline_csv);
        for (auto& r : ref.rows) {
            r.source = "reference";
            table.rows.push_back(r);
        }
    }
    // newest-wins ordering: sort runs by created stamp, then name
    std::vector<std::string> runs = list_runs(runs_dir);
    std::stable_sort(runs.begin(), runs.end(), [](const std::string& a, const std::string& b) {
        auto ca = load_created(a), cb = load_created(b);
        int64_t ta = ca.value_or(0), tb = cb.value_or(0);
        if (ta != tb) return ta < tb;
        return a < b;
    });
    for (const auto& dir : runs) {
        nlohmann::json r = load_result(dir);
        std::string regime = r.at("regime").get<std::string>();
        if (regime != "chained" && regime != "composite" && regime != "baseline") continue;
        ComparisonRow row;
        row.regime = regime;
        row.mean_err = r.at("mean_err").get<double>();
        row.std_err = r.at("std_err").get<double>();
        row.n = r.at("n").get<int64_t>();
        row.decode_failures = r.at("decode_failures").get<int64_t>();
        row.wall_seconds = r.at("wall_seconds").get<double>();
        int tasks = r.at("label_cost").at("T").get<int>();
        row.label_cost_expr = tasks == 2 ? "2N" : "N";
        row.label_cost_total = r.at("label_cost").at("total").get<int64_t>();
        row.source = "run";
        table.rows.push_back(row);
    }
    if (table.rows.empty()) throw DataError("no comparable runs found in " + runs_dir);
    for (const auto& w : build_report(table, out_dir)) std::cerr << "warning: " << w << "\n";
    std::cout << "report written to " << out_dir << "\n";
    return 0;
}

int grad_check_command() {
    // dense layer alone
    {
        Rng rng(11);
        Dense<double> dense;
        dense.init(12, 7, "dense", rng);
        Tensor<double> x({5, 12});
        for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
        Tensor<double> target({5, 7});
        for (auto& v : target.v) v = rng.uniform(0.0, 1.0);
        ParamRefs<double> ps;
        dense.params(ps);
        Tensor<double> y, gy, gx;
        auto loss_fn = [&](bool with_grad) {
            dense.forward(x, y);
            double loss = 0;
            for (size_t i = 0; i < y.numel(); ++i) loss += (y.v[i] - target.v[i]) * (y.v[i] - target.v[i]);
            loss /= static_cast<double>(y.numel());
            if (with_grad) {
                gy.resize(y.shape);
                for (size_t i = 0; i < y.numel(); ++i)
                    gy.v[i] = 2.0 * (y.v[i] - target.v[i]) / static_cast<double>(y.numel());
                dense.backward(gy, gx);
            }
            return loss;
        };
        double err = grad_check(ps, loss_fn, 2000, 1e-3, 5);
        std::cout << "dense max relative error: " << err << " (threshold 1e-4)\n";
        if (err >= 1e-4) return 1;
    }
    // 4-stage CNN on 16x16
    {
        CnnSpec spec;
        spec.in_h = 16;
        spec.in_w = 16;
        spec.outputs = 4;
        Cnn<double> cnn(spec, 3);
        Rng rng(12);
        Tensor<double> x({2, 1, 16, 16});
        for (auto& v : x.v) v = rng.uniform(0.0, 1.0);
        Tensor<double> target({2, 4});
        for (auto& v : target.v) v = rng.uniform(0.1, 0.9);
        Tensor<double> gy;
        auto loss_fn = [&](bool with_grad) {
            const Tensor<double>& y = cnn.forward(x);
            double loss = 0;
            for (size_t i = 0; i < y.numel(); ++i) loss += (y.v[i] - target.v[i]) * (y.v[i] - target.v[i]);
            loss /= static_cast<double>(y.numel());
            if (with_grad) {
                gy.resize(y.shape);
                for (size_t i = 0; i < y.numel(); ++i)
                    gy.v[i] = 2.0 * (y.v[i] - target.v[i]) / static_cast<double>(y.numel());
                cnn.backward(gy);
            }
            return loss;
        };
        double err = grad_check(cnn.params(), loss_fn, 1500, 1e-3, 6);
        std::cout << "cnn max relative error: " << err << " (threshold 1e-3)\n";
        if (err >= 1e-3) return 1;
    }
    // 2-layer transformer on a length-8 sequence
    {
        TransformerSpec spec;
        spec.layers = 2;
        spec.d_model = 32;
        spec.heads = 4;
        spec.d_ff = 64;
        spec.max_len = 8;
        Transformer<double> tf(spec, 4);
        std::vector<int> ids = {5, 1, 7, 10, 8, 13, 5, 1};
        std::vector<int> next = {1, 7, 10, 8, 13, 5, 1, 0};
        std::vector<double> w = {0, 0, 0, 0, 0, 1, 1, 1};
        SoftmaxCrossEntropy<double> ce;
        Tensor<double> glogits, grows;
        auto loss_fn = [&](bool with_grad) {
            const Tensor<double>& logits = tf.forward_tokens(ids, 1, 8);
            double loss = ce.forward(logits, next, w);
            if (with_grad) {
                ce.backward(glogits);
                tf.backward(glogits, grows, true);
            }
            return loss;
        };
        double err = grad_check(tf.params(), loss_fn, 1500, 1e-3, 7);
        std::cout << "transformer max relative error: " << err << " (threshold 1e-3)\n";
        if (err >= 1e-3) return 1;
    }
    std::cout << "gradient checks passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic-map pipeline benchmark"};
    app.require_subcommand(1);

    GlobalOpts g;
    std::string out_dir, data_dir, coord_dir, run_dir, split = "test", runs_dir, baseline_csv;

    auto* c_generate = app.add_subcommand("generate", "synthesize a dataset");
    add_common(c_generate, g);
    c_generate->add_option("--out", out_dir, "dataset output directory")->required();

    auto* c_cnn = app.add_subcommand("train-cnn", "train the coordinate-regression stage (6 outputs)");
    add_common(c_cnn, g);
    c_cnn->add_option("--data", data_dir, "dataset directory")->required();
    c_cnn->add_option("--out", run_dir, "run directory")->required();

    auto* c_tf = app.add_subcommand("train-transformer", "train the symbolic stage on coordinates");
    add_common(c_tf, g);
    c_tf->add_option("--data", data_dir, "dataset directory")->required();
    c_tf->add_option("--out", run_dir, "run directory")->required();

    auto* c_chained = app.add_subcommand("train-chained", "train both stages independently");
    add_common(c_chained, g);
    c_chained->add_option("--data", data_dir, "image dataset directory")->required();
    c_chained->add_option("--coords", coord_dir, "coordinate dataset directory (default: --data)");
    c_chained->add_option("--out", run_dir, "run directory")->required();

    auto* c_composite = app.add_subcommand("train-composite", "train the end-to-end model");
    add_common(c_composite, g);
    c_composite->add_option("--data", data_dir, "dataset directory")->required();
    c_composite->add_option("--out", run_dir, "run directory")->required();

    auto* c_baseline = app.add_subcommand("train-baseline", "train the 2-output CNN baseline");
    add_common(c_baseline, g);
    c_baseline->add_option("--data", data_dir, "dataset directory")->required();
    c_baseline->add_option("--out", run_dir, "run directory")->required();

    auto* c_eval = app.add_subcommand("eval", "evaluate a run on a dataset split");
    add_common(c_eval, g);
    c_eval->add_option("--run", run_dir, "run directory")->required();
    c_eval->add_option("--data", data_dir, "dataset directory")->required();
    c_eval->add_option("--split", split, "train | eval | test (default test)");

    auto* c_sweep = app.add_subcommand("sweep", "hyperparameter grid search");
    add_common(c_sweep, g);
    c_sweep->add_option("--data", data_dir, "dataset directory")->required();
    c_sweep->add_option("--out", out_dir, "sweep output directory")->required();

    auto* c_report = app.add_subcommand("report", "aggregate runs into the comparison table");
    add_common(c_report, g);
    c_report->add_option("--runs", runs_dir, "directory containing run directories")->required();
    c_report->add_option("--baseline", baseline_csv, "reference rows (comparison.csv format)");
    c_report->add_option("--out", out_dir, "report output directory")->required();

    auto* c_check = app.add_subcommand("grad-check", "finite-difference gradient checks");
    add_common(c_check, g);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfigError;
    }

    try {
        apply_globals(g);
        if (*c_generate) {
            ConfigBundle b = resolve(g);
            b.data.validate();
            generate_dataset(b.data, out_dir);
            std::cout << "dataset written to " << out_dir << " (train " << b.data.train_count()
                      << ", eval " << b.data.eval_count << ", test " << b.data.test_count << ")\n";
        } else if (*c_cnn) {
            ConfigBundle b = resolve(g);
            RunRecord rec = train_cnn_stage(b.cnn, data_dir, run_dir);
            std::cout << "final eval error " << rec.final_eval.mean_err << " after "
                      << rec.wall_seconds << " s\n";
        } else if (*c_tf) {
            ConfigBundle b = resolve(g);
            RunRecord rec = train_transformer_stage(b.transformer, data_dir, run_dir);
            std::cout << "final eval error " << rec.final_eval.mean_err << " after "
                      << rec.wall_seconds << " s\n";
        } else if (*c_chained) {
            ConfigBundle b = resolve(g);
            if (coord_dir.empty()) coord_dir = data_dir;
            RunRecord rec = train_chained(b.cnn, b.transformer, data_dir, coord_dir, run_dir);
            std::cout << "final eval error " << rec.final_eval.mean_err << " after "
                      << rec.wall_seconds << " s\n";
        } else if (*c_composite) {
            ConfigBundle b = resolve(g);
            RunRecord rec = train_composite(b.composite, data_dir, run_dir);
            std::cout << "final eval error " << rec.final_eval.mean_err << " after "
                      << rec.wall_seconds << " s\n";
        } else if (*c_baseline) {
            ConfigBundle b = resolve(g);
            RunRecord rec = train_baseline_cnn(b.baseline, data_dir, run_dir);
            std::cout << "final eval error " << rec.final_eval.mean_err << " after "
                      << rec.wall_seconds << " s\n";
        } else if (*c_eval) {
            EvalResult res = eval_run(run_dir, data_dir, split, true);
            std::cout << "mean_err " << res.mean_err << " std_err " << res.std_err << " n " << res.n
                      << " decode_failures " << res.decode_failures << "\n";
        } else if (*c_sweep) {
            ConfigBundle b = resolve(g);
            const TrainConfig& base = b.sweep.regime == "cnn"         ? b.cnn
                                      : b.sweep.regime == "baseline"  ? b.baseline
                                      : b.sweep.regime == "composite" ? b.composite
                                                                      : b.transformer;
            auto entries = sweep(b.sweep, base, data_dir, out_dir);
            for (const auto& e : entries) {
                std::cout << fs::path(e.run_dir).filename().string() << " lr=" << e.config.learning_rate
                          << " D=" << e.config.decimals << " seed=" << e.config.seed << " -> ";
                if (e.failed)
                    std::cout << "failed: " << e.error << "\n";
                else
                    std::cout << e.eval_err << "\n";
            }
        } else if (*c_report) {
            return report_command(runs_dir, baseline_csv, out_dir);
        } else if (*c_check) {
            return grad_check_command() == 0 ? kExitOk : kExitInternal;
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const DivergenceError& e) {
        std::cerr << "error: divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const DecodeError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitDataError;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitDataError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return kExitInternal;
    }
}
