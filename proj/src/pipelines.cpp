#include "pipebench/pipelines.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pipebench/config.hpp"
#include "pipebench/runstore.hpp"

namespace fs = std::filesystem;

namespace pipebench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ------------------------------------------------------------- data access

struct LoadedSplit {
    Manifest manifest;
    std::vector<uint8_t> pixels;  // n * h * w, empty when images not loaded
    int h = 0, w = 0;

    int64_t size() const { return static_cast<int64_t>(manifest.rows.size()); }

    void batch_images(const int64_t* idx, int count, Tensor<float>& out) const {
        out.resize({count, 1, h, w});
        const size_t plane = static_cast<size_t>(h) * w;
        for (int b = 0; b < count; ++b) {
            const uint8_t* src = pixels.data() + static_cast<size_t>(idx[b]) * plane;
            float* dst = out.data() + static_cast<size_t>(b) * plane;
            for (size_t p = 0; p < plane; ++p) dst[p] = static_cast<float>(src[p]) / 255.0f;
        }
    }

    std::vector<double> coords(int64_t row) const {
        const Scene& s = manifest.rows[static_cast<size_t>(row)].scene;
        return {s.squares[0].x, s.squares[0].y, s.squares[1].x,
                s.squares[1].y, s.triangle.x,  s.triangle.y};
    }

    Point target(int64_t row) const {
        const Scene& s = manifest.rows[static_cast<size_t>(row)].scene;
        return s.squares[static_cast<size_t>(s.target_index)];
    }
};

LoadedSplit load_split(const std::string& data_dir, const std::string& split, int64_t limit,
                       bool want_images) {
    LoadedSplit out;
    out.manifest = read_manifest((fs::path(data_dir) / (split + ".csv")).string());
    if (limit > 0 && limit < static_cast<int64_t>(out.manifest.rows.size()))
        out.manifest.rows.resize(static_cast<size_t>(limit));
    if (out.manifest.rows.empty()) throw DataError("empty split '" + split + "' in " + data_dir);
    if (!want_images) return out;

    const int64_t n = out.size();
    Image first = read_pgm((fs::path(out.manifest.dir) / out.manifest.rows[0].image_path).string());
    out.h = first.h;
    out.w = first.w;
    out.pixels.resize(static_cast<size_t>(n) * first.h * first.w);
    std::string err;
    const int nt = std::max<int>(1, static_cast<int>(std::min<int64_t>(threads(), n)));
#pragma omp parallel for schedule(dynamic, 32) num_threads(nt)
    for (int64_t i = 0; i < n; ++i) {
        try {
            Image img =
                read_pgm((fs::path(out.manifest.dir) / out.manifest.rows[static_cast<size_t>(i)].image_path).string());
            if (img.h != out.h || img.w != out.w) throw DataError("inconsistent image sizes in dataset");
            std::copy(img.px.begin(), img.px.end(),
                      out.pixels.begin() + static_cast<size_t>(i) * out.h * out.w);
        } catch (const std::exception& e) {
#pragma omp critical
            if (err.empty()) err = e.what();
        }
    }
    if (!err.empty()) throw DataError(err);
    return out;
}

// Deterministic epoch shuffling; consecutive full batches.
struct BatchPlan {
    std::vector<int64_t> order;
    int64_t cursor = 0;
    uint64_t seed;
    int64_t epoch = 0;

    BatchPlan(int64_t n, uint64_t seed_) : order(static_cast<size_t>(n)), seed(seed_) {
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        reshuffle();
    }
    void reshuffle() {
        Rng rng(seed ^ (0x5851F42D4C957F2DULL + static_cast<uint64_t>(epoch)));
        rng.shuffle(order.data(), order.size());
    }
    const int64_t* next(int batch) {
        if (cursor + batch > static_cast<int64_t>(order.size())) {
            ++epoch;
            reshuffle();
            cursor = 0;
        }
        const int64_t* p = order.data() + cursor;
        cursor += batch;
        return p;
    }
};

int64_t resolve_steps(const TrainConfig& cfg, int64_t train_n) {
    if (cfg.epochs > 0) {
        int64_t per_epoch = std::max<int64_t>(1, train_n / cfg.batch_size);
        return per_epoch * cfg.epochs;
    }
    return cfg.steps;
}

void check_finite(double loss, int64_t step) {
    if (!std::isfinite(loss))
        throw DivergenceError("non-finite training loss at step " + std::to_string(step));
}

nlohmann::json run_echo(const TrainConfig& cfg, const std::string& regime,
                        const std::string& data_dir, const std::string& extra_data = "") {
    nlohmann::json j = {{"run_regime", regime},
                        {"data_dir", data_dir},
                        {"train", {{"regime", cfg.regime},
                                   {"learning_rate", cfg.learning_rate},
                                   {"batch_size", cfg.batch_size},
                                   {"steps", cfg.steps},
                                   {"epochs", cfg.epochs},
                                   {"seed", cfg.seed},
                                   {"train_samples", cfg.train_samples},
                                   {"eval_samples", cfg.eval_samples},
                                   {"decimals", cfg.decimals},
                                   {"cnn_outputs", cfg.cnn_outputs},
                                   {"eval_every", cfg.eval_every},
                                   {"noise_augment", cfg.noise_augment}}}};
    if (!extra_data.empty()) j["coord_data_dir"] = extra_data;
    return j;
}

TrainConfig train_cfg_from_echo(const nlohmann::json& j) {
    TrainConfig c;
    const auto& t = j.at("train");
    c.regime = t.at("regime").get<std::string>();
    c.learning_rate = t.at("learning_rate").get<double>();
    c.batch_size = t.at("batch_size").get<int>();
    c.steps = t.at("steps").get<int64_t>();
    c.epochs = t.at("epochs").get<int>();
    c.seed = t.at("seed").get<uint64_t>();
    c.train_samples = t.at("train_samples").get<int64_t>();
    c.eval_samples = t.at("eval_samples").get<int64_t>();
    c.decimals = t.at("decimals").get<int>();
    c.cnn_outputs = t.at("cnn_outputs").get<int>();
    c.eval_every = t.at("eval_every").get<int64_t>();
    c.noise_augment = t.at("noise_augment").get<bool>();
    return c;
}

void persist_run(const RunRecord& rec, const std::string& run_dir) {
    if (run_dir.empty()) return;
    store_result(run_dir, rec.regime, rec.final_eval, rec.wall_seconds, rec.label_cost);
    store_per_sample(run_dir, rec.final_eval.per_sample);
}

// ------------------------------------------------------------- inference

std::vector<int> context_ids_from_values(const std::vector<double>& values, int decimals) {
    TokenSeq seq = encode_values(values, std::nullopt, FormatSpec{decimals});
    seq.ids.push_back(vocab::kSep);
    return seq.ids;
}

std::optional<Point> decode_from_values(const Transformer<float>& tf,
                                        const std::vector<double>& values, int decimals) {
    std::vector<int> ids = context_ids_from_values(values, decimals);
    Tensor<float> rows;
    tf.embed(ids, 1, static_cast<int>(ids.size()), rows);
    std::vector<int> gen = tf.greedy_decode(rows, 2 * decimals + 1);
    return parse_target_tokens(gen, FormatSpec{decimals});
}

// Per-coordinate RMSE (mean over coordinates of per-coordinate RMSE) plus a
// per-sample RMSE vector; used for the intermediate regression stage.
EvalResult eval_cnn_stage(Cnn<float>& cnn, const LoadedSplit& split, int64_t limit) {
    int64_t n = split.size();
    if (limit > 0) n = std::min(n, limit);
    const int m = cnn.spec().outputs;
    EvalResult res;
    res.n = n;
    res.per_sample.assign(static_cast<size_t>(n), 0.0);
    std::vector<double> sq_per_coord(static_cast<size_t>(m), 0.0);
    const int chunk = 256;
    Tensor<float> batch;
    std::vector<int64_t> idx(static_cast<size_t>(chunk));
    for (int64_t base = 0; base < n; base += chunk) {
        int count = static_cast<int>(std::min<int64_t>(chunk, n - base));
        for (int b = 0; b < count; ++b) idx[static_cast<size_t>(b)] = base + b;
        split.batch_images(idx.data(), count, batch);
        const Tensor<float>& out = cnn.forward(batch);
        for (int b = 0; b < count; ++b) {
            std::vector<double> truth = split.coords(base + b);
            double acc = 0.0;
            for (int j = 0; j < m; ++j) {
                double e = static_cast<double>(out.v[static_cast<size_t>(b) * m + j]) - truth[static_cast<size_t>(j)];
                sq_per_coord[static_cast<size_t>(j)] += e * e;
                acc += e * e;
            }
            res.per_sample[static_cast<size_t>(base + b)] = std::sqrt(acc / m);
        }
    }
    double mean_rmse = 0.0;
    for (int j = 0; j < m; ++j) mean_rmse += std::sqrt(sq_per_coord[static_cast<size_t>(j)] / static_cast<double>(n));
    res.mean_err = mean_rmse / m;
    double mean_ps = 0.0;
    for (double e : res.per_sample) mean_ps += e;
    mean_ps /= static_cast<double>(n);
    if (n > 1) {
        double ss = 0.0;
        for (double e : res.per_sample) ss += (e - mean_ps) * (e - mean_ps);
        res.std_err = std::sqrt(ss / static_cast<double>(n - 1));
    }
    return res;
}

// Point-prediction eval for regimes that output a coordinate pair.
EvalResult eval_points(const std::function<std::optional<Point>(int64_t)>& predict,
                       const LoadedSplit& split, int64_t limit) {
    Manifest sub = split.manifest;
    if (limit > 0 && limit < static_cast<int64_t>(sub.rows.size()))
        sub.rows.resize(static_cast<size_t>(limit));
    return evaluate([&](const SampleRecord&, int64_t row) { return predict(row); }, sub);
}

// CNN batch forward over a split, collecting the raw output values.
std::vector<std::vector<double>> cnn_values_for_split(Cnn<float>& cnn, const LoadedSplit& split,
                                                      int64_t n) {
    const int m = cnn.spec().outputs;
    std::vector<std::vector<double>> vals(static_cast<size_t>(n));
    const int chunk = 256;
    Tensor<float> batch;
    std::vector<int64_t> idx(static_cast<size_t>(chunk));
    for (int64_t base = 0; base < n; base += chunk) {
        int count = static_cast<int>(std::min<int64_t>(chunk, n - base));
        for (int b = 0; b < count; ++b) idx[static_cast<size_t>(b)] = base + b;
        split.batch_images(idx.data(), count, batch);
        const Tensor<float>& out = cnn.forward(batch);
        for (int b = 0; b < count; ++b) {
            std::vector<double>& v = vals[static_cast<size_t>(base + b)];
            v.resize(static_cast<size_t>(m));
            for (int j = 0; j < m; ++j) v[static_cast<size_t>(j)] = static_cast<double>(out.v[static_cast<size_t>(b) * m + j]);
        }
    }
    return vals;
}

EvalResult eval_transformer_decode(const Transformer<float>& tf, int decimals,
                                   const std::vector<std::vector<double>>& contexts,
                                   const LoadedSplit& split, int64_t n) {
    std::vector<std::optional<Point>> preds(static_cast<size_t>(n));
    const int nt = std::max<int>(1, static_cast<int>(std::min<int64_t>(threads(), n)));
#pragma omp parallel for schedule(dynamic, 8) num_threads(nt)
    for (int64_t i = 0; i < n; ++i)
        preds[static_cast<size_t>(i)] = decode_from_values(tf, contexts[static_cast<size_t>(i)], decimals);
    return eval_points([&](int64_t row) { return preds[static_cast<size_t>(row)]; }, split, n);
}

std::vector<std::optional<Point>> composite_predict_split(Composite<float>& model,
                                                          const LoadedSplit& split) {
    const int64_t n = split.size();
    std::vector<std::optional<Point>> preds(static_cast<size_t>(n));
    const int chunk = 64;
    Tensor<float> batch;
    std::vector<int64_t> idx(static_cast<size_t>(chunk));
    for (int64_t base = 0; base < n; base += chunk) {
        int count = static_cast<int>(std::min<int64_t>(chunk, n - base));
        for (int b = 0; b < count; ++b) idx[static_cast<size_t>(b)] = base + b;
        split.batch_images(idx.data(), count, batch);
        auto out = model.predict(batch);
        for (int b = 0; b < count; ++b) preds[static_cast<size_t>(base + b)] = out[static_cast<size_t>(b)].point;
    }
    return preds;
}

std::string spec_mismatch(const std::string& path) {
    return "checkpoint spec in " + path + " does not match the requested configuration";
}

}  // namespace

// ----------------------------------------------------------------- stages

RunRecord train_cnn_stage(const TrainConfig& cfg, const std::string& data_dir,
                          const std::string& run_dir) {
    cfg.validate();
    auto t0 = Clock::now();
    LoadedSplit train = load_split(data_dir, "train", cfg.train_samples, true);
    LoadedSplit eval = load_split(data_dir, "eval", cfg.eval_samples, true);

    const bool baseline = cfg.regime == "baseline";
    const int m = baseline ? 2 : 6;
    CnnSpec spec;
    spec.in_h = train.h;
    spec.in_w = train.w;
    spec.outputs = m;
    Cnn<float> cnn(spec, cfg.seed);
    Adam<float> opt(cfg.learning_rate);
    ParamRefs<float> params = cnn.params();

    RunRecord rec;
    rec.regime = cfg.regime;
    rec.seed = cfg.seed;
    rec.model_spec = spec.to_json();
    rec.resolved_config = run_echo(cfg, cfg.regime, data_dir);
    if (!run_dir.empty()) {
        store_config_echo(run_dir, rec.resolved_config);
        store_created(run_dir);
    }

    const int64_t steps = resolve_steps(cfg, train.size());
    BatchPlan plan(train.size(), cfg.seed);
    Tensor<float> batch, gy;
    std::vector<double> truth;
    for (int64_t step = 1; step <= steps; ++step) {
        const int64_t* idx = plan.next(cfg.batch_size);
        train.batch_images(idx, cfg.batch_size, batch);
        const Tensor<float>& out = cnn.forward(batch);

        double loss = 0.0;
        gy.resize({cfg.batch_size, m});
        for (int b = 0; b < cfg.batch_size; ++b) {
            std::vector<double> c = train.coords(idx[b]);
            if (baseline) {
                Point t = train.target(idx[b]);
                c = {t.x, t.y};
            }
            for (int j = 0; j < m; ++j) {
                double e = static_cast<double>(out.v[static_cast<size_t>(b) * m + j]) - c[static_cast<size_t>(j)];
                loss += e * e;
                gy.v[static_cast<size_t>(b) * m + j] = static_cast<float>(2.0 * e / (cfg.batch_size * m));
            }
        }
        loss /= cfg.batch_size * m;
        check_finite(loss, step);

        zero_grads(params);
        cnn.backward(gy);
        opt.step(params);

        if (step % cfg.eval_every == 0 || step == steps) {
            EvalResult ev;
            if (baseline) {
                auto vals = cnn_values_for_split(cnn, eval, eval.size());
                ev = eval_points(
                    [&](int64_t row) -> std::optional<Point> {
                        return Point{vals[static_cast<size_t>(row)][0], vals[static_cast<size_t>(row)][1]};
                    },
                    eval, 0);
            } else {
                ev = eval_cnn_stage(cnn, eval, 0);
            }
            MetricPoint mp{step, loss, ev.mean_err, -1.0};
            rec.history.push_back(mp);
            if (!run_dir.empty()) append_metric(run_dir, mp);
            rec.final_eval = std::move(ev);
        }
    }

    rec.wall_seconds = seconds_since(t0);
    rec.label_cost = LabelCost{1, train.size(), train.size()};
    if (!run_dir.empty()) {
        save_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(), spec.to_json().dump(),
                        params);
        rec.artifacts.push_back((fs::path(run_dir) / "checkpoint.bin").string());
        persist_run(rec, run_dir);
    }
    rec.run_id = run_dir.empty() ? "inline" : fs::path(run_dir).filename().string();
    return rec;
}

RunRecord train_baseline_cnn(const TrainConfig& cfg, const std::string& data_dir,
                             const std::string& run_dir) {
    TrainConfig c = cfg;
    c.regime = "baseline";
    c.cnn_outputs = 2;  // forced: the baseline solves the whole task directly
    return train_cnn_stage(c, data_dir, run_dir);
}

RunRecord train_transformer_stage(const TrainConfig& cfg, const std::string& data_dir,
                                  const std::string& run_dir) {
    cfg.validate();
    auto t0 = Clock::now();
    LoadedSplit train = load_split(data_dir, "train", cfg.train_samples, false);
    LoadedSplit eval = load_split(data_dir, "eval", cfg.eval_samples, false);

    const int d = cfg.decimals;
    const FormatSpec fmt{d};
    const int seq_len = sequence_length(6, d, true);
    TransformerSpec spec;
    spec.max_len = seq_len;
    Transformer<float> tf(spec, cfg.seed);
    Adam<float> opt(cfg.learning_rate);
    ParamRefs<float> params = tf.params();

    RunRecord rec;
    rec.regime = "transformer";
    rec.seed = cfg.seed;
    rec.model_spec = spec.to_json();
    rec.resolved_config = run_echo(cfg, "transformer", data_dir);
    if (!run_dir.empty()) {
        store_config_echo(run_dir, rec.resolved_config);
        store_created(run_dir);
    }

    // token cache (rebuilt per batch when jitter is on)
    const int64_t n_train = train.size();
    std::vector<int8_t> tokens;
    auto encode_row = [&](const LoadedSplit& ls, int64_t row, double jitter, Rng* rng,
                          int8_t* out) {
        std::vector<double> c = ls.coords(row);
        if (jitter > 0.0 && rng)
            for (auto& v : c) v = std::min(1.0, std::max(0.0, v + rng->uniform(-jitter, jitter)));
        Point t = ls.target(row);
        TokenSeq seq = encode_values(c, t, fmt);
        for (size_t i = 0; i < seq.ids.size(); ++i) out[i] = static_cast<int8_t>(seq.ids[i]);
    };
    if (!cfg.noise_augment) {
        tokens.resize(static_cast<size_t>(n_train) * seq_len);
        for (int64_t i = 0; i < n_train; ++i)
            encode_row(train, i, 0.0, nullptr, &tokens[static_cast<size_t>(i) * seq_len]);
    }

    const int sep = sequence_length(6, d, false);  // ':' position
    const int tgt_tokens = 2 * d + 1;
    std::vector<int> ids(static_cast<size_t>(cfg.batch_size) * seq_len);
    std::vector<int> next(static_cast<size_t>(cfg.batch_size) * seq_len, 0);
    std::vector<float> weight(static_cast<size_t>(cfg.batch_size) * seq_len, 0.0f);
    for (int b = 0; b < cfg.batch_size; ++b)
        for (int p = sep; p < sep + tgt_tokens; ++p) weight[static_cast<size_t>(b) * seq_len + p] = 1.0f;

    SoftmaxCrossEntropy<float> ce;
    const double jitter = cfg.noise_augment ? 0.5 * std::pow(10.0, -d) : 0.0;
    std::vector<int8_t> scratch(static_cast<size_t>(seq_len));

    const int64_t steps = resolve_steps(cfg, n_train);
    BatchPlan plan(n_train, cfg.seed);
    auto eval_now = [&]() {
        std::vector<std::vector<double>> ctx(static_cast<size_t>(eval.size()));
        for (int64_t i = 0; i < eval.size(); ++i) ctx[static_cast<size_t>(i)] = eval.coords(i);
        return eval_transformer_decode(tf, d, ctx, eval, eval.size());
    };

    for (int64_t step = 1; step <= steps; ++step) {
        const int64_t* idx = plan.next(cfg.batch_size);
        Rng jrng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(step)));
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cfg.noise_augment) {
                encode_row(train, idx[b], jitter, &jrng, scratch.data());
                for (int p = 0; p < seq_len; ++p) ids[static_cast<size_t>(b) * seq_len + p] = scratch[static_cast<size_t>(p)];
            } else {
                const int8_t* src = &tokens[static_cast<size_t>(idx[b]) * seq_len];
                for (int p = 0; p < seq_len; ++p) ids[static_cast<size_t>(b) * seq_len + p] = src[p];
            }
            for (int p = 0; p + 1 < seq_len; ++p)
                next[static_cast<size_t>(b) * seq_len + p] = ids[static_cast<size_t>(b) * seq_len + p + 1];
            next[static_cast<size_t>(b) * seq_len + seq_len - 1] = 0;
        }

        const Tensor<float>& logits = tf.forward_tokens(ids, cfg.batch_size, seq_len);
        double loss = static_cast<double>(ce.forward(logits, next, weight));
        check_finite(loss, step);
        Tensor<float> glogits;
        ce.backward(glogits);
        zero_grads(params);
        Tensor<float> grows;
        tf.backward(glogits, grows, true);
        opt.step(params);

        if (step % cfg.eval_every == 0 || step == steps) {
            EvalResult ev = eval_now();
            MetricPoint mp{step, loss, ev.mean_err, -1.0};
            rec.history.push_back(mp);
            if (!run_dir.empty()) append_metric(run_dir, mp);
            rec.final_eval = std::move(ev);
        }
    }

    rec.wall_seconds = seconds_since(t0);
    rec.label_cost = LabelCost{1, n_train, n_train};
    if (!run_dir.empty()) {
        save_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(), spec.to_json().dump(),
                        params);
        rec.artifacts.push_back((fs::path(run_dir) / "checkpoint.bin").string());
        persist_run(rec, run_dir);
    }
    rec.run_id = run_dir.empty() ? "inline" : fs::path(run_dir).filename().string();
    return rec;
}

RunRecord train_chained(const TrainConfig& cnn_cfg, const TrainConfig& transformer_cfg,
                        const std::string& image_data_dir, const std::string& coord_data_dir,
                        const std::string& run_dir) {
    auto t0 = Clock::now();
    std::string cnn_dir = run_dir.empty() ? "" : (fs::path(run_dir) / "cnn").string();
    std::string tf_dir = run_dir.empty() ? "" : (fs::path(run_dir) / "transformer").string();

    RunRecord cnn_rec, tf_rec;
    try {
        cnn_rec = train_cnn_stage(cnn_cfg, image_data_dir, cnn_dir);
    } catch (const std::exception& e) {
        throw DivergenceError(std::string("cnn stage: ") + e.what());
    }
    try {
        tf_rec = train_transformer_stage(transformer_cfg, coord_data_dir, tf_dir);
    } catch (const std::exception& e) {
        throw DivergenceError(std::string("transformer stage: ") + e.what());
    }

    RunRecord rec;
    rec.regime = "chained";
    rec.seed = cnn_cfg.seed;
    rec.model_spec = {{"kind", "chained"}, {"decimals", transformer_cfg.decimals}};
    rec.resolved_config = run_echo(cnn_cfg, "chained", image_data_dir, coord_data_dir);
    rec.resolved_config["transformer_train"] = run_echo(transformer_cfg, "transformer", coord_data_dir)["train"];
    if (!run_dir.empty()) {
        store_config_echo(run_dir, rec.resolved_config);
        store_created(run_dir);
    }

    // chained inference on the image eval split
    LoadedSplit eval = load_split(image_data_dir, "eval", cnn_cfg.eval_samples, true);
    CnnSpec cnn_spec;
    cnn_spec.in_h = eval.h;
    cnn_spec.in_w = eval.w;
    cnn_spec.outputs = 6;
    Cnn<float> cnn(cnn_spec, cnn_cfg.seed);
    {
        ParamRefs<float> ps = cnn.params();
        std::string got = load_checkpoint((fs::path(cnn_dir) / "checkpoint.bin").string(), ps);
        if (nlohmann::json::parse(got) != cnn_spec.to_json())
            throw DataError(spec_mismatch((fs::path(cnn_dir) / "checkpoint.bin").string()));
    }
    TransformerSpec tf_spec;
    tf_spec.max_len = sequence_length(6, transformer_cfg.decimals, true);
    Transformer<float> tf(tf_spec, transformer_cfg.seed);
    {
        ParamRefs<float> ps = tf.params();
        std::string got = load_checkpoint((fs::path(tf_dir) / "checkpoint.bin").string(), ps);
        if (nlohmann::json::parse(got) != tf_spec.to_json())
            throw DataError(spec_mismatch((fs::path(tf_dir) / "checkpoint.bin").string()));
    }

    auto vals = cnn_values_for_split(cnn, eval, eval.size());
    rec.final_eval = eval_transformer_decode(tf, transformer_cfg.decimals, vals, eval, eval.size());
    rec.history = tf_rec.history;

    rec.wall_seconds = seconds_since(t0);
    int64_t n = cnn_rec.label_cost.unit;
    rec.label_cost = LabelCost{2, n, 2 * n};
    if (!run_dir.empty()) {
        rec.artifacts = {cnn_rec.artifacts.empty() ? "" : cnn_rec.artifacts[0],
                         tf_rec.artifacts.empty() ? "" : tf_rec.artifacts[0]};
        persist_run(rec, run_dir);
    }
    rec.run_id = run_dir.empty() ? "inline" : fs::path(run_dir).filename().string();
    return rec;
}

EvalResult eval_chained_with_values(Transformer<float>& transformer, int decimals,
                                    const ValueSource& values, const Manifest& split) {
    if (split.rows.empty()) throw std::invalid_argument("empty split");
    const int64_t n = static_cast<int64_t>(split.rows.size());
    std::vector<std::optional<Point>> preds(static_cast<size_t>(n));
    const int nt = std::max<int>(1, static_cast<int>(std::min<int64_t>(threads(), n)));
#pragma omp parallel for schedule(dynamic, 8) num_threads(nt)
    for (int64_t i = 0; i < n; ++i) {
        std::vector<double> v = values(split.rows[static_cast<size_t>(i)], i);
        preds[static_cast<size_t>(i)] = decode_from_values(transformer, v, decimals);
    }
    return evaluate([&](const SampleRecord&, int64_t row) { return preds[static_cast<size_t>(row)]; },
                    split);
}

RunRecord train_composite(const TrainConfig& cfg, const std::string& data_dir,
                          const std::string& run_dir) {
    cfg.validate();
    auto t0 = Clock::now();
    LoadedSplit train = load_split(data_dir, "train", cfg.train_samples, true);
    LoadedSplit eval = load_split(data_dir, "eval", cfg.eval_samples > 0 ? cfg.eval_samples : 200, true);

    CompositeSpec spec;
    spec.cnn.in_h = train.h;
    spec.cnn.in_w = train.w;
    spec.cnn.outputs = cfg.cnn_outputs;
    spec.format.decimals = cfg.decimals;
    Composite<float> model(spec, cfg.seed);
    Adam<float> opt(cfg.learning_rate);
    ParamRefs<float> params = model.params();

    RunRecord rec;
    rec.regime = "composite";
    rec.seed = cfg.seed;
    rec.model_spec = spec.to_json();
    rec.resolved_config = run_echo(cfg, "composite", data_dir);
    if (!run_dir.empty()) {
        store_config_echo(run_dir, rec.resolved_config);
        store_created(run_dir);
    }

    const int64_t steps = resolve_steps(cfg, train.size());
    BatchPlan plan(train.size(), cfg.seed);
    Tensor<float> batch;
    std::vector<Point> targets(static_cast<size_t>(cfg.batch_size));
    double probe = -1.0;
    int saturated_evals = 0;

    for (int64_t step = 1; step <= steps; ++step) {
        const int64_t* idx = plan.next(cfg.batch_size);
        train.batch_images(idx, cfg.batch_size, batch);
        for (int b = 0; b < cfg.batch_size; ++b) targets[static_cast<size_t>(b)] = train.target(idx[b]);

        double loss = static_cast<double>(model.train_forward(batch, targets));
        check_finite(loss, step);
        zero_grads(params);
        model.train_backward();
        probe = model.grad_probe();
        opt.step(params);

        if (step % cfg.eval_every == 0 || step == steps) {
            auto preds = composite_predict_split(model, eval);
            EvalResult ev = eval_points(
                [&](int64_t row) { return preds[static_cast<size_t>(row)]; }, eval, 0);
            MetricPoint mp{step, loss, ev.mean_err, probe};
            rec.history.push_back(mp);
            if (!run_dir.empty()) append_metric(run_dir, mp);
            rec.final_eval = std::move(ev);
            if (probe < 1e-12) {
                if (++saturated_evals >= 3)
                    std::cerr << "warning: connector gradient saturated (probe < 1e-12 for 3 evals)\n";
            } else {
                saturated_evals = 0;
            }
        }
    }

    rec.wall_seconds = seconds_since(t0);
    rec.label_cost = LabelCost{1, train.size(), train.size()};
    if (!run_dir.empty()) {
        save_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(), spec.to_json().dump(),
                        params);
        rec.artifacts.push_back((fs::path(run_dir) / "checkpoint.bin").string());
        persist_run(rec, run_dir);
    }
    rec.run_id = run_dir.empty() ? "inline" : fs::path(run_dir).filename().string();
    return rec;
}

// ------------------------------------------------------------------- eval

EvalResult eval_run(const std::string& run_dir, const std::string& data_dir,
                    const std::string& split, bool write_back) {
    nlohmann::json echo = load_config_echo(run_dir);
    std::string regime = echo.at("run_regime").get<std::string>();
    TrainConfig cfg = train_cfg_from_echo(echo);

    EvalResult res;
    if (regime == "cnn" || regime == "baseline") {
        LoadedSplit ls = load_split(data_dir, split, 0, true);
        CnnSpec spec;
        spec.in_h = ls.h;
        spec.in_w = ls.w;
        spec.outputs = regime == "baseline" ? 2 : 6;
        Cnn<float> cnn(spec, 1);
        ParamRefs<float> ps = cnn.params();
        std::string got = load_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(), ps);
        if (nlohmann::json::parse(got) != spec.to_json())
            throw DataError(spec_mismatch((fs::path(run_dir) / "checkpoint.bin").string()));
        if (regime == "baseline") {
            auto vals = cnn_values_for_split(cnn, ls, ls.size());
            res = eval_points(
                [&](int64_t row) -> std::optional<Point> {
                    return Point{vals[static_cast<size_t>(row)][0], vals[static_cast<size_t>(row)][1]};
                },
                ls, 0);
        } else {
            res = eval_cnn_stage(cnn, ls, 0);
        }
    } else if (regime == "transformer") {
        LoadedSplit ls = load_split(data_dir, split, 0, false);
        TransformerSpec spec;
        spec.max_len = sequence_length(6, cfg.decimals, true);
        Transformer<float> tf(spec, 1);
        ParamRefs<float> ps = tf.params();
        std::string got = load_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(), ps);
        if (nlohmann::json::parse(got) != spec.to_json())
            throw DataError(spec_mismatch((fs::path(run_dir) / "checkpoint.bin").string()));
        std::vector<std::vector<double>> ctx(static_cast<size_t>(ls.size()));
        for (int64_t i = 0; i < ls.size(); ++i) ctx[static_cast<size_t>(i)] = ls.coords(i);
        res = eval_transformer_decode(tf, cfg.decimals, ctx, ls, ls.size());
    } else if (regime == "chained") {
        LoadedSplit ls = load_split(data_dir, split, 0, true);
        CnnSpec cnn_spec;
        cnn_spec.in_h = ls.h;
        cnn_spec.in_w = ls.w;
        cnn_spec.outputs = 6;
        Cnn<float> cnn(cnn_spec, 1);
        {
            ParamRefs<float> ps = cnn.params();
            std::string got =
                load_checkpoint((fs::path(run_dir) / "cnn" / "checkpoint.bin").string(), ps);
            if (nlohmann::json::parse(got) != cnn_spec.to_json())
                throw DataError(spec_mismatch((fs::path(run_dir) / "cnn" / "checkpoint.bin").string()));
        }
        int decimals = echo.contains("transformer_train")
                           ? echo.at("transformer_train").at("decimals").get<int>()
                           : cfg.decimals;
        TransformerSpec tf_spec;
        tf_spec.max_len = sequence_length(6, decimals, true);
        Transformer<float> tf(tf_spec, 1);
        {
            ParamRefs<float> ps = tf.params();
            std::string got =
                load_checkpoint((fs::path(run_dir) / "transformer" / "checkpoint.bin").string(), ps);
            if (nlohmann::json::parse(got) != tf_spec.to_json())
                throw DataError(
                    spec_mismatch((fs::path(run_dir) / "transformer" / "checkpoint.bin").string()));
        }
        auto vals = cnn_values_for_split(cnn, ls, ls.size());
        res = eval_transformer_decode(tf, decimals, vals, ls, ls.size());
    } else if (regime == "composite") {
        LoadedSplit ls = load_split(data_dir, split, 0, true);
        CompositeSpec spec;
        spec.cnn.in_h = ls.h;
        spec.cnn.in_w = ls.w;
        spec.cnn.outputs = cfg.cnn_outputs;
        spec.format.decimals = cfg.decimals;
        Composite<float> model(spec, 1);
        ParamRefs<float> ps = model.params();
        std::string got = load_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(), ps);
        if (nlohmann::json::parse(got) != spec.to_json())
            throw DataError(spec_mismatch((fs::path(run_dir) / "checkpoint.bin").string()));
        auto preds = composite_predict_split(model, ls);
        res = eval_points([&](int64_t row) { return preds[static_cast<size_t>(row)]; }, ls, 0);
    } else {
        throw DataError("unknown regime in run dir: " + regime);
    }

    if (write_back) {
        nlohmann::json prev = load_result(run_dir);
        LabelCost cost;
        cost.tasks = prev.at("label_cost").at("T").get<int>();
        cost.unit = prev.at("label_cost").at("N").get<int64_t>();
        cost.total = prev.at("label_cost").at("total").get<int64_t>();
        store_result(run_dir, regime, res, prev.at("wall_seconds").get<double>(), cost);
        store_per_sample(run_dir, res.per_sample);
    }
    return res;
}

// ------------------------------------------------------------------ sweep

std::vector<SweepEntry> sweep(const SweepConfig& grid, const TrainConfig& base,
                              const std::string& data_dir, const std::string& out_dir) {
    std::vector<double> lrs = grid.learning_rates.empty() ? std::vector<double>{base.learning_rate}
                                                          : grid.learning_rates;
    std::vector<int> decs = grid.decimals.empty() ? std::vector<int>{base.decimals} : grid.decimals;
    std::vector<uint64_t> seeds = grid.seeds.empty() ? std::vector<uint64_t>{base.seed} : grid.seeds;
    if (grid.learning_rates.empty() && grid.decimals.empty() && grid.seeds.empty())
        throw std::invalid_argument("sweep: empty grid (set sweep.learning_rates, sweep.decimals or sweep.seeds)");

    std::vector<TrainConfig> combos;
    for (double lr : lrs)
        for (int d : decs)
            for (uint64_t s : seeds) {
                TrainConfig c = base;
                c.learning_rate = lr;
                c.decimals = d;
                c.seed = s;
                combos.push_back(c);
            }
    if (static_cast<int>(combos.size()) > grid.max_runs) {
        Rng rng(grid.subsample_seed);
        rng.shuffle(combos.data(), combos.size());
        combos.resize(static_cast<size_t>(grid.max_runs));
    }

    fs::create_directories(out_dir);
    std::vector<SweepEntry> entries(combos.size());
    const int nt = std::max(1, std::min<int>(threads(), static_cast<int>(combos.size())));
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
    for (size_t i = 0; i < combos.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "sweep_%03zu", i);
        SweepEntry& e = entries[i];
        e.config = combos[i];
        e.run_dir = (fs::path(out_dir) / name).string();
        try {
            RunRecord rec;
            if (grid.regime == "transformer")
                rec = train_transformer_stage(combos[i], data_dir, e.run_dir);
            else if (grid.regime == "cnn")
                rec = train_cnn_stage(combos[i], data_dir, e.run_dir);
            else if (grid.regime == "baseline")
                rec = train_baseline_cnn(combos[i], data_dir, e.run_dir);
            else if (grid.regime == "composite")
                rec = train_composite(combos[i], data_dir, e.run_dir);
            else
                throw ConfigError("sweep.regime must be cnn|transformer|baseline|composite");
            e.eval_err = rec.final_eval.mean_err;
        } catch (const std::exception& ex) {
            e.failed = true;
            e.error = ex.what();
        }
    }

    std::stable_sort(entries.begin(), entries.end(), [](const SweepEntry& a, const SweepEntry& b) {
        if (a.failed != b.failed) return !a.failed;
        return a.eval_err < b.eval_err;
    });

    std::ofstream f((fs::path(out_dir) / "sweep.csv").string(), std::ios::binary);
    f << "run_dir,learning_rate,decimals,seed,eval_err,status\n";
    for (const auto& e : entries) {
        f << fs::path(e.run_dir).filename().string() << ',' << e.config.learning_rate << ','
          << e.config.decimals << ',' << e.config.seed << ',';
        if (e.failed)
            f << ",failed: " << e.error;
        else
            f << e.eval_err << ",ok";
        f << '\n';
    }
    return entries;
}

}  // namespace pipebench
