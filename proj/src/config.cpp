#include "pipebench/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pipebench/common.hpp"

namespace pipebench {

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw ConfigError(regime + ".learning_rate must be > 0");
    if (batch_size <= 0) throw ConfigError(regime + ".batch_size must be > 0");
    if (steps <= 0 && epochs <= 0) throw ConfigError(regime + ": steps or epochs must be > 0");
    if (decimals < 1 || decimals > 8) throw ConfigError(regime + ".decimals must be in [1,8]");
    if (cnn_outputs < 2) throw ConfigError(regime + ".cnn_outputs must be >= 2");
    if (eval_every <= 0) throw ConfigError(regime + ".eval_every must be > 0");
}

ConfigBundle default_config() {
    ConfigBundle b;
    // data defaults are the desk profile; paper.cfg scales them up
    b.data = DatasetConfig{};

    b.cnn.regime = "cnn";
    b.cnn.learning_rate = 1e-5;
    b.cnn.steps = 3000;
    b.cnn.cnn_outputs = 6;
    b.cnn.decimals = 3;

    b.transformer.regime = "transformer";
    b.transformer.learning_rate = 3e-4;
    b.transformer.steps = 4000;
    b.transformer.decimals = 3;

    b.composite.regime = "composite";
    b.composite.learning_rate = 1e-4;
    b.composite.steps = 1500;
    b.composite.decimals = 6;
    b.composite.cnn_outputs = 76;
    b.composite.batch_size = 32;

    b.baseline.regime = "baseline";
    b.baseline.learning_rate = 1e-5;
    b.baseline.steps = 3000;
    b.baseline.cnn_outputs = 2;
    return b;
}

namespace {

struct KeyBinding {
    std::function<void(ConfigBundle&, const std::string&)> set;
};

int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::map<std::string, KeyBinding> build_schema() {
    std::map<std::string, KeyBinding> m;
    auto add = [&](const std::string& key, std::function<void(ConfigBundle&, const std::string&)> f) {
        m[key] = KeyBinding{std::move(f)};
    };

    add("data.n_samples", [](ConfigBundle& b, const std::string& v) { b.data.n_samples = parse_i64("data.n_samples", v); });
    add("data.image_h", [](ConfigBundle& b, const std::string& v) { b.data.image_h = static_cast<int>(parse_i64("data.image_h", v)); });
    add("data.image_w", [](ConfigBundle& b, const std::string& v) { b.data.image_w = static_cast<int>(parse_i64("data.image_w", v)); });
    add("data.seed", [](ConfigBundle& b, const std::string& v) { b.data.seed = static_cast<uint64_t>(parse_i64("data.seed", v)); });
    add("data.margin", [](ConfigBundle& b, const std::string& v) { b.data.margin = parse_f64("data.margin", v); });
    add("data.min_separation", [](ConfigBundle& b, const std::string& v) { b.data.min_separation = parse_f64("data.min_separation", v); });
    add("data.square_side_px", [](ConfigBundle& b, const std::string& v) { b.data.square_side_px = static_cast<int>(parse_i64("data.square_side_px", v)); });
    add("data.triangle_side_px", [](ConfigBundle& b, const std::string& v) { b.data.triangle_side_px = static_cast<int>(parse_i64("data.triangle_side_px", v)); });
    add("data.eval_count", [](ConfigBundle& b, const std::string& v) { b.data.eval_count = parse_i64("data.eval_count", v); });
    add("data.test_count", [](ConfigBundle& b, const std::string& v) { b.data.test_count = parse_i64("data.test_count", v); });
    add("data.write_images", [](ConfigBundle& b, const std::string& v) { b.data.write_images = parse_bool("data.write_images", v); });

    auto add_train = [&](const std::string& prefix, TrainConfig ConfigBundle::*field) {
        add(prefix + ".learning_rate", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).learning_rate = parse_f64(prefix + ".learning_rate", v); });
        add(prefix + ".batch_size", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).batch_size = static_cast<int>(parse_i64(prefix + ".batch_size", v)); });
        add(prefix + ".steps", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).steps = parse_i64(prefix + ".steps", v); });
        add(prefix + ".epochs", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).epochs = static_cast<int>(parse_i64(prefix + ".epochs", v)); });
        add(prefix + ".seed", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).seed = static_cast<uint64_t>(parse_i64(prefix + ".seed", v)); });
        add(prefix + ".train_samples", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).train_samples = parse_i64(prefix + ".train_samples", v); });
        add(prefix + ".eval_samples", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).eval_samples = parse_i64(prefix + ".eval_samples", v); });
        add(prefix + ".decimals", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).decimals = static_cast<int>(parse_i64(prefix + ".decimals", v)); });
        add(prefix + ".eval_every", [field, prefix](ConfigBundle& b, const std::string& v) { (b.*field).eval_every = parse_i64(prefix + ".eval_every", v); });
    };
    add_train("cnn", &ConfigBundle::cnn);
    add_train("transformer", &ConfigBundle::transformer);
    add_train("composite", &ConfigBundle::composite);
    add_train("baseline", &ConfigBundle::baseline);
    add("transformer.noise_augment", [](ConfigBundle& b, const std::string& v) { b.transformer.noise_augment = parse_bool("transformer.noise_augment", v); });
    add("composite.cnn_outputs", [](ConfigBundle& b, const std::string& v) { b.composite.cnn_outputs = static_cast<int>(parse_i64("composite.cnn_outputs", v)); });

    add("sweep.regime", [](ConfigBundle& b, const std::string& v) { b.sweep.regime = v; });
    add("sweep.max_runs", [](ConfigBundle& b, const std::string& v) { b.sweep.max_runs = static_cast<int>(parse_i64("sweep.max_runs", v)); });
    add("sweep.learning_rates", [](ConfigBundle& b, const std::string& v) {
        b.sweep.learning_rates.clear();
        for (const auto& item : split_list(v)) b.sweep.learning_rates.push_back(parse_f64("sweep.learning_rates", item));
    });
    add("sweep.decimals", [](ConfigBundle& b, const std::string& v) {
        b.sweep.decimals.clear();
        for (const auto& item : split_list(v)) b.sweep.decimals.push_back(static_cast<int>(parse_i64("sweep.decimals", item)));
    });
    add("sweep.seeds", [](ConfigBundle& b, const std::string& v) {
        b.sweep.seeds.clear();
        for (const auto& item : split_list(v)) b.sweep.seeds.push_back(static_cast<uint64_t>(parse_i64("sweep.seeds", item)));
    });
    return m;
}

const std::map<std::string, KeyBinding>& schema() {
    static const std::map<std::string, KeyBinding> s = build_schema();
    return s;
}

void apply(ConfigBundle& b, const std::string& key, const std::string& value, const std::string& where) {
    auto it = schema().find(key);
    if (it == schema().end()) throw ConfigError("unknown config key '" + key + "' (" + where + ")");
    it->second.set(b, value);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t z = s.find_last_not_of(" \t\r");
    return s.substr(a, z - a + 1);
}

}  // namespace

ConfigBundle resolve_config(const std::optional<std::string>& path,
                            const std::vector<std::string>& overrides) {
    ConfigBundle b = default_config();
    if (path) {
        std::ifstream f(*path);
        if (!f) throw ConfigError("cannot open config file: " + *path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(*path + ":" + std::to_string(lineno) + ": expected key = value");
            apply(b, trim(t.substr(0, eq)), trim(t.substr(eq + 1)),
                  *path + ":" + std::to_string(lineno));
        }
    }
    for (const auto& ov : overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + ov + "' is not of the form key=value");
        apply(b, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)), "command line");
    }
    return b;
}

namespace {

nlohmann::json train_to_json(const TrainConfig& c) {
    return {{"regime", c.regime},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"steps", c.steps},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"train_samples", c.train_samples},
            {"eval_samples", c.eval_samples},
            {"decimals", c.decimals},
            {"cnn_outputs", c.cnn_outputs},
            {"eval_every", c.eval_every},
            {"noise_augment", c.noise_augment}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.regime = j.at("regime").get<std::string>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.steps = j.at("steps").get<int64_t>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.train_samples = j.at("train_samples").get<int64_t>();
    c.eval_samples = j.at("eval_samples").get<int64_t>();
    c.decimals = j.at("decimals").get<int>();
    c.cnn_outputs = j.at("cnn_outputs").get<int>();
    c.eval_every = j.at("eval_every").get<int64_t>();
    c.noise_augment = j.at("noise_augment").get<bool>();
    return c;
}

}  // namespace

nlohmann::json ConfigBundle::to_json() const {
    return {{"data",
             {{"n_samples", data.n_samples},
              {"image_h", data.image_h},
              {"image_w", data.image_w},
              {"seed", data.seed},
              {"margin", data.margin},
              {"min_separation", data.min_separation},
              {"square_side_px", data.square_side_px},
              {"triangle_side_px", data.triangle_side_px},
              {"eval_count", data.eval_count},
              {"test_count", data.test_count},
              {"write_images", data.write_images}}},
            {"cnn", train_to_json(cnn)},
            {"transformer", train_to_json(transformer)},
            {"composite", train_to_json(composite)},
            {"baseline", train_to_json(baseline)}};
}

ConfigBundle config_from_json(const nlohmann::json& echo) {
    ConfigBundle b = default_config();
    const auto& d = echo.at("data");
    b.data.n_samples = d.at("n_samples").get<int64_t>();
    b.data.image_h = d.at("image_h").get<int>();
    b.data.image_w = d.at("image_w").get<int>();
    b.data.seed = d.at("seed").get<uint64_t>();
    b.data.margin = d.at("margin").get<double>();
    b.data.min_separation = d.at("min_separation").get<double>();
    b.data.square_side_px = d.at("square_side_px").get<int>();
    b.data.triangle_side_px = d.at("triangle_side_px").get<int>();
    b.data.eval_count = d.at("eval_count").get<int64_t>();
    b.data.test_count = d.at("test_count").get<int64_t>();
    b.data.write_images = d.at("write_images").get<bool>();
    b.cnn = train_from_json(echo.at("cnn"));
    b.transformer = train_from_json(echo.at("transformer"));
    b.composite = train_from_json(echo.at("composite"));
    b.baseline = train_from_json(echo.at("baseline"));
    return b;
}

}  // namespace pipebench
