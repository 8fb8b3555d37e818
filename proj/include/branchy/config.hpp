#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "branchy/engine.hpp"
#include "branchy/errors.hpp"

namespace branchy {

/// Resolved run configuration. Every report echoes it verbatim so a run is
/// reproducible from its own echo and seed.
struct RunConfig {
    std::string model = "dnn";  // dnn | stacked-lstm
    std::vector<std::size_t> hidden_sizes{64, 64, 64};
    std::size_t embedding_dim = 32;
    double r_l = 0.3;
    double r_u = 1.0;
    std::string alpha_mode = "fixed";  // fixed | trainable
    double lr = 0.1;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::optional<std::uint64_t> seed;
    std::size_t max_len = 32;
    std::string calibration_split = "train";  // train | dev
    std::size_t min_count = 1;

    std::string data;        // single TSV, split internally
    double train_frac = 0.8;
    double dev_frac = 0.1;
    double test_frac = 0.1;
    std::string train_data;  // alternative: explicit split files
    std::string dev_data;
    std::string embeddings;  // optional pre-trained embedding file

    bool include_embedding_params = false;
    std::size_t seq_len = 0;  // 0 = dataset mean length, rounded up

    // synth command
    std::size_t classes = 10;
    std::size_t per_class = 200;
    std::size_t vocab_per_class = 8;
    double noise = 0.3;

    ModelKind kind() const {
        if (model == "dnn") return ModelKind::kDnn;
        if (model == "stacked-lstm") return ModelKind::kStackedLstm;
        throw ConfigError("config: model must be 'dnn' or 'stacked-lstm', got '" +
                          model + "'");
    }

    AlphaMode alpha() const {
        if (alpha_mode == "fixed") return AlphaMode::kFixed;
        if (alpha_mode == "trainable") return AlphaMode::kTrainable;
        throw ConfigError("config: alpha_mode must be 'fixed' or 'trainable'");
    }

    std::uint64_t require_seed() const {
        if (!seed) throw ConfigError("config: seed is required (--seed or seed=...)");
        return *seed;
    }
};

namespace detail {

inline std::size_t parse_count(const std::string& key, const std::string& v) {
    try {
        long long x = std::stoll(v);
        if (x < 0) throw ConfigError("config: " + key + " must be non-negative");
        return static_cast<std::size_t>(x);
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        throw ConfigError("config: invalid integer for " + key + ": '" + v + "'");
    }
}

inline double parse_float(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError("config: invalid number for " + key + ": '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: invalid boolean for " + key + ": '" + v + "'");
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::istringstream is(v);
    std::string part;
    while (std::getline(is, part, ',')) {
        if (part.empty()) continue;
        out.push_back(parse_count(key, part));
    }
    if (out.empty()) throw ConfigError("config: " + key + " must list at least one size");
    return out;
}

}  // namespace detail

inline void config_set(RunConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_count;
    using detail::parse_float;
    if (key == "model") c.model = value;
    else if (key == "hidden_sizes") c.hidden_sizes = detail::parse_sizes(key, value);
    else if (key == "embedding_dim") c.embedding_dim = parse_count(key, value);
    else if (key == "r_l") c.r_l = parse_float(key, value);
    else if (key == "r_u") c.r_u = parse_float(key, value);
    else if (key == "alpha_mode") c.alpha_mode = value;
    else if (key == "lr") c.lr = parse_float(key, value);
    else if (key == "epochs") c.epochs = parse_count(key, value);
    else if (key == "batch_size") c.batch_size = parse_count(key, value);
    else if (key == "seed") c.seed = parse_count(key, value);
    else if (key == "max_len") c.max_len = parse_count(key, value);
    else if (key == "calibration_split") c.calibration_split = value;
    else if (key == "min_count") c.min_count = parse_count(key, value);
    else if (key == "data") c.data = value;
    else if (key == "train_frac") c.train_frac = parse_float(key, value);
    else if (key == "dev_frac") c.dev_frac = parse_float(key, value);
    else if (key == "test_frac") c.test_frac = parse_float(key, value);
    else if (key == "train_data") c.train_data = value;
    else if (key == "dev_data") c.dev_data = value;
    else if (key == "embeddings") c.embeddings = value;
    else if (key == "include_embedding_params")
        c.include_embedding_params = parse_bool(key, value);
    else if (key == "seq_len") c.seq_len = parse_count(key, value);
    else if (key == "classes") c.classes = parse_count(key, value);
    else if (key == "per_class") c.per_class = parse_count(key, value);
    else if (key == "vocab_per_class") c.vocab_per_class = parse_count(key, value);
    else if (key == "noise") c.noise = parse_float(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

/// Flat key=value file; blank lines and '#' comments allowed.
inline void load_config_file(RunConfig& c, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ": line " + std::to_string(lineno) +
                              ": expected key=value");
        config_set(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
}

/// Canonical key=value serialization of the resolved configuration.
inline std::string config_echo(const RunConfig& c) {
    std::map<std::string, std::string> kv;
    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    kv["model"] = c.model;
    {
        std::ostringstream os;
        for (std::size_t i = 0; i < c.hidden_sizes.size(); ++i) {
            if (i) os << ',';
            os << c.hidden_sizes[i];
        }
        kv["hidden_sizes"] = os.str();
    }
    kv["embedding_dim"] = std::to_string(c.embedding_dim);
    kv["r_l"] = num(c.r_l);
    kv["r_u"] = num(c.r_u);
    kv["alpha_mode"] = c.alpha_mode;
    kv["lr"] = num(c.lr);
    kv["epochs"] = std::to_string(c.epochs);
    kv["batch_size"] = std::to_string(c.batch_size);
    if (c.seed) kv["seed"] = std::to_string(*c.seed);
    kv["max_len"] = std::to_string(c.max_len);
    kv["calibration_split"] = c.calibration_split;
    kv["min_count"] = std::to_string(c.min_count);
    if (!c.data.empty()) kv["data"] = c.data;
    kv["train_frac"] = num(c.train_frac);
    kv["dev_frac"] = num(c.dev_frac);
    kv["test_frac"] = num(c.test_frac);
    if (!c.train_data.empty()) kv["train_data"] = c.train_data;
    if (!c.dev_data.empty()) kv["dev_data"] = c.dev_data;
    if (!c.embeddings.empty()) kv["embeddings"] = c.embeddings;
    kv["include_embedding_params"] = c.include_embedding_params ? "true" : "false";
    kv["seq_len"] = std::to_string(c.seq_len);
    kv["classes"] = std::to_string(c.classes);
    kv["per_class"] = std::to_string(c.per_class);
    kv["vocab_per_class"] = std::to_string(c.vocab_per_class);
    kv["noise"] = num(c.noise);

    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
    return os.str();
}

/// Parses a config echo back into a RunConfig (used when evaluating a
/// persisted model).
inline RunConfig config_from_echo(const std::string& echo) {
    RunConfig c;
    std::istringstream is(echo);
    std::string line;
    while (std::getline(is, line)) {
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed config echo line: " + t);
        config_set(c, t.substr(0, eq), t.substr(eq + 1));
    }
    return c;
}

}  // namespace branchy
