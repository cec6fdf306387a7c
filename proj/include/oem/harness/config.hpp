#pragma once

// Experiment configuration: a JSON document validated against kConfigSchema.
// Unknown keys are rejected so that typos do not silently fall back to
// defaults.

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "oem/error.hpp"
#include "oem/schedule.hpp"

namespace oem::harness {

using Json = nlohmann::json;

enum class Family { mixture, hmm, kalman, dirichlet };
enum class Mode { batch, online, distributed };
enum class Combine { entropic, simple, both };
enum class AlphaRule { shard_size, uniform };

inline const char* to_string(Family f) {
    switch (f) {
        case Family::mixture: return "mixture";
        case Family::hmm: return "hmm";
        case Family::kalman: return "kalman";
        case Family::dirichlet: return "dirichlet";
    }
    return "?";
}

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::batch: return "batch";
        case Mode::online: return "online";
        case Mode::distributed: return "distributed";
    }
    return "?";
}

struct ModelShape {
    std::string emission = "gaussian";
    int k = 3;
    int dim = 2;
    int transient = 3;
    int absorbing = 1;
    int max_len = 200;
    int hidden_dim = 5;
    int obs_dim = 10;
    int T = 20;
    std::vector<std::string> known;
};

struct DataConfig {
    std::string source = "synthetic";
    std::size_t train_count = 500;
    std::size_t holdout_count = 0;
    int words_per_doc = 100;
    std::string train_path;
    std::string holdout_path;
    std::string truth_path;
};

struct DirichletConfig {
    std::size_t pseudo_count = 500;
    int pseudo_words = 0;
};

struct DistributedConfig {
    int workers = 3;
    std::size_t sync_every = 500;
    Combine combine = Combine::both;
    AlphaRule alpha = AlphaRule::shard_size;
};

struct ExperimentConfig {
    Family family = Family::mixture;
    Mode mode = Mode::online;
    std::uint64_t seed = 1;
    int repeats = 1;
    int epochs = 1;
    std::size_t batch_size = 1;
    int batch_iterations = 10;
    long long eval_every = 0;  // 0: about 50 evaluations per run
    bool record_wall_time = false;
    double eta0 = 1.0;
    double beta = 0.9;
    ModelShape model;
    DataConfig data;
    DirichletConfig dirichlet;
    DistributedConfig distributed;
    int threads = 1;
    std::vector<std::string> warnings;
};

inline constexpr std::string_view kConfigSchema = R"({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "oem experiment configuration",
  "type": "object",
  "additionalProperties": false,
  "required": ["family", "mode"],
  "properties": {
    "family": {"enum": ["mixture", "hmm", "kalman", "dirichlet"]},
    "mode": {"enum": ["batch", "online", "distributed"]},
    "seed": {"type": "integer", "minimum": 0, "default": 1},
    "repeats": {"type": "integer", "minimum": 1, "default": 1},
    "epochs": {"type": "integer", "minimum": 1, "default": 1},
    "batch_size": {"type": "integer", "minimum": 1, "default": 1},
    "batch_iterations": {"type": "integer", "minimum": 1, "default": 10},
    "eval_every": {"type": "integer", "minimum": 0, "default": 0},
    "record_wall_time": {"type": "boolean", "default": false},
    "schedule": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "eta0": {"type": "number", "exclusiveMinimum": 0, "default": 1.0},
        "beta": {"type": "number", "minimum": 0.5, "maximum": 1, "default": 0.9}
      }
    },
    "model": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "emission": {"enum": ["gaussian", "poisson"], "default": "gaussian"},
        "k": {"type": "integer", "minimum": 1, "default": 3},
        "dim": {"type": "integer", "minimum": 1, "default": 2},
        "transient": {"type": "integer", "minimum": 1, "default": 3},
        "absorbing": {"type": "integer", "minimum": 1, "default": 1},
        "max_len": {"type": "integer", "minimum": 1, "default": 200},
        "hidden_dim": {"type": "integer", "minimum": 1, "default": 5},
        "obs_dim": {"type": "integer", "minimum": 1, "default": 10},
        "T": {"type": "integer", "minimum": 2, "default": 20},
        "known": {"type": "array", "items": {"enum": ["pi1", "V", "A", "C", "Q", "R"]}, "default": []}
      }
    },
    "data": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "source": {"enum": ["synthetic", "csv"], "default": "synthetic"},
        "train_count": {"type": "integer", "minimum": 1, "default": 500},
        "holdout_count": {"type": "integer", "minimum": 0, "default": 0},
        "words_per_doc": {"type": "integer", "minimum": 1, "default": 100},
        "train_path": {"type": "string"},
        "holdout_path": {"type": "string"},
        "truth_path": {"type": "string"}
      }
    },
    "dirichlet": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "pseudo_count": {"type": "integer", "minimum": 1, "default": 500},
        "pseudo_words": {"type": "integer", "minimum": 0, "default": 0}
      }
    },
    "distributed": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "workers": {"type": "integer", "minimum": 1, "default": 3},
        "sync_every": {"type": "integer", "minimum": 1, "default": 500},
        "combine": {"enum": ["entropic", "simple", "both"], "default": "both"},
        "alpha": {"enum": ["shard_size", "uniform"], "default": "shard_size"}
      }
    }
  }
}
)";

namespace detail {

inline void reject_unknown(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    std::set<std::string> keys;
    for (const char* k : allowed) keys.insert(k);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!keys.count(it.key())) throw ConfigError(path + "." + it.key() + ": unknown key");
}

template <class T>
T get_integer(const Json& j, const char* key, const std::string& path, T fallback, long long minimum) {
    if (!j.contains(key)) return fallback;
    const Json& v = j.at(key);
    if (!v.is_number_integer()) throw ConfigError(path + "." + key + ": expected an integer");
    const long long x = v.is_number_unsigned() ? static_cast<long long>(v.get<unsigned long long>()) : v.get<long long>();
    if (x < minimum) throw ConfigError(path + "." + key + ": must be at least " + std::to_string(minimum));
    return static_cast<T>(x);
}

inline double get_number(const Json& j, const char* key, const std::string& path, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw ConfigError(path + "." + key + ": expected a number");
    return j.at(key).get<double>();
}

inline std::string get_enum(const Json& j, const char* key, const std::string& path, const std::string& fallback,
                            std::initializer_list<const char*> choices, bool required = false) {
    if (!j.contains(key)) {
        if (required) throw ConfigError(path + "." + key + ": required");
        return fallback;
    }
    if (!j.at(key).is_string()) throw ConfigError(path + "." + key + ": expected a string");
    const std::string s = j.at(key).get<std::string>();
    std::string options;
    for (const char* c : choices) {
        if (s == c) return s;
        options += options.empty() ? c : std::string("|") + c;
    }
    throw ConfigError(path + "." + key + ": '" + s + "' is not one of " + options);
}

inline std::string get_string(const Json& j, const char* key, const std::string& path) {
    if (!j.contains(key)) return {};
    if (!j.at(key).is_string()) throw ConfigError(path + "." + key + ": expected a string");
    return j.at(key).get<std::string>();
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
    using namespace detail;
    const std::string root = "config";
    reject_unknown(j, root,
                   {"family", "mode", "seed", "repeats", "epochs", "batch_size", "batch_iterations", "eval_every",
                    "record_wall_time", "schedule", "model", "data", "dirichlet", "distributed"});
    ExperimentConfig c;
    const std::string family = get_enum(j, "family", root, "", {"mixture", "hmm", "kalman", "dirichlet"}, true);
    c.family = family == "mixture" ? Family::mixture
             : family == "hmm"     ? Family::hmm
             : family == "kalman"  ? Family::kalman
                                   : Family::dirichlet;
    const std::string mode = get_enum(j, "mode", root, "", {"batch", "online", "distributed"}, true);
    c.mode = mode == "batch" ? Mode::batch : mode == "online" ? Mode::online : Mode::distributed;
    c.seed = get_integer<std::uint64_t>(j, "seed", root, 1, 0);
    c.repeats = get_integer<int>(j, "repeats", root, 1, 1);
    c.epochs = get_integer<int>(j, "epochs", root, 1, 1);
    c.batch_size = get_integer<std::size_t>(j, "batch_size", root, 1, 1);
    c.batch_iterations = get_integer<int>(j, "batch_iterations", root, 10, 1);
    c.eval_every = get_integer<long long>(j, "eval_every", root, 0, 0);
    if (j.contains("record_wall_time")) {
        if (!j.at("record_wall_time").is_boolean()) throw ConfigError("config.record_wall_time: expected a boolean");
        c.record_wall_time = j.at("record_wall_time").get<bool>();
    }

    if (j.contains("schedule")) {
        const Json& s = j.at("schedule");
        reject_unknown(s, "config.schedule", {"eta0", "beta"});
        c.eta0 = get_number(s, "eta0", "config.schedule", c.eta0);
        c.beta = get_number(s, "beta", "config.schedule", c.beta);
    } else if (c.mode != Mode::batch) {
        throw ConfigError("config.schedule: required for online and distributed modes");
    }
    if (!(c.eta0 > 0.0)) throw ConfigError("config.schedule.eta0: must be positive");
    if (c.beta == 0.5)
        c.warnings.push_back("schedule.beta = 0.5 lies on the boundary of (0.5, 1]; accepted, but squared rates are not summable");
    else if (!(c.beta > 0.5 && c.beta <= 1.0))
        throw ConfigError("config.schedule.beta: must lie in (0.5, 1]");

    if (j.contains("model")) {
        const Json& m = j.at("model");
        const std::string p = "config.model";
        reject_unknown(m, p, {"emission", "k", "dim", "transient", "absorbing", "max_len", "hidden_dim", "obs_dim", "T", "known"});
        c.model.emission = get_enum(m, "emission", p, "gaussian", {"gaussian", "poisson"});
        c.model.k = get_integer<int>(m, "k", p, c.model.k, 1);
        c.model.dim = get_integer<int>(m, "dim", p, c.model.dim, 1);
        c.model.transient = get_integer<int>(m, "transient", p, c.model.transient, 1);
        c.model.absorbing = get_integer<int>(m, "absorbing", p, c.model.absorbing, 1);
        c.model.max_len = get_integer<int>(m, "max_len", p, c.model.max_len, 1);
        c.model.hidden_dim = get_integer<int>(m, "hidden_dim", p, c.model.hidden_dim, 1);
        c.model.obs_dim = get_integer<int>(m, "obs_dim", p, c.model.obs_dim, 1);
        c.model.T = get_integer<int>(m, "T", p, c.model.T, 2);
        if (m.contains("known")) {
            const Json& k = m.at("known");
            if (!k.is_array()) throw ConfigError(p + ".known: expected an array");
            for (std::size_t i = 0; i < k.size(); ++i) {
                const std::string name = k[i].is_string() ? k[i].get<std::string>() : "";
                if (name != "pi1" && name != "V" && name != "A" && name != "C" && name != "Q" && name != "R")
                    throw ConfigError(p + ".known[" + std::to_string(i) + "]: expected one of pi1|V|A|C|Q|R");
                c.model.known.push_back(name);
            }
        }
    }
    if (c.family == Family::dirichlet && c.model.dim < 1) throw ConfigError("config.model.dim: must be positive");

    if (j.contains("data")) {
        const Json& d = j.at("data");
        const std::string p = "config.data";
        reject_unknown(d, p, {"source", "train_count", "holdout_count", "words_per_doc", "train_path", "holdout_path", "truth_path"});
        c.data.source = get_enum(d, "source", p, "synthetic", {"synthetic", "csv"});
        c.data.train_count = get_integer<std::size_t>(d, "train_count", p, c.data.train_count, 1);
        c.data.holdout_count = get_integer<std::size_t>(d, "holdout_count", p, c.data.holdout_count, 0);
        c.data.words_per_doc = get_integer<int>(d, "words_per_doc", p, c.data.words_per_doc, 1);
        c.data.train_path = get_string(d, "train_path", p);
        c.data.holdout_path = get_string(d, "holdout_path", p);
        c.data.truth_path = get_string(d, "truth_path", p);
    }
    if (c.data.source == "csv" && c.data.train_path.empty())
        throw ConfigError("config.data.train_path: required when data.source is csv");

    if (j.contains("dirichlet")) {
        const Json& d = j.at("dirichlet");
        reject_unknown(d, "config.dirichlet", {"pseudo_count", "pseudo_words"});
        c.dirichlet.pseudo_count = get_integer<std::size_t>(d, "pseudo_count", "config.dirichlet", c.dirichlet.pseudo_count, 1);
        c.dirichlet.pseudo_words = get_integer<int>(d, "pseudo_words", "config.dirichlet", c.dirichlet.pseudo_words, 0);
    }

    if (j.contains("distributed")) {
        const Json& d = j.at("distributed");
        const std::string p = "config.distributed";
        reject_unknown(d, p, {"workers", "sync_every", "combine", "alpha"});
        c.distributed.workers = get_integer<int>(d, "workers", p, c.distributed.workers, 1);
        c.distributed.sync_every = get_integer<std::size_t>(d, "sync_every", p, c.distributed.sync_every, 1);
        const std::string comb = get_enum(d, "combine", p, "both", {"entropic", "simple", "both"});
        c.distributed.combine = comb == "entropic" ? Combine::entropic : comb == "simple" ? Combine::simple : Combine::both;
        c.distributed.alpha = get_enum(d, "alpha", p, "shard_size", {"shard_size", "uniform"}) == "uniform"
                                  ? AlphaRule::uniform
                                  : AlphaRule::shard_size;
    }
    if (c.mode == Mode::distributed && c.family != Family::mixture)
        throw ConfigError("config.mode: distributed mode is available for the mixture family only");
    if (c.mode == Mode::distributed && !j.contains("distributed"))
        throw ConfigError("config.distributed: required for distributed mode");
    return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_config(j);
}

}  // namespace oem::harness
