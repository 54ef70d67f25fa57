#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "charlee/data/synthetic.hpp"
#include "charlee/errors.hpp"
#include "charlee/ranking.hpp"
#include "charlee/training.hpp"

namespace charlee {

/// Name of the environment variable holding the default output root.
inline constexpr const char* kOutputRootEnv = "CHARLEE_OUT";

struct DatasetConfig {
    std::string name = "synthetic";
    /// Empty train path selects the built-in synthetic generator.
    std::string train_path;
    std::string test_path;
    /// Applied to file datasets only; the synthetic generator already emits
    /// the scale its class codes are defined in.
    bool znormalize = true;
    SyntheticSpec synthetic{};

    bool is_synthetic() const noexcept { return train_path.empty(); }
    bool operator==(const DatasetConfig& o) const {
        return name == o.name && train_path == o.train_path && test_path == o.test_path && znormalize == o.znormalize &&
               synthetic.n_per_class == o.synthetic.n_per_class && synthetic.noise_std == o.synthetic.noise_std &&
               synthetic.seed == o.synthetic.seed;
    }
};

struct ModelHyper {
    std::size_t hidden = 64;
    std::size_t encoder_kernels = 8;
    std::size_t encoder_kernel_length = 9;
    std::size_t classifier_maps = 32;
    std::size_t classifier_kernel = 9;
    bool operator==(const ModelHyper&) const = default;
};

/// Settings for one experiment. JSON keys mirror the field names; unknown keys
/// are rejected so a typo cannot silently fall back to a default.
struct RunConfig {
    DatasetConfig dataset;
    double delta = 0.2;
    /// Unset: 3 for the synthetic benchmark (its four slices), 4 otherwise.
    std::optional<std::size_t> n_checkpoints;
    /// Unset: min(C, 10).
    std::optional<std::size_t> n_groups;
    double w_last = 0.1;
    double gamma = 0.99;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::size_t epochs = 100;
    std::size_t minibatch = 32;
    double learning_rate = 1e-3;
    double val_fraction = 0.2;
    double mask_value = 0.0;
    ModelHyper model;
    /// Truncation savings for the time-only baseline. Unset: match the mean
    /// savings of the evaluated runs for the same delta.
    std::optional<double> toee_target_savings;
    std::optional<std::string> output_dir;

    bool operator==(const RunConfig&) const = default;

    std::size_t checkpoints() const { return n_checkpoints.value_or(dataset.is_synthetic() ? 3 : 4); }
    std::size_t groups_for(std::size_t n_channels) const { return n_groups.value_or(default_group_count(n_channels)); }

    void validate() const {
        if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
        if (!(w_last > 0.0 && w_last <= 1.0)) throw ConfigError("w_last must lie in (0, 1]");
        if (seeds.empty()) throw ConfigError("at least one seed is required");
        if (epochs == 0 || minibatch == 0) throw ConfigError("epochs and minibatch must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
        if (n_checkpoints && *n_checkpoints == 0) throw ConfigError("n_checkpoints must be positive");
        if (n_groups && *n_groups == 0) throw ConfigError("n_groups must be positive");
        if (toee_target_savings && !(*toee_target_savings >= 0.0 && *toee_target_savings < 1.0))
            throw ConfigError("toee_target_savings must lie in [0, 1)");
        if (!dataset.is_synthetic() && dataset.test_path.empty()) throw ConfigError("dataset.test is required with dataset.train");
        if (dataset.is_synthetic() && !dataset.test_path.empty()) throw ConfigError("dataset.test given without dataset.train");
        if (dataset.name.empty() || dataset.name.find('/') != std::string::npos)
            throw ConfigError("dataset.name must be a non-empty plain name");
        if (dataset.synthetic.n_per_class == 0) throw ConfigError("synthetic.n_per_class must be positive");
        if (!(dataset.synthetic.noise_std >= 0.0)) throw ConfigError("synthetic.noise_std must be non-negative");
    }

    TrainConfig train_config(std::uint64_t seed) const {
        TrainConfig t;
        t.delta = delta;
        t.gamma = gamma;
        t.epochs = epochs;
        t.minibatch = minibatch;
        t.learning_rate = learning_rate;
        t.seed = seed;
        t.val_fraction = val_fraction;
        t.mask_value = mask_value;
        return t;
    }

    ClassifierTrainConfig classifier_config(std::uint64_t seed) const {
        ClassifierTrainConfig c;
        c.epochs = epochs;
        c.minibatch = minibatch;
        c.learning_rate = learning_rate;
        c.seed = seed;
        c.maps = model.classifier_maps;
        c.kernel_length = model.classifier_kernel;
        return c;
    }
};

namespace detail {

template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("bad value for '") + key + "'");
    }
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, std::optional<T>& out) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
        out.reset();
        return;
    }
    T v{};
    read_field(j, key, v);
    out = v;
}

} // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
    const auto& d = c.dataset;
    return {{"dataset",
             {{"name", d.name},
              {"train", d.train_path},
              {"test", d.test_path},
              {"znormalize", d.znormalize},
              {"synthetic",
               {{"n_per_class", d.synthetic.n_per_class}, {"noise_std", d.synthetic.noise_std}, {"seed", d.synthetic.seed}}}}},
            {"delta", c.delta},
            {"n_checkpoints", detail::opt_json(c.n_checkpoints)},
            {"n_groups", detail::opt_json(c.n_groups)},
            {"w_last", c.w_last},
            {"gamma", c.gamma},
            {"seeds", c.seeds},
            {"epochs", c.epochs},
            {"minibatch", c.minibatch},
            {"learning_rate", c.learning_rate},
            {"val_fraction", c.val_fraction},
            {"mask_value", c.mask_value},
            {"model",
             {{"hidden", c.model.hidden},
              {"encoder_kernels", c.model.encoder_kernels},
              {"encoder_kernel_length", c.model.encoder_kernel_length},
              {"classifier_maps", c.model.classifier_maps},
              {"classifier_kernel", c.model.classifier_kernel}}},
            {"toee_target_savings", detail::opt_json(c.toee_target_savings)},
            {"output_dir", detail::opt_json(c.output_dir)}};
}

/// Missing keys keep their defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::check_keys(j,
                       {"dataset", "delta", "n_checkpoints", "n_groups", "w_last", "gamma", "seeds", "epochs", "minibatch",
                        "learning_rate", "val_fraction", "mask_value", "model", "toee_target_savings", "output_dir"},
                       "config");
    RunConfig c;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::check_keys(d, {"name", "train", "test", "znormalize", "synthetic"}, "dataset");
        detail::read_field(d, "name", c.dataset.name);
        detail::read_field(d, "train", c.dataset.train_path);
        detail::read_field(d, "test", c.dataset.test_path);
        detail::read_field(d, "znormalize", c.dataset.znormalize);
        if (d.contains("synthetic")) {
            const auto& s = d.at("synthetic");
            detail::check_keys(s, {"n_per_class", "noise_std", "seed"}, "dataset.synthetic");
            detail::read_field(s, "n_per_class", c.dataset.synthetic.n_per_class);
            detail::read_field(s, "noise_std", c.dataset.synthetic.noise_std);
            detail::read_field(s, "seed", c.dataset.synthetic.seed);
        }
    }
    detail::read_field(j, "delta", c.delta);
    detail::read_optional(j, "n_checkpoints", c.n_checkpoints);
    detail::read_optional(j, "n_groups", c.n_groups);
    detail::read_field(j, "w_last", c.w_last);
    detail::read_field(j, "gamma", c.gamma);
    detail::read_field(j, "seeds", c.seeds);
    detail::read_field(j, "epochs", c.epochs);
    detail::read_field(j, "minibatch", c.minibatch);
    detail::read_field(j, "learning_rate", c.learning_rate);
    detail::read_field(j, "val_fraction", c.val_fraction);
    detail::read_field(j, "mask_value", c.mask_value);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::check_keys(m, {"hidden", "encoder_kernels", "encoder_kernel_length", "classifier_maps", "classifier_kernel"},
                           "model");
        detail::read_field(m, "hidden", c.model.hidden);
        detail::read_field(m, "encoder_kernels", c.model.encoder_kernels);
        detail::read_field(m, "encoder_kernel_length", c.model.encoder_kernel_length);
        detail::read_field(m, "classifier_maps", c.model.classifier_maps);
        detail::read_field(m, "classifier_kernel", c.model.classifier_kernel);
    }
    detail::read_optional(j, "toee_target_savings", c.toee_target_savings);
    detail::read_optional(j, "output_dir", c.output_dir);
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

inline void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config " + path.string());
    out << to_json(c).dump(2) << "\n";
}

/// Config value, then the CHARLEE_OUT environment variable, then "runs".
inline std::filesystem::path output_root(const RunConfig& c) {
    if (c.output_dir) return *c.output_dir;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    return "runs";
}

} // namespace charlee
