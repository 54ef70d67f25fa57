#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "charlee/data/slicing.hpp"
#include "charlee/episode.hpp"
#include "charlee/errors.hpp"
#include "charlee/groups.hpp"
#include "charlee/models/classifier.hpp"
#include "charlee/models/encoder.hpp"
#include "charlee/models/heads.hpp"
#include "charlee/numerics/params.hpp"
#include "charlee/numerics/rng.hpp"

namespace charlee {

struct ModelConfig {
    std::size_t n_channels = 0;
    std::size_t length = 0;
    std::size_t n_classes = 0;
    std::size_t n_checkpoints = 4;
    EncoderShape encoder{};
    std::size_t hidden = 64;
    std::size_t classifier_maps = 32;
    std::size_t classifier_kernel = 9;
    /// Beta parameters the filter head starts out producing (before any
    /// input dependence is learned). The default keeps most channels.
    double filter_init_alpha = 9.0;
    double filter_init_beta = 1.05;
};

/// Everything needed to run episodes: hyperparameters, the fixed channel
/// grouping, slice layout, and the trainable parameters of all components.
struct Model {
    ModelConfig config;
    GroupAssignment groups;
    SliceSpec slices;
    std::vector<double> qset;
    nlohmann::json ranking = nlohmann::json::object();
    ParamStore params;
    Mlp filter_head;
    Mlp stop_head;
    Mlp baseline_head;
    ClassifierShape classifier;

    std::size_t state_size() const { return state_dim(groups.n_groups, config.encoder, config.n_checkpoints); }
    std::size_t n_slices() const noexcept { return slices.n_slices(); }
};

namespace detail {

inline void build_heads(Model& m) {
    const std::size_t d = m.state_size(), h = m.config.hidden;
    m.filter_head = Mlp{"filter", {d, h, h, 2}};
    m.stop_head = Mlp{"stop", {d + 1, h, h, 1}};
    m.baseline_head = Mlp{"baseline", {d, h, h, 1}};
    m.classifier = ClassifierShape{m.config.n_channels, m.config.length, m.config.n_classes, m.config.classifier_maps,
                                   m.config.classifier_kernel};
}

} // namespace detail

inline Model create_model(const ModelConfig& cfg, GroupAssignment groups, std::uint64_t seed) {
    if (groups.n_channels() != cfg.n_channels) throw ConfigError("group assignment does not cover every channel");
    if (cfg.n_classes < 2) throw ConfigError("need at least two classes");
    Model m;
    m.config = cfg;
    m.groups = std::move(groups);
    m.slices = slice_boundaries(cfg.length, cfg.n_checkpoints);
    m.qset = quantized_set(m.groups.group_sizes, cfg.n_channels);
    detail::build_heads(m);
    RngStream rng = RngStream(seed).derive("init");
    add_encoder_params(m.params, m.groups, cfg.encoder, rng);
    m.filter_head.init(m.params, rng, 0.1);
    if (!(cfg.filter_init_alpha > 1.0 && cfg.filter_init_beta > 1.0))
        throw ConfigError("initial Beta parameters must exceed 1");
    auto& fb = m.params.get(m.filter_head.bias(m.filter_head.n_layers() - 1)).values;
    fb[0] = std::log(std::expm1(cfg.filter_init_alpha - 1.0));  // inverse of softplus(.) + 1
    fb[1] = std::log(std::expm1(cfg.filter_init_beta - 1.0));
    m.stop_head.init(m.params, rng);
    m.baseline_head.init(m.params, rng);
    add_classifier_params(m.params, m.classifier, rng);
    return m;
}

inline nlohmann::json model_sidecar(const Model& m) {
    const auto& c = m.config;
    return {{"format", "charlee-model"},
            {"version", 1},
            {"n_channels", c.n_channels},
            {"length", c.length},
            {"n_classes", c.n_classes},
            {"n_checkpoints", c.n_checkpoints},
            {"encoder", {{"kernels_per_group", c.encoder.kernels_per_group}, {"kernel_length", c.encoder.kernel_length}}},
            {"hidden", c.hidden},
            {"filter_init", {{"alpha", c.filter_init_alpha}, {"beta", c.filter_init_beta}}},
            {"classifier", {{"maps", c.classifier_maps}, {"kernel_length", c.classifier_kernel}}},
            {"groups",
             {{"n_groups", m.groups.n_groups},
              {"keep_priority", m.groups.keep_priority},
              {"group_of_channel", m.groups.group_of_channel},
              {"group_sizes", m.groups.group_sizes}}},
            {"slice_offsets", m.slices.offsets},
            {"quantized_set", m.qset},
            {"ranking", m.ranking}};
}

/// Rebuilds the model skeleton from a sidecar; parameters are left empty.
inline Model model_from_sidecar(const nlohmann::json& j) {
    if (j.value("format", "") != "charlee-model") throw InputError("not a model sidecar");
    Model m;
    auto& c = m.config;
    c.n_channels = j.at("n_channels").get<std::size_t>();
    c.length = j.at("length").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.n_checkpoints = j.at("n_checkpoints").get<std::size_t>();
    c.encoder.kernels_per_group = j.at("encoder").at("kernels_per_group").get<std::size_t>();
    c.encoder.kernel_length = j.at("encoder").at("kernel_length").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.filter_init_alpha = j.at("filter_init").at("alpha").get<double>();
    c.filter_init_beta = j.at("filter_init").at("beta").get<double>();
    c.classifier_maps = j.at("classifier").at("maps").get<std::size_t>();
    c.classifier_kernel = j.at("classifier").at("kernel_length").get<std::size_t>();
    const auto& g = j.at("groups");
    m.groups.n_groups = g.at("n_groups").get<std::size_t>();
    m.groups.keep_priority = g.at("keep_priority").get<std::vector<std::size_t>>();
    m.groups.group_of_channel = g.at("group_of_channel").get<std::vector<std::size_t>>();
    m.groups.group_sizes = g.at("group_sizes").get<std::vector<std::size_t>>();
    m.slices = slice_boundaries(c.length, c.n_checkpoints);
    m.qset = quantized_set(m.groups.group_sizes, c.n_channels);
    m.ranking = j.value("ranking", nlohmann::json::object());
    detail::build_heads(m);
    return m;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

/// Writes `<stem>.params` and `<stem>.json`.
inline void save_model(const Model& m, const std::filesystem::path& stem) {
    checkpoint::save(m.params, stem.string() + ".params");
    write_text(stem.string() + ".json", model_sidecar(m).dump(2) + "\n");
}

inline Model load_model(const std::filesystem::path& stem) {
    std::ifstream in(stem.string() + ".json");
    if (!in) throw InputError("cannot open " + stem.string() + ".json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed model sidecar: ") + e.what());
    }
    Model m = model_from_sidecar(j);
    m.params = checkpoint::load(stem.string() + ".params");
    return m;
}

} // namespace charlee
