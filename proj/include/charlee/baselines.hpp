#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "charlee/data/dataset.hpp"
#include "charlee/data/transforms.hpp"
#include "charlee/errors.hpp"
#include "charlee/training.hpp"

namespace charlee {

struct ToeeResult {
    double target_savings = 0.0;
    std::size_t kept_length = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> f1;  // per seed, on the test set
    double mean_f1 = 0.0;
};

/// Keeps the first ceil((1 - target_savings) * T) timesteps of every channel
/// and trains a standalone classifier per seed on the truncated data.
inline ToeeResult toee_baseline(const Dataset& train_data, const Dataset& test_data, double target_savings,
                                const ClassifierTrainConfig& base_cfg, std::span<const std::uint64_t> seeds,
                                double val_fraction = 0.2) {
    if (!(target_savings >= 0.0 && target_savings < 1.0)) throw InputError("target savings must lie in [0, 1)");
    if (seeds.empty()) throw ConfigError("toee_baseline needs at least one seed");
    ToeeResult res;
    res.target_savings = target_savings;
    res.kept_length = truncated_length(train_data.length, 1.0 - target_savings);
    const Dataset tr = truncate_to(train_data, res.kept_length);
    const Dataset te = truncate_to(test_data, res.kept_length);
    for (auto seed : seeds) {
        auto cfg = base_cfg;
        cfg.seed = seed;
        const auto split = split_train_val(tr, val_fraction, seed);
        auto clf = train_classifier(split.train, split.val, cfg);
        res.seeds.push_back(seed);
        res.f1.push_back(classifier_f1(clf.params, clf.shape, te));
    }
    double s = 0.0;
    for (double v : res.f1) s += v;
    res.mean_f1 = s / static_cast<double>(res.f1.size());
    return res;
}

/// The prefix fractions used to judge whether a dataset rewards early exit:
/// 0.05, 0.10, ..., 0.95, 1.0.
inline std::vector<double> viability_fractions() {
    std::vector<double> f;
    for (int i = 1; i <= 19; ++i) f.push_back(0.05 * i);
    f.push_back(1.0);
    return f;
}

struct ViabilityRow {
    double fraction = 0.0;
    std::size_t length = 0;
    double accuracy = 0.0;
    double f1 = 0.0;
};

inline std::vector<ViabilityRow> viability_curve(const Dataset& train_data, const Dataset& test_data,
                                                 const ClassifierTrainConfig& cfg, double val_fraction = 0.2) {
    std::vector<ViabilityRow> rows;
    for (double f : viability_fractions()) {
        ViabilityRow row;
        row.fraction = f;
        row.length = truncated_length(train_data.length, f);
        const Dataset tr = truncate_to(train_data, row.length);
        const Dataset te = truncate_to(test_data, row.length);
        const auto split = split_train_val(tr, val_fraction, cfg.seed);
        auto clf = train_classifier(split.train, split.val, cfg);
        std::vector<std::size_t> preds;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < te.n_samples(); ++i) {
            preds.push_back(classifier_predict(clf.params, clf.shape, te.sample(i)));
            correct += preds.back() == te.labels[i];
        }
        row.accuracy = te.n_samples() ? static_cast<double>(correct) / static_cast<double>(te.n_samples()) : 0.0;
        row.f1 = f1_macro(preds, te.labels, te.n_classes());
        rows.push_back(row);
    }
    return rows;
}

} // namespace charlee
