#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "charlee/data/dataset.hpp"
#include "charlee/errors.hpp"
#include "charlee/numerics/rng.hpp"

namespace charlee {

/// Per sample and channel: zero mean, unit (population) std. Channels with
/// std < 1e-8 become all-zero.
inline Dataset znormalize(const Dataset& in) {
    Dataset out = in;
    const std::size_t T = in.length;
    for (std::size_t i = 0; i < in.n_samples(); ++i) {
        auto s = out.sample(i);
        for (std::size_t c = 0; c < in.n_channels; ++c) {
            double* row = s.data() + c * T;
            double mean = 0.0;
            for (std::size_t t = 0; t < T; ++t) mean += row[t];
            mean /= static_cast<double>(T);
            double var = 0.0;
            for (std::size_t t = 0; t < T; ++t) var += (row[t] - mean) * (row[t] - mean);
            const double sd = std::sqrt(var / static_cast<double>(T));
            for (std::size_t t = 0; t < T; ++t) row[t] = sd < 1e-8 ? 0.0 : (row[t] - mean) / sd;
        }
    }
    return out;
}

struct TrainValSplit {
    Dataset train;
    Dataset val;
    std::vector<std::size_t> train_index;
    std::vector<std::size_t> val_index;
    std::vector<std::string> warnings;
};

/// Stratified split. Each class with n >= 2 samples contributes
/// clamp(round(fraction * n), 1, n - 1) samples to validation; smaller classes
/// stay in train with a warning. Both sides keep the original sample order.
inline TrainValSplit split_train_val(const Dataset& d, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw InputError("validation fraction must lie in (0, 1)");
    RngStream rng = RngStream(seed).derive("split");
    std::vector<bool> is_val(d.n_samples(), false);
    TrainValSplit out;
    for (std::size_t k = 0; k < d.n_classes(); ++k) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < d.n_samples(); ++i)
            if (d.labels[i] == k) idx.push_back(i);
        if (idx.empty()) continue;
        if (idx.size() < 2) {
            out.warnings.push_back("class '" + d.class_names[k] + "' has fewer than 2 samples; kept in train");
            continue;
        }
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        const auto n = static_cast<long>(idx.size());
        const long take = std::clamp(std::lround(fraction * static_cast<double>(n)), 1L, n - 1);
        for (long j = 0; j < take; ++j) is_val[idx[static_cast<std::size_t>(j)]] = true;
    }
    for (std::size_t i = 0; i < d.n_samples(); ++i) (is_val[i] ? out.val_index : out.train_index).push_back(i);
    out.train = d.subset(out.train_index);
    out.val = d.subset(out.val_index);
    return out;
}

/// Number of timesteps kept by a prefix fraction: ceil(fraction * T), never 0.
inline std::size_t truncated_length(std::size_t T, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0 + 1e-12) throw InputError("truncation fraction must lie in (0, 1]");
    const auto L = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(T) - 1e-9));
    return std::clamp<std::size_t>(L, 1, T);
}

inline Dataset truncate_to(const Dataset& d, std::size_t L) {
    if (L == 0 || L > d.length) throw InputError("truncated length must lie in [1, T]");
    Dataset out = d.like();
    out.length = L;
    out.values.reserve(d.n_samples() * d.n_channels * L);
    for (std::size_t i = 0; i < d.n_samples(); ++i)
        for (std::size_t c = 0; c < d.n_channels; ++c)
            for (std::size_t t = 0; t < L; ++t) out.values.push_back(d.at(i, c, t));
    out.labels = d.labels;
    return out;
}

/// Keeps the first ceil(fraction * T) timesteps of every sample.
inline Dataset truncate(const Dataset& d, double fraction) { return truncate_to(d, truncated_length(d.length, fraction)); }

} // namespace charlee
