#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "charlee/errors.hpp"

namespace charlee {

/// Equal-length multivariate series, stored sample-major then channel-major:
/// values[(i * channels + c) * length + t].
struct Dataset {
    std::string name;
    std::size_t n_channels = 0;
    std::size_t length = 0;
    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::vector<std::string> class_names;
    std::vector<std::string> channel_names;

    std::size_t n_samples() const noexcept { return labels.size(); }
    std::size_t n_classes() const noexcept { return class_names.size(); }
    std::size_t sample_size() const noexcept { return n_channels * length; }

    std::span<const double> sample(std::size_t i) const {
        return {values.data() + i * sample_size(), sample_size()};
    }
    std::span<double> sample(std::size_t i) { return {values.data() + i * sample_size(), sample_size()}; }

    double at(std::size_t i, std::size_t c, std::size_t t) const {
        return values[(i * n_channels + c) * length + t];
    }

    /// Empty dataset with the same shape metadata.
    Dataset like() const {
        Dataset d;
        d.name = name;
        d.n_channels = n_channels;
        d.length = length;
        d.class_names = class_names;
        d.channel_names = channel_names;
        return d;
    }

    void push_back(std::span<const double> s, std::size_t label) {
        if (s.size() != sample_size()) throw InputError("sample shape mismatch");
        values.insert(values.end(), s.begin(), s.end());
        labels.push_back(label);
    }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset d = like();
        d.values.reserve(idx.size() * sample_size());
        for (auto i : idx) d.push_back(sample(i), labels.at(i));
        return d;
    }

    void validate() const {
        if (n_classes() < 2) throw InputError("dataset needs at least 2 classes");
        if (n_channels == 0 || length == 0) throw InputError("dataset has empty dimensions");
        if (values.size() != n_samples() * sample_size()) throw InputError("dataset values do not match its shape");
        if (!channel_names.empty() && channel_names.size() != n_channels)
            throw InputError("channel name count does not match channels");
        for (auto l : labels)
            if (l >= n_classes()) throw InputError("label out of range");
        for (double v : values)
            if (!std::isfinite(v)) throw InputError("dataset contains non-finite values");
    }
};

inline std::vector<std::string> default_channel_names(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < n; ++c) names.push_back("dim_" + std::to_string(c));
    return names;
}

} // namespace charlee
