#pragma once

#include <span>
#include <vector>

#include "charlee/errors.hpp"
#include "charlee/groups.hpp"

namespace charlee {

/// N checkpoints cutting [0, T) into N + 1 contiguous slices.
struct SliceSpec {
    std::size_t n_checkpoints = 0;
    std::vector<std::size_t> offsets;  // N + 2 entries, offsets[0] = 0, offsets.back() = T

    std::size_t n_slices() const noexcept { return n_checkpoints + 1; }
    std::size_t begin(std::size_t s) const { return offsets.at(s); }
    std::size_t end(std::size_t s) const { return offsets.at(s + 1); }
    std::size_t length(std::size_t s) const { return end(s) - begin(s); }
    std::size_t total() const { return offsets.back(); }

    std::vector<std::size_t> lengths() const {
        std::vector<std::size_t> out;
        for (std::size_t s = 0; s < n_slices(); ++s) out.push_back(length(s));
        return out;
    }
};

/// Lengths as equal as possible; the remainder goes to the earliest slices.
inline SliceSpec slice_boundaries(std::size_t T, std::size_t N) {
    if (N < 1) throw ConfigError("need at least one checkpoint");
    if (T < N + 1) throw ConfigError("series of length " + std::to_string(T) + " cannot hold " + std::to_string(N + 1) + " slices");
    SliceSpec spec;
    spec.n_checkpoints = N;
    const std::size_t S = N + 1;
    const std::size_t base = T / S;
    const std::size_t extra = T % S;
    spec.offsets.push_back(0);
    for (std::size_t s = 0; s < S; ++s) spec.offsets.push_back(spec.offsets.back() + base + (s < extra ? 1 : 0));
    return spec;
}

/// Writes mask_value into every entry not observed under the per-slice
/// utilization schedule. Channels are dropped from the end of the keep
/// priority order, one whole group at a time.
inline std::vector<double> mask_apply(std::span<const double> sample, const SliceSpec& slices,
                                      std::span<const double> schedule, const GroupAssignment& groups,
                                      double mask_value = 0.0) {
    const std::size_t C = groups.n_channels();
    const std::size_t T = slices.total();
    if (sample.size() != C * T) throw InputError("mask_apply: sample shape does not match C x T");
    if (schedule.size() != slices.n_slices()) throw InputError("mask_apply: schedule length must equal slice count");
    for (std::size_t s = 1; s < schedule.size(); ++s)
        if (schedule[s] > schedule[s - 1] + 1e-12) throw InvariantError("utilization schedule must be non-increasing");
    std::vector<double> out(sample.begin(), sample.end());
    for (std::size_t s = 0; s < slices.n_slices(); ++s) {
        const std::size_t kept_groups = groups.groups_for_fraction(schedule[s]);
        for (std::size_t c = 0; c < C; ++c) {
            if (groups.group_of_channel[c] < kept_groups) continue;
            for (std::size_t t = slices.begin(s); t < slices.end(s); ++t) out[c * T + t] = mask_value;
        }
    }
    return out;
}

} // namespace charlee
