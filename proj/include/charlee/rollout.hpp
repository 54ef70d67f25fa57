#pragma once

#include <span>
#include <vector>

#include "charlee/data/slicing.hpp"
#include "charlee/models/model.hpp"

namespace charlee {

/// Copies slice s of a C x T sample into a C x L buffer.
inline std::vector<double> slice_values(std::span<const double> sample, const SliceSpec& slices, std::size_t C,
                                        std::size_t s) {
    const std::size_t T = slices.total(), b = slices.begin(s), L = slices.length(s);
    std::vector<double> out(C * L);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < L; ++t) out[c * L + t] = sample[c * T + b + t];
    return out;
}

/// Active-group mask for a kept channel fraction.
inline std::vector<bool> active_groups(const GroupAssignment& groups, double fraction) {
    const std::size_t k = groups.groups_for_fraction(fraction);
    std::vector<bool> active(groups.n_groups, false);
    for (std::size_t g = 0; g < k; ++g) active[g] = true;
    return active;
}

/// Utilization schedule that keeps the first `n` entries and zeroes the rest.
inline std::vector<double> truncated_schedule(std::span<const double> utilization, std::size_t n) {
    std::vector<double> u(utilization.begin(), utilization.end());
    for (std::size_t s = n; s < u.size(); ++s) u[s] = 0.0;
    return u;
}

inline std::vector<double> masked_input(const Model& m, std::span<const double> sample, std::span<const double> schedule,
                                        double mask_value = 0.0) {
    return mask_apply(sample, m.slices, schedule, m.groups, mask_value);
}

} // namespace charlee
