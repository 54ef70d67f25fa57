#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "charlee/errors.hpp"

namespace charlee {

/// Channels split into contiguous blocks of the keep-priority order. Group 0
/// is kept longest, group G-1 is dropped first.
struct GroupAssignment {
    std::size_t n_groups = 0;
    std::vector<std::size_t> keep_priority;     // channel indices, kept-longest first
    std::vector<std::size_t> group_of_channel;  // length C
    std::vector<std::size_t> group_sizes;       // length G

    std::size_t n_channels() const noexcept { return group_of_channel.size(); }

    std::vector<std::size_t> channels_in_group(std::size_t g) const {
        std::vector<std::size_t> out;
        for (auto c : keep_priority)
            if (group_of_channel[c] == g) out.push_back(c);
        return out;
    }

    /// Channel fraction kept when the first k groups are kept.
    double fraction_for_groups(std::size_t k) const {
        std::size_t kept = 0;
        for (std::size_t g = 0; g < k; ++g) kept += group_sizes.at(g);
        return static_cast<double>(kept) / static_cast<double>(n_channels());
    }

    /// Inverse of fraction_for_groups; throws if the fraction is not a group boundary.
    std::size_t groups_for_fraction(double u) const {
        for (std::size_t k = 0; k <= n_groups; ++k)
            if (std::abs(fraction_for_groups(k) - u) < 1e-9) return k;
        throw InvariantError("fraction " + std::to_string(u) + " is not a channel-group boundary");
    }
};

/// All channels in one group each, in the given keep order.
inline GroupAssignment singleton_groups(std::vector<std::size_t> keep_priority) {
    GroupAssignment g;
    g.n_groups = keep_priority.size();
    g.group_of_channel.assign(keep_priority.size(), 0);
    for (std::size_t i = 0; i < keep_priority.size(); ++i) g.group_of_channel[keep_priority[i]] = i;
    g.group_sizes.assign(keep_priority.size(), 1);
    g.keep_priority = std::move(keep_priority);
    return g;
}

} // namespace charlee
