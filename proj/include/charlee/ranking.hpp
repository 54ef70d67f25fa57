#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "charlee/data/dataset.hpp"
#include "charlee/data/slicing.hpp"
#include "charlee/errors.hpp"
#include "charlee/groups.hpp"

namespace charlee {

/// Per-channel class separation on the first `prefix` timesteps: the sum over
/// unordered class pairs of the Euclidean distance between the two class-mean
/// series of that channel.
inline std::vector<double> centroid_scores(const Dataset& d, std::size_t prefix) {
    if (prefix == 0 || prefix > d.length) throw InputError("centroid_scores: prefix must lie in [1, T]");
    const std::size_t C = d.n_channels, K = d.n_classes(), T = d.length;
    std::vector<double> means(K * C * prefix, 0.0);
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < d.n_samples(); ++i) {
        const auto k = d.labels[i];
        ++counts[k];
        const auto s = d.sample(i);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < prefix; ++t) means[(k * C + c) * prefix + t] += s[c * T + t];
    }
    std::vector<std::size_t> present;
    for (std::size_t k = 0; k < K; ++k) {
        if (counts[k] == 0) continue;
        present.push_back(k);
        for (std::size_t j = 0; j < C * prefix; ++j) means[k * C * prefix + j] /= static_cast<double>(counts[k]);
    }
    if (present.size() < 2) throw InputError("centroid_scores: need at least two classes present");
    std::vector<double> score(C, 0.0);
    for (std::size_t a = 0; a < present.size(); ++a)
        for (std::size_t b = a + 1; b < present.size(); ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const double* ma = means.data() + (present[a] * C + c) * prefix;
                const double* mb = means.data() + (present[b] * C + c) * prefix;
                double ss = 0.0;
                for (std::size_t t = 0; t < prefix; ++t) ss += (ma[t] - mb[t]) * (ma[t] - mb[t]);
                score[c] += std::sqrt(ss);
            }
    return score;
}

struct ChannelRanking {
    std::vector<std::vector<double>> per_checkpoint_scores;  // N x C, raw
    std::vector<std::vector<double>> normalized_scores;      // N x C, min-max per checkpoint
    std::vector<double> weights;                             // N
    std::vector<double> weighted_scores;                     // C
    std::vector<std::size_t> keep_priority;                  // kept-longest first

    std::size_t n_channels() const noexcept { return weighted_scores.size(); }
};

/// 1 at the first checkpoint, w_last at the last, linear in between.
inline std::vector<double> checkpoint_weights(std::size_t N, double w_last) {
    std::vector<double> w(N, 1.0);
    for (std::size_t n = 1; n < N; ++n)
        w[n] = 1.0 + (w_last - 1.0) * static_cast<double>(n) / static_cast<double>(N - 1);
    return w;
}

/// Builds the ranking from raw per-checkpoint scores (rows = checkpoints).
/// Highest weighted score is dropped first, so keep order is ascending,
/// with ties broken by channel index.
inline ChannelRanking aggregate_scores(std::vector<std::vector<double>> raw, double w_last) {
    if (raw.empty() || raw.front().empty()) throw InputError("aggregate_scores: empty score matrix");
    ChannelRanking r;
    const std::size_t N = raw.size(), C = raw.front().size();
    r.weights = checkpoint_weights(N, w_last);
    r.weighted_scores.assign(C, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        if (raw[n].size() != C) throw InputError("aggregate_scores: ragged score matrix");
        const auto [lo, hi] = std::minmax_element(raw[n].begin(), raw[n].end());
        const double span = *hi - *lo;
        std::vector<double> norm(C, 0.0);
        for (std::size_t c = 0; c < C; ++c) norm[c] = span > 0.0 ? (raw[n][c] - *lo) / span : 0.0;
        for (std::size_t c = 0; c < C; ++c) r.weighted_scores[c] += r.weights[n] * norm[c];
        r.normalized_scores.push_back(std::move(norm));
    }
    r.per_checkpoint_scores = std::move(raw);
    r.keep_priority.resize(C);
    std::iota(r.keep_priority.begin(), r.keep_priority.end(), std::size_t{0});
    std::stable_sort(r.keep_priority.begin(), r.keep_priority.end(),
                     [&](std::size_t a, std::size_t b) { return r.weighted_scores[a] < r.weighted_scores[b]; });
    return r;
}

/// Scores every checkpoint prefix (first slice, first two slices, ...) and
/// aggregates them with linearly decaying weights.
inline ChannelRanking weighted_rank(const Dataset& d, const SliceSpec& slices, double w_last = 0.1) {
    if (slices.total() != d.length) throw InputError("weighted_rank: slice spec does not match series length");
    std::vector<std::vector<double>> raw;
    for (std::size_t n = 1; n <= slices.n_checkpoints; ++n) raw.push_back(centroid_scores(d, slices.begin(n)));
    return aggregate_scores(std::move(raw), w_last);
}

/// Ordinal rank (0 = most discriminative) of each channel at every checkpoint.
inline std::vector<std::vector<std::size_t>> ordinal_ranks(const ChannelRanking& r) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& row : r.per_checkpoint_scores) {
        std::vector<std::size_t> order(row.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
        std::vector<std::size_t> rank(row.size());
        for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
        out.push_back(std::move(rank));
    }
    return out;
}

/// Contiguous blocks of the keep order; sizes differ by at most one and the
/// larger blocks come first.
inline GroupAssignment group_channels(const ChannelRanking& r, std::size_t G) {
    const std::size_t C = r.keep_priority.size();
    if (G < 1 || G > C) throw ConfigError("group count must lie in [1, C]");
    GroupAssignment g;
    g.n_groups = G;
    g.keep_priority = r.keep_priority;
    g.group_of_channel.assign(C, 0);
    for (std::size_t k = 0; k < G; ++k) g.group_sizes.push_back(C / G + (k < C % G ? 1 : 0));
    std::size_t pos = 0;
    for (std::size_t k = 0; k < G; ++k)
        for (std::size_t j = 0; j < g.group_sizes[k]; ++j) g.group_of_channel[r.keep_priority[pos++]] = k;
    return g;
}

inline std::size_t default_group_count(std::size_t C) { return std::min<std::size_t>(C, 10); }

inline nlohmann::json ranking_report(const ChannelRanking& r, const GroupAssignment& g) {
    std::vector<std::vector<std::size_t>> groups(g.n_groups);
    for (std::size_t k = 0; k < g.n_groups; ++k) groups[k] = g.channels_in_group(k);
    return {{"keep_priority", r.keep_priority},
            {"weighted_scores", r.weighted_scores},
            {"per_checkpoint_scores", r.per_checkpoint_scores},
            {"normalized_scores", r.normalized_scores},
            {"ordinal_ranks", ordinal_ranks(r)},
            {"weights", r.weights},
            {"groups", groups},
            {"group_sizes", g.group_sizes}};
}

} // namespace charlee
