#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "charlee/errors.hpp"
#include "charlee/groups.hpp"
#include "charlee/numerics/params.hpp"
#include "charlee/numerics/rng.hpp"
#include "charlee/numerics/tape.hpp"

namespace charlee {

struct EncoderShape {
    std::size_t kernels_per_group = 8;
    std::size_t kernel_length = 9;
};

inline constexpr std::size_t kStatsPerMap = 6;

inline std::string encoder_weight_name(std::size_t g) { return "encoder.g" + std::to_string(g) + ".w"; }
inline std::string encoder_bias_name(std::size_t g) { return "encoder.g" + std::to_string(g) + ".b"; }

/// One kernel bank per channel group: weights [K][|g|][k], bias [K].
inline void add_encoder_params(ParamStore& store, const GroupAssignment& groups, const EncoderShape& shape,
                               RngStream& rng) {
    const std::size_t K = shape.kernels_per_group, k = shape.kernel_length;
    for (std::size_t g = 0; g < groups.n_groups; ++g) {
        const std::size_t in = groups.group_sizes[g];
        store.add_glorot(encoder_weight_name(g), {K, in, k}, in * k, K, rng);
        store.add(encoder_bias_name(g), {K});
    }
}

inline std::size_t state_dim(std::size_t G, const EncoderShape& shape, std::size_t N) {
    return G * shape.kernels_per_group * kStatsPerMap + N + 1;
}

/// Accumulators of one feature map. The d_* vectors hold derivatives of the
/// accumulator with respect to the group's flattened kernel weights followed
/// by the bias.
struct MapStats {
    double max = -std::numeric_limits<double>::infinity();
    double min = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    std::size_t count = 0;
    std::size_t pos_count = 0;
    double pos_sum = 0.0;
    double pos_idx_sum = 0.0;
    std::vector<double> d_max, d_min, d_pos_sum;
};

struct GroupStats {
    std::vector<std::size_t> channels;  // keep-priority order
    std::vector<MapStats> maps;
    std::vector<double> tail;           // |g| x (k - 1), most recent inputs last
    std::vector<double> d_sum;          // shared by every map of the group
    bool frozen = false;
};

/// Streaming convolution statistics. Each group's kernels are applied
/// causally (output t sees inputs t-k+1..t, zeros before the series start);
/// the tail cache carries the k-1 preceding inputs across slice boundaries,
/// so slice-by-slice processing equals a single pass over the prefix.
class RunningStats {
public:
    RunningStats(const GroupAssignment& groups, const EncoderShape& shape, std::size_t series_length,
                 bool track_jacobian = true)
        : shape_(shape), series_length_(series_length), n_channels_(groups.n_channels()), track_(track_jacobian) {
        if (shape.kernel_length == 0 || shape.kernels_per_group == 0) throw ConfigError("encoder shape must be positive");
        const std::size_t k = shape.kernel_length;
        for (std::size_t g = 0; g < groups.n_groups; ++g) {
            GroupStats gs;
            gs.channels = groups.channels_in_group(g);
            gs.maps.resize(shape.kernels_per_group);
            gs.tail.assign(gs.channels.size() * (k - 1), 0.0);
            const std::size_t P = gs.channels.size() * k + 1;
            if (track_) {
                gs.d_sum.assign(P, 0.0);
                for (auto& m : gs.maps) {
                    m.d_max.assign(P, 0.0);
                    m.d_min.assign(P, 0.0);
                    m.d_pos_sum.assign(P, 0.0);
                }
            }
            groups_.push_back(std::move(gs));
        }
    }

    /// `slice` is C x L row-major over all channels; only active groups read it.
    /// Groups left out of `active` are frozen for the rest of the episode.
    void encode_slice(const ParamStore& params, std::span<const double> slice, std::size_t L,
                      const std::vector<bool>& active) {
        if (L == 0) throw InputError("encode_slice: empty slice");
        if (slice.size() != n_channels_ * L) throw InputError("encode_slice: slice shape mismatch");
        if (active.size() != groups_.size()) throw InputError("encode_slice: active set size mismatch");
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            if (!active[g]) {
                groups_[g].frozen = true;
                continue;
            }
            if (groups_[g].frozen) throw InvariantError("encode_slice: group " + std::to_string(g) + " is frozen");
            encode_group(g, params, slice, L);
        }
        time_ += L;
    }

    /// Absolute number of timesteps consumed so far.
    std::size_t time() const noexcept { return time_; }
    std::uint64_t mac_count() const noexcept { return macs_; }
    const std::vector<GroupStats>& groups() const noexcept { return groups_; }
    const EncoderShape& shape() const noexcept { return shape_; }
    std::size_t series_length() const noexcept { return series_length_; }

    /// Six statistics per map: max, min, mean, fraction positive, mean of the
    /// positive values, and mean positive index divided by the series length.
    /// Maps that have seen nothing report zeros.
    std::vector<double> derived() const {
        std::vector<double> out;
        out.reserve(groups_.size() * shape_.kernels_per_group * kStatsPerMap);
        for (const auto& gs : groups_)
            for (const auto& m : gs.maps) {
                if (m.count == 0) {
                    out.insert(out.end(), kStatsPerMap, 0.0);
                    continue;
                }
                const double n = static_cast<double>(m.count);
                const double np = static_cast<double>(m.pos_count);
                out.push_back(m.max);
                out.push_back(m.min);
                out.push_back(m.sum / n);
                out.push_back(np / n);
                out.push_back(m.pos_count ? m.pos_sum / np : 0.0);
                out.push_back(m.pos_count ? m.pos_idx_sum / np / static_cast<double>(series_length_) : 0.0);
            }
        return out;
    }

private:
    void encode_group(std::size_t g, const ParamStore& params, std::span<const double> slice, std::size_t L) {
        auto& gs = groups_[g];
        const std::size_t k = shape_.kernel_length, K = shape_.kernels_per_group, in = gs.channels.size();
        const std::size_t W = L + k - 1;
        const std::size_t P = in * k + 1;
        const auto& w = params.get(encoder_weight_name(g)).values;
        const auto& b = params.get(encoder_bias_name(g)).values;
        if (w.size() != K * in * k || b.size() != K) throw ConfigError("encoder parameters do not match group shape");

        // Extended input: cached tail followed by the new slice, per channel.
        std::vector<double> ext(in * W);
        for (std::size_t i = 0; i < in; ++i) {
            std::copy_n(gs.tail.begin() + static_cast<long>(i * (k - 1)), k - 1, ext.begin() + static_cast<long>(i * W));
            const double* src = slice.data() + gs.channels[i] * L;
            std::copy_n(src, L, ext.begin() + static_cast<long>(i * W + k - 1));
        }

        std::vector<double> y(L);
        for (std::size_t m = 0; m < K; ++m) {
            std::fill(y.begin(), y.end(), b[m]);
            for (std::size_t i = 0; i < in; ++i) {
                const double* xi = ext.data() + i * W;
                for (std::size_t j = 0; j < k; ++j) {
                    const double wij = w[(m * in + i) * k + j];
                    for (std::size_t t = 0; t < L; ++t) y[t] += wij * xi[t + j];
                }
            }
            macs_ += L * in * k;
            auto& ms = gs.maps[m];
            for (std::size_t t = 0; t < L; ++t) {
                const double v = y[t];
                ms.sum += v;
                ++ms.count;
                if (v > ms.max) {
                    ms.max = v;
                    if (track_) patch(ext, in, W, t, ms.d_max);
                }
                if (v < ms.min) {
                    ms.min = v;
                    if (track_) patch(ext, in, W, t, ms.d_min);
                }
                if (v > 0.0) {
                    ++ms.pos_count;
                    ms.pos_sum += v;
                    ms.pos_idx_sum += static_cast<double>(time_ + t);
                    if (track_) add_patch(ext, in, W, t, ms.d_pos_sum);
                }
            }
        }
        if (track_) {
            for (std::size_t i = 0; i < in; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    const double* xi = ext.data() + i * W + j;
                    double s = 0.0;
                    for (std::size_t t = 0; t < L; ++t) s += xi[t];
                    gs.d_sum[i * k + j] += s;
                }
            gs.d_sum[P - 1] += static_cast<double>(L);
        }
        for (std::size_t i = 0; i < in; ++i)
            std::copy_n(ext.begin() + static_cast<long>(i * W + L), k - 1, gs.tail.begin() + static_cast<long>(i * (k - 1)));
    }

    void patch(const std::vector<double>& ext, std::size_t in, std::size_t W, std::size_t t, std::vector<double>& d) const {
        const std::size_t k = shape_.kernel_length;
        for (std::size_t i = 0; i < in; ++i)
            for (std::size_t j = 0; j < k; ++j) d[i * k + j] = ext[i * W + t + j];
        d[in * k] = 1.0;
    }

    void add_patch(const std::vector<double>& ext, std::size_t in, std::size_t W, std::size_t t, std::vector<double>& d) const {
        const std::size_t k = shape_.kernel_length;
        for (std::size_t i = 0; i < in; ++i)
            for (std::size_t j = 0; j < k; ++j) d[i * k + j] += ext[i * W + t + j];
        d[in * k] += 1.0;
    }

    EncoderShape shape_;
    std::size_t series_length_;
    std::size_t n_channels_;
    bool track_;
    std::vector<GroupStats> groups_;
    std::size_t time_ = 0;
    std::uint64_t macs_ = 0;
};

/// Derived statistics, then the action history (N slots, zero-filled beyond
/// the decisions taken so far), then n / N.
inline std::vector<double> state_vector(const RunningStats& stats, std::span<const double> history, std::size_t n,
                                        std::size_t N) {
    if (n < 1 || n > N) throw InputError("state_vector: checkpoint index must lie in [1, N]");
    if (history.size() > N) throw InputError("state_vector: history longer than N");
    auto s = stats.derived();
    for (std::size_t i = 0; i < N; ++i) s.push_back(i < history.size() ? history[i] : 0.0);
    s.push_back(static_cast<double>(n) / static_cast<double>(N));
    return s;
}

/// Records the state vector on a tape so that gradients reaching it flow into
/// the encoder kernels. Only max, min, mean and mean-of-positives carry
/// gradient; the counting statistics are piecewise constant in the weights.
inline Var state_var(Tape& tape, ParamStore& params, const RunningStats& stats, std::span<const double> history,
                     std::size_t n, std::size_t N) {
    auto value = state_vector(stats, history, n, N);
    struct Coeffs {
        std::size_t P;
        std::vector<double> rows;  // per map: d_max, d_min, d_mean, d_mean_pos (4 x P)
    };
    std::vector<Coeffs> coeffs;
    std::vector<Var> wvars, bvars;
    const auto& gstats = stats.groups();
    for (std::size_t g = 0; g < gstats.size(); ++g) {
        const auto& gs = gstats[g];
        Coeffs c;
        c.P = gs.d_sum.size();
        if (c.P == 0) throw StateError("state_var: running stats were built without Jacobian tracking");
        for (const auto& m : gs.maps) {
            const double inv_n = m.count ? 1.0 / static_cast<double>(m.count) : 0.0;
            const double inv_p = m.pos_count ? 1.0 / static_cast<double>(m.pos_count) : 0.0;
            const bool seen = m.count > 0;
            for (std::size_t p = 0; p < c.P; ++p) c.rows.push_back(seen ? m.d_max[p] : 0.0);
            for (std::size_t p = 0; p < c.P; ++p) c.rows.push_back(seen ? m.d_min[p] : 0.0);
            for (std::size_t p = 0; p < c.P; ++p) c.rows.push_back(gs.d_sum[p] * inv_n);
            for (std::size_t p = 0; p < c.P; ++p) c.rows.push_back(m.d_pos_sum[p] * inv_p);
        }
        coeffs.push_back(std::move(c));
        wvars.push_back(tape.param(params.get(encoder_weight_name(g))));
        bvars.push_back(tape.param(params.get(encoder_bias_name(g))));
    }
    const std::size_t K = stats.shape().kernels_per_group;
    return tape.custom(std::move(value), [coeffs = std::move(coeffs), wvars, bvars, K](Tape& t, Var out) {
        const auto& go = t.grad(out);
        std::size_t off = 0;
        for (std::size_t g = 0; g < coeffs.size(); ++g) {
            const auto& c = coeffs[g];
            auto& gw = t.grad(wvars[g]);
            auto& gb = t.grad(bvars[g]);
            const std::size_t per_map = c.P - 1;
            for (std::size_t m = 0; m < K; ++m, off += kStatsPerMap) {
                // stat slots: 0 max, 1 min, 2 mean, 4 mean of positives
                const double sel[4] = {go[off], go[off + 1], go[off + 2], go[off + 4]};
                for (std::size_t r = 0; r < 4; ++r) {
                    if (sel[r] == 0.0) continue;
                    const double* row = c.rows.data() + (m * 4 + r) * c.P;
                    double* gwm = gw.data() + m * per_map;
                    for (std::size_t p = 0; p < per_map; ++p) gwm[p] += sel[r] * row[p];
                    gb[m] += sel[r] * row[per_map];
                }
            }
        }
    });
}

} // namespace charlee
