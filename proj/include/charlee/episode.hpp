#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "charlee/errors.hpp"
#include "charlee/groups.hpp"

namespace charlee {

using BigInt = boost::multiprecision::cpp_int;

inline constexpr double kFractionTol = 1e-9;

/// {0} plus the kept-channel fraction after each additional group, ascending.
inline std::vector<double> quantized_set(std::span<const std::size_t> group_sizes, std::size_t C) {
    const std::size_t total = std::accumulate(group_sizes.begin(), group_sizes.end(), std::size_t{0});
    if (C == 0 || total != C) throw ConfigError("group sizes must sum to the channel count");
    std::vector<double> q{0.0};
    std::size_t cum = 0;
    for (auto s : group_sizes) {
        cum += s;
        q.push_back(static_cast<double>(cum) / static_cast<double>(C));
    }
    return q;
}

/// Scales the policy's draw by the currently kept fraction and snaps the
/// product to the nearest grid point; exact ties go to the smaller fraction.
inline double apply_filter_action(double kept, double raw_sample, std::span<const double> qset) {
    const bool on_grid = std::any_of(qset.begin(), qset.end(), [&](double q) { return std::abs(q - kept) < kFractionTol; });
    if (!on_grid) throw InvariantError("kept fraction " + std::to_string(kept) + " is not in the quantized set");
    if (!(raw_sample >= 0.0 && raw_sample <= 1.0)) throw InputError("filter draw must lie in [0, 1]");
    const double product = raw_sample * kept;
    double best = qset.front();
    double best_d = std::abs(product - best);
    for (double q : qset) {
        const double dq = std::abs(product - q);
        if (dq < best_d - 1e-12) {
            best = q;
            best_d = dq;
        }
    }
    return std::min(best, kept);
}

/// Sum of per-slice utilization, optionally weighted per slice.
inline double inference_cost(std::span<const double> utilization, std::span<const double> weights = {}) {
    if (!weights.empty() && weights.size() != utilization.size()) throw InputError("cost weights must match slice count");
    double c = 0.0;
    for (std::size_t s = 0; s < utilization.size(); ++s) c += utilization[s] * (weights.empty() ? 1.0 : weights[s]);
    return c;
}

inline double savings_fraction(double cost, std::size_t S) {
    return (static_cast<double>(S) - cost) / static_cast<double>(S);
}

inline double savings_fraction(std::span<const double> utilization) {
    return savings_fraction(inference_cost(utilization), utilization.size());
}

/// Linear map of cost in [1, S] onto [+1, -1].
inline double savings_reward(double cost, std::size_t S) {
    if (S < 2) throw ConfigError("savings reward needs at least two slices");
    const double s = static_cast<double>(S);
    if (cost < 1.0 - 1e-9 || cost > s + 1e-9) throw InvariantError("cost outside [1, S]");
    return 1.0 - 2.0 * (cost - 1.0) / (s - 1.0);
}

struct RewardBreakdown {
    double r_class = 0.0;
    double r_savings = 0.0;
    double delta = 0.0;
    double total = 0.0;
};

inline RewardBreakdown total_reward(bool correct, double cost, std::size_t S, double delta) {
    if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("savings factor must lie in [0, 1]");
    RewardBreakdown r;
    r.r_class = correct ? 1.0 : -1.0;
    r.r_savings = savings_reward(cost, S);
    r.delta = delta;
    r.total = (1.0 - delta) * r.r_class + delta * r.r_savings;
    return r;
}

enum class ExitReason { running, filtered_out, stopped, exhausted };

inline const char* to_string(ExitReason r) {
    switch (r) {
    case ExitReason::running: return "running";
    case ExitReason::filtered_out: return "filtered_out";
    case ExitReason::stopped: return "stopped";
    case ExitReason::exhausted: return "exhausted";
    }
    return "?";
}

/// Checkpoint-by-checkpoint bookkeeping of one sample. The first slice is
/// always fully observed; each step() consumes the decision made at the
/// next checkpoint.
class Episode {
public:
    Episode(std::size_t n_slices, std::vector<double> qset) : qset_(std::move(qset)), utilization_(n_slices, 0.0) {
        if (n_slices < 2) throw ConfigError("an episode needs at least two slices");
        utilization_[0] = 1.0;
    }

    /// Applies the decision at the next checkpoint.
    void step(double snapped_fraction, bool stop) {
        if (terminal()) throw StateError("step() on a terminal episode");
        if (snapped_fraction > kept() + kFractionTol) throw InvariantError("channel fraction may not increase");
        ++checkpoint_;
        if (stop) {
            reason_ = ExitReason::stopped;
            return;
        }
        if (snapped_fraction < kFractionTol) {
            reason_ = ExitReason::filtered_out;
            return;
        }
        utilization_[checkpoint_] = snapped_fraction;
        if (checkpoint_ == n_checkpoints()) reason_ = ExitReason::exhausted;
    }

    bool terminal() const noexcept { return reason_ != ExitReason::running; }
    ExitReason exit_reason() const noexcept { return reason_; }
    /// Checkpoints passed so far (1-based index of the last decision).
    std::size_t checkpoint() const noexcept { return checkpoint_; }
    std::size_t n_checkpoints() const noexcept { return utilization_.size() - 1; }
    std::size_t n_slices() const noexcept { return utilization_.size(); }
    /// Fraction of channels observed in the latest observed slice.
    double kept() const noexcept { return utilization_[checkpoint_]; }
    const std::vector<double>& utilization() const noexcept { return utilization_; }
    const std::vector<double>& qset() const noexcept { return qset_; }
    double cost() const { return inference_cost(utilization_); }
    double savings() const { return savings_fraction(cost(), n_slices()); }

private:
    std::vector<double> qset_;
    std::vector<double> utilization_;
    std::size_t checkpoint_ = 0;
    ExitReason reason_ = ExitReason::running;
};

/// (sum_{i=0}^{C} binom(C, i))^T channel-subset paths without constraints.
inline BigInt count_paths_unconstrained(std::size_t C, std::size_t T) {
    if (C < 1 || T < 1) throw InputError("C and T must be positive");
    BigInt per_step = 0;
    BigInt binom = 1;
    for (std::size_t i = 0; i <= C; ++i) {
        per_step += binom;
        binom = binom * (C - i) / (i + 1);
    }
    BigInt out = 1;
    for (std::size_t t = 0; t < T; ++t) out *= per_step;
    return out;
}

/// Non-increasing kept-group sequences k_1 >= ... >= k_N with k_n in [0, G].
inline BigInt count_paths_constrained(std::size_t G, std::size_t N) {
    if (G < 1 || N < 1) throw InputError("G and N must be positive");
    // ways[k] = sequences so far ending at k kept groups
    std::vector<BigInt> ways(G + 1, 1);
    for (std::size_t n = 1; n < N; ++n) {
        std::vector<BigInt> next(G + 1, 0);
        BigInt acc = 0;
        for (std::size_t k = G + 1; k-- > 0;) {
            acc += ways[k];
            next[k] = acc;
        }
        ways = std::move(next);
    }
    BigInt total = 0;
    for (const auto& w : ways) total += w;
    return total;
}

} // namespace charlee
