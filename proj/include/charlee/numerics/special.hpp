#pragma once

#include <algorithm>
#include <cmath>

#include "charlee/errors.hpp"
#include "charlee/numerics/rng.hpp"

namespace charlee {

/// psi(x) for x > 0. Shifts x up to >= 6 with psi(x) = psi(x+1) - 1/x, then
/// applies the asymptotic expansion with Bernoulli terms up to x^-14.
inline double digamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("digamma: argument must be positive and finite");
    double shift = 0.0;
    while (x < 6.0) {
        shift -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // B_2k / (2k) for k = 1..7
    const double series =
        inv2 * (1.0 / 12.0 -
        inv2 * (1.0 / 120.0 -
        inv2 * (1.0 / 252.0 -
        inv2 * (1.0 / 240.0 -
        inv2 * (1.0 / 132.0 -
        inv2 * (691.0 / 32760.0 -
        inv2 * (1.0 / 12.0)))))));
    return shift + std::log(x) - 0.5 * inv - series;
}

inline double log_beta_fn(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

inline constexpr double kBetaClamp = 1e-6;

/// Draw from Beta(alpha, beta) as X / (X + Y) with independent gammas, clamped
/// to [1e-6, 1 - 1e-6] so the log-density stays finite.
inline double beta_sample(double alpha, double beta, RngStream& rng) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw DomainError("beta_sample: parameters must be positive");
    const double x = rng.gamma(alpha);
    const double y = rng.gamma(beta);
    const double s = x + y;
    const double v = s > 0.0 ? x / s : 0.5;
    return std::clamp(v, kBetaClamp, 1.0 - kBetaClamp);
}

struct BetaLogProb {
    double value = 0.0;
    double d_alpha = 0.0;
    double d_beta = 0.0;
};

inline BetaLogProb beta_log_prob(double x, double alpha, double beta) {
    if (!(x > 0.0 && x < 1.0)) throw DomainError("beta_log_prob: x must lie in (0, 1)");
    if (!(alpha > 0.0) || !(beta > 0.0)) throw DomainError("beta_log_prob: parameters must be positive");
    const double lx = std::log(x);
    const double l1x = std::log1p(-x);
    const double psi_ab = digamma(alpha + beta);
    BetaLogProb r;
    r.value = (alpha - 1.0) * lx + (beta - 1.0) * l1x - log_beta_fn(alpha, beta);
    r.d_alpha = lx - digamma(alpha) + psi_ab;
    r.d_beta = l1x - digamma(beta) + psi_ab;
    return r;
}

inline double beta_mean(double alpha, double beta) { return alpha / (alpha + beta); }

} // namespace charlee
