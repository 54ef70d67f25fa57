#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "charlee/numerics/adam.hpp"
#include "charlee/numerics/params.hpp"
#include "charlee/numerics/rng.hpp"
#include "charlee/numerics/special.hpp"
#include "charlee/numerics/tape.hpp"
#include "test_util.hpp"

using namespace charlee;
using charlee::testing::check_grads;
using charlee::testing::fill_uniform;

namespace {

// Independent digamma: recurrence up to x >= 20, then the asymptotic series
// through the x^-10 term (remainder below 1e-18 there).
double digamma_oracle(double x) {
    double acc = 0.0;
    while (x < 20.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double x2 = 1.0 / (x * x);
    return acc + std::log(x) - 1.0 / (2.0 * x) - x2 / 12.0 + x2 * x2 / 120.0 - x2 * x2 * x2 / 252.0 +
           x2 * x2 * x2 * x2 / 240.0 - x2 * x2 * x2 * x2 * x2 / 132.0;
}

} // namespace

TEST(Rng, SameSeedSameStream) {
    RngStream a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DerivedStreamsDiffer) {
    RngStream root(7);
    auto a = root.derive("shuffle", 1), b = root.derive("shuffle", 2), c = root.derive("beta", 1);
    const auto va = a.next_u64();
    EXPECT_NE(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
    EXPECT_EQ(root.derive("shuffle", 1).next_u64(), va);
}

TEST(Rng, UniformAndBelowRanges) {
    RngStream r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ASSERT_LT(r.below(7), 7u);
    }
}

TEST(Rng, NormalMoments) {
    RngStream r(3);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, GammaMeanMatchesShape) {
    RngStream r(5);
    for (double shape : {0.5, 1.0, 2.5, 9.0}) {
        double s = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) s += r.gamma(shape);
        EXPECT_NEAR(s / n, shape, 0.03 * std::max(1.0, shape)) << "shape " << shape;
    }
}

TEST(Digamma, MatchesOracleOverWideRange) {
    RngStream r(11);
    double worst = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const double x = std::exp(r.uniform(std::log(1e-3), std::log(1e3)));
        worst = std::max(worst, std::abs(digamma(x) - digamma_oracle(x)));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(Digamma, KnownValues) {
    const double euler = 0.57721566490153286;
    EXPECT_NEAR(digamma(1.0), -euler, 1e-12);
    EXPECT_NEAR(digamma(0.5), -euler - 2.0 * std::numbers::ln2, 1e-12);
    EXPECT_NEAR(digamma(2.0), 1.0 - euler, 1e-12);
    EXPECT_THROW(digamma(0.0), DomainError);
    EXPECT_THROW(digamma(-1.0), DomainError);
}

TEST(Digamma, IsDerivativeOfLogGamma) {
    for (double x : {0.3, 1.7, 4.2, 12.5, 80.0}) {
        const double h = 1e-4;
        const double fd = (-std::lgamma(x + 2 * h) + 8 * std::lgamma(x + h) - 8 * std::lgamma(x - h) + std::lgamma(x - 2 * h)) /
                          (12 * h);
        EXPECT_NEAR(digamma(x), fd, 1e-8) << x;
    }
}

TEST(BetaDensity, QuadratureNormalizes) {
    // Composite Simpson on a substituted grid concentrated near both ends.
    RngStream r(13);
    for (int trial = 0; trial < 20; ++trial) {
        const double a = r.uniform(1.0, 12.0), b = r.uniform(1.0, 12.0);
        const int n = 20000;
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double u = static_cast<double>(i) / n;
            // x = (1 - cos(pi u)) / 2, dx = pi/2 sin(pi u) du
            const double x = 0.5 * (1.0 - std::cos(std::numbers::pi * u));
            const double jac = 0.5 * std::numbers::pi * std::sin(std::numbers::pi * u);
            double fx = 0.0;
            if (x > 0.0 && x < 1.0) fx = std::exp(beta_log_prob(x, a, b).value) * jac;
            const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            acc += w * fx;
        }
        acc /= 3.0 * n;
        EXPECT_NEAR(acc, 1.0, 1e-4) << "alpha " << a << " beta " << b;
    }
}

TEST(BetaDensity, ParameterGradientsMatchFiniteDifferences) {
    RngStream r(17);
    for (int i = 0; i < 200; ++i) {
        const double x = r.uniform(0.01, 0.99), a = r.uniform(1.0, 10.0), b = r.uniform(1.0, 10.0);
        const auto lp = beta_log_prob(x, a, b);
        const double h = 1e-5;
        auto f = [&](double aa, double bb) { return beta_log_prob(x, aa, bb).value; };
        const double da = (-f(a + 2 * h, b) + 8 * f(a + h, b) - 8 * f(a - h, b) + f(a - 2 * h, b)) / (12 * h);
        const double db = (-f(a, b + 2 * h) + 8 * f(a, b + h) - 8 * f(a, b - h) + f(a, b - 2 * h)) / (12 * h);
        EXPECT_LT(charlee::testing::rel_err(lp.d_alpha, da), 1e-6);
        EXPECT_LT(charlee::testing::rel_err(lp.d_beta, db), 1e-6);
    }
}

TEST(BetaSample, SymmetricParametersCenterOnHalf) {
    RngStream r(19);
    const double ab = std::log(2.0) + 1.0;
    double s = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) s += beta_sample(ab, ab, r);
    EXPECT_NEAR(s / n, 0.5, 0.01);
}

TEST(BetaSample, MeanMatchesAnalytic) {
    RngStream r(23);
    double s = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) s += beta_sample(9.0, 1.05, r);
    EXPECT_NEAR(s / n, beta_mean(9.0, 1.05), 0.005);
}

// ---- tape finite-difference checks ---------------------------------------------

namespace {

constexpr int kPoints = 100;

template <class Build>
void fd_suite(const char* name, RngStream& rng, Build&& build_point, double h = 1e-5) {
    double worst = 0.0;
    std::size_t checked = 0;
    for (int p = 0; p < kPoints; ++p) {
        ParamStore store;
        auto f = build_point(store, rng);
        const auto g = check_grads(store, f, rng, h);
        worst = std::max(worst, g.max_rel);
        checked += g.checked;
    }
    EXPECT_LT(worst, 1e-6) << name;
    EXPECT_GE(checked, static_cast<std::size_t>(kPoints)) << name;
}

/// Random projection so that vector-valued ops reduce to a scalar.
Var project(Tape& t, Var y, const std::vector<double>& coef) {
    const Var w = t.constant(coef);
    std::vector<double> zero{0.0};
    Var b = t.constant(zero);
    // dense with a single output row = dot product
    return t.pick(t.dense(y, w, b), 0);
}

std::vector<double> random_vec(RngStream& r, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = r.uniform(lo, hi);
    return v;
}

/// Values at least `margin` away from zero, for ops with a kink at 0.
std::vector<double> away_from_zero(RngStream& r, std::size_t n, double margin) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = r.uniform(margin, 2.0);
        if (r.uniform() < 0.5) x = -x;
    }
    return v;
}

} // namespace

TEST(TapeGradients, Elementwise) {
    RngStream rng(101);
    fd_suite("relu", rng, [](ParamStore& s, RngStream& r) {
        auto& x = s.add("x", {6});
        x.values = away_from_zero(r, 6, 1e-2);
        auto c = random_vec(r, 6);
        return std::function<Var(Tape&)>([&x, c](Tape& t) { return project(t, t.relu(t.param(x)), c); });
    });
    fd_suite("sigmoid", rng, [](ParamStore& s, RngStream& r) {
        auto& x = s.add("x", {6});
        fill_uniform(x, r, -4, 4);
        auto c = random_vec(r, 6);
        return std::function<Var(Tape&)>([&x, c](Tape& t) { return project(t, t.sigmoid(t.param(x)), c); });
    });
    fd_suite("softplus", rng, [](ParamStore& s, RngStream& r) {
        auto& x = s.add("x", {6});
        fill_uniform(x, r, -5, 5);
        auto c = random_vec(r, 6);
        return std::function<Var(Tape&)>([&x, c](Tape& t) { return project(t, t.softplus(t.param(x)), c); });
    });
    fd_suite("add_scalar+scale", rng, [](ParamStore& s, RngStream& r) {
        auto& x = s.add("x", {5});
        fill_uniform(x, r, -2, 2);
        auto c = random_vec(r, 5);
        const double a = r.uniform(-3, 3), k = r.uniform(-3, 3);
        return std::function<Var(Tape&)>(
            [&x, c, a, k](Tape& t) { return project(t, t.scale(t.add_scalar(t.param(x), a), k), c); });
    });
    fd_suite("add", rng, [](ParamStore& s, RngStream& r) {
        auto& x = s.add("x", {4});
        auto& y = s.add("y", {4});
        fill_uniform(x, r, -2, 2);
        fill_uniform(y, r, -2, 2);
        auto c = random_vec(r, 4);
        return std::function<Var(Tape&)>([&x, &y, c](Tape& t) {
            const Var a = t.sigmoid(t.param(x));
            return project(t, t.add(a, t.softplus(t.param(y))), c);
        });
    });
}

TEST(TapeGradients, Structure) {
    RngStream rng(202);
    fd_suite("sum+pick", rng, [](ParamStore& s, RngStream& r) {
        auto& x = s.add("x", {5});
        fill_uniform(x, r, -2, 2);
        return std::function<Var(Tape&)>([&x](Tape& t) {
            const Var v = t.sigmoid(t.param(x));
            return t.sum({t.pick(v, 0), t.scale(t.pick(v, 3), 2.5), t.pick(v, 4)});
        });
    });
    fd_suite("concat", rng, [](ParamStore& s, RngStream& r) {
        auto& x = s.add("x", {3});
        auto& y = s.add("y", {4});
        fill_uniform(x, r, -2, 2);
        fill_uniform(y, r, -2, 2);
        auto c = random_vec(r, 7);
        return std::function<Var(Tape&)>([&x, &y, c](Tape& t) {
            const Var a = t.softplus(t.param(x));
            return project(t, t.concat({a, t.sigmoid(t.param(y))}), c);
        });
    });
}

TEST(TapeGradients, Dense) {
    RngStream rng(303);
    fd_suite("dense", rng, [](ParamStore& s, RngStream& r) {
        const std::size_t in = 5, out = 3;
        auto& x = s.add("x", {in});
        auto& w = s.add("w", {out, in});
        auto& b = s.add("b", {out});
        fill_uniform(x, r, -2, 2);
        fill_uniform(w, r, -1, 1);
        fill_uniform(b, r, -1, 1);
        auto c = random_vec(r, out);
        return std::function<Var(Tape&)>([&x, &w, &b, c](Tape& t) {
            return project(t, t.sigmoid(t.dense(t.param(x), t.param(w), t.param(b))), c);
        });
    });
}

TEST(TapeGradients, Conv1dAndPooling) {
    RngStream rng(404);
    fd_suite("conv1d", rng, [](ParamStore& s, RngStream& r) {
        const std::size_t in = 2, out = 3, T = 11, k = 5;
        auto& x = s.add("x", {in, T});
        auto& w = s.add("w", {out, in, k});
        auto& b = s.add("b", {out});
        fill_uniform(x, r, -1, 1);
        fill_uniform(w, r, -1, 1);
        fill_uniform(b, r, -1, 1);
        auto c = random_vec(r, out * T);
        return std::function<Var(Tape&)>([&x, &w, &b, c](Tape& t) {
            return project(t, t.softplus(t.conv1d(t.param(x), t.param(w), t.param(b), 2, 5)), c);
        });
    });
    fd_suite("global_avg_pool", rng, [](ParamStore& s, RngStream& r) {
        auto& x = s.add("x", {3, 7});
        fill_uniform(x, r, -2, 2);
        auto c = random_vec(r, 3);
        return std::function<Var(Tape&)>(
            [&x, c](Tape& t) { return project(t, t.global_avg_pool(t.sigmoid(t.param(x)), 3), c); });
    });
}

TEST(TapeGradients, Losses) {
    RngStream rng(505);
    fd_suite("softmax_cross_entropy", rng, [](ParamStore& s, RngStream& r) {
        auto& z = s.add("z", {5});
        fill_uniform(z, r, -3, 3);
        const std::size_t label = r.below(5);
        return std::function<Var(Tape&)>([&z, label](Tape& t) { return t.softmax_cross_entropy(t.param(z), label); });
    });
    fd_suite("binary_cross_entropy", rng, [](ParamStore& s, RngStream& r) {
        auto& z = s.add("z", {1});
        fill_uniform(z, r, -4, 4);
        const double target = r.uniform() < 0.5 ? 0.0 : 1.0;
        return std::function<Var(Tape&)>(
            [&z, target](Tape& t) { return t.binary_cross_entropy(t.sigmoid(t.param(z)), target); });
    });
    fd_suite("squared_error", rng, [](ParamStore& s, RngStream& r) {
        auto& z = s.add("z", {1});
        fill_uniform(z, r, -4, 4);
        const double target = r.uniform(-2, 2);
        return std::function<Var(Tape&)>([&z, target](Tape& t) { return t.squared_error(t.param(z), target); });
    });
    fd_suite("beta_log_prob", rng, [](ParamStore& s, RngStream& r) {
        auto& z = s.add("z", {2});
        fill_uniform(z, r, -3, 3);
        const double x = r.uniform(0.02, 0.98);
        return std::function<Var(Tape&)>([&z, x](Tape& t) {
            const Var ab = t.add_scalar(t.softplus(t.param(z)), 1.0);
            return t.beta_log_prob(t.pick(ab, 0), t.pick(ab, 1), x);
        });
    });
}

TEST(Tape, Conv1dMatchesNaiveOracle) {
    RngStream r(606);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t in = 1 + r.below(4), out = 1 + r.below(5), T = 3 + r.below(30), k = 2 * r.below(5) + 1;
        auto x = random_vec(r, in * T), w = random_vec(r, out * in * k), b = random_vec(r, out);
        Tape t;
        const auto& y = t.value(t.conv1d(t.constant(x), t.constant(w), t.constant(b), in, k));
        const auto ref = charlee::testing::naive_conv_same(x, w, b, in, k);
        ASSERT_EQ(y.size(), ref.size());
        for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12);
    }
}

TEST(Tape, ShapeErrors) {
    Tape t;
    const Var x = t.constant(std::vector<double>{1, 2, 3});
    const Var w = t.constant(std::vector<double>{1, 2});
    const Var b = t.constant(std::vector<double>{0});
    EXPECT_THROW(t.dense(x, w, b), ConfigError);
    EXPECT_THROW(t.conv1d(x, t.constant(std::vector<double>{1, 1}), b, 1, 2), ConfigError);
    EXPECT_THROW(t.softmax_cross_entropy(x, 3), InputError);
    EXPECT_THROW(t.backward(x), ConfigError);
}

TEST(Tape, BceClampGivesFiniteLoss) {
    Tape t;
    const Var p = t.scalar(1.0);
    const Var l = t.binary_cross_entropy(p, 1.0);
    EXPECT_NEAR(t.item(l), -std::log(1.0 - 1e-6), 1e-12);
    const Var half = t.scalar(0.5);
    EXPECT_NEAR(t.item(t.binary_cross_entropy(half, 0.0)), std::log(2.0), 1e-15);
}

// ---- optimizer and checkpoints ---------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamStore s;
    auto& p = s.add("p", {3});
    p.values = {1.0, -2.0, 0.5};
    p.grads = {0.3, -4.0, 1e-3};
    Adam opt(AdamConfig{0.01});
    opt.step(s);
    EXPECT_NEAR(p.values[0], 1.0 - 0.01, 1e-9);
    EXPECT_NEAR(p.values[1], -2.0 + 0.01, 1e-9);
    EXPECT_NEAR(p.values[2], 0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-9);
    for (double g : p.grads) EXPECT_EQ(g, 0.0);
}

TEST(Adam, MinimizesQuadratic) {
    ParamStore s;
    auto& p = s.add("p", {2});
    p.values = {3.0, -1.0};
    Adam opt(AdamConfig{0.05});
    for (int i = 0; i < 2000; ++i) {
        p.grads = {2 * (p.values[0] - 1.0), 2 * (p.values[1] + 0.5)};
        opt.step(s);
    }
    EXPECT_NEAR(p.values[0], 1.0, 1e-3);
    EXPECT_NEAR(p.values[1], -0.5, 1e-3);
}

TEST(Adam, StateRoundTripContinuesIdentically) {
    auto make = [] {
        ParamStore s;
        s.add("p", {2}).values = {0.4, -0.7};
        return s;
    };
    auto grad = [](ParamStore& s) {
        auto& p = s.get("p");
        p.grads = {std::sin(p.values[0]), p.values[1] * p.values[1]};
    };
    ParamStore a = make();
    Adam oa;
    for (int i = 0; i < 5; ++i) grad(a), oa.step(a);
    ParamStore exported;
    oa.export_state(exported);
    ParamStore b = a;
    Adam ob;
    ob.import_state(checkpoint::decode(checkpoint::encode(exported)));
    for (int i = 0; i < 5; ++i) {
        grad(a), oa.step(a);
        grad(b), ob.step(b);
    }
    EXPECT_EQ(a.get("p").values, b.get("p").values);
}

TEST(Checkpoint, RoundTripIsExact) {
    ParamStore s;
    RngStream r(9);
    s.add_glorot("enc.w", {3, 2, 4}, 8, 3, r);
    s.add("bias", {5}).values = {1e-300, -0.0, 3.25, 1e300, -7};
    const auto bytes = checkpoint::encode(s);
    const auto back = checkpoint::decode(bytes);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back.get("enc.w").shape, (std::vector<std::size_t>{3, 2, 4}));
    EXPECT_EQ(back.get("enc.w").values, s.get("enc.w").values);
    EXPECT_EQ(back.get("bias").values, s.get("bias").values);
    EXPECT_EQ(checkpoint::encode(back), bytes);
}

TEST(Checkpoint, RejectsCorruptInput) {
    ParamStore s;
    s.add("w", {4}).values = {1, 2, 3, 4};
    auto bytes = checkpoint::encode(s);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_THROW(checkpoint::decode(truncated), InputError);
    auto trailing = bytes;
    trailing.push_back(0);
    EXPECT_THROW(checkpoint::decode(trailing), InputError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(checkpoint::decode(bad_magic), InputError);
    std::vector<unsigned char> tiny{'C', 'H'};
    EXPECT_THROW(checkpoint::decode(tiny), InputError);
}

TEST(ParamStore, DuplicateNamesAndLookups) {
    ParamStore s;
    s.add("a", {2});
    EXPECT_THROW(s.add("a", {3}), ConfigError);
    EXPECT_THROW(s.get("missing"), ConfigError);
    EXPECT_TRUE(s.contains("a"));
    s.get("a").values[0] = NAN;
    EXPECT_FALSE(s.all_finite());
}
