#include <gtest/gtest.h>

#include <filesystem>

#include "charlee/data/synthetic.hpp"
#include "charlee/evaluation.hpp"
#include "charlee/numerics/adam.hpp"
#include "charlee/ranking.hpp"
#include "charlee/training.hpp"
#include "test_util.hpp"

using namespace charlee;

namespace {

ModelConfig small_config(std::size_t C, std::size_t T, std::size_t K, std::size_t N) {
    ModelConfig cfg;
    cfg.n_channels = C;
    cfg.length = T;
    cfg.n_classes = K;
    cfg.n_checkpoints = N;
    cfg.encoder = EncoderShape{2, 3};
    cfg.hidden = 6;
    cfg.classifier_maps = 3;
    cfg.classifier_kernel = 3;
    return cfg;
}

Model small_model(std::uint64_t seed, std::size_t C = 3, std::size_t T = 12, std::size_t K = 3, std::size_t N = 3) {
    std::vector<std::size_t> order(C);
    for (std::size_t c = 0; c < C; ++c) order[c] = C - 1 - c;
    return create_model(small_config(C, T, K, N), singleton_groups(order), seed);
}

std::vector<double> random_sample(RngStream& rng, std::size_t n) {
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    return x;
}

bool is_prefix(const std::string& name, const std::string& prefix) { return name.rfind(prefix, 0) == 0; }

double grad_norm_with_prefix(const ParamStore& s, const std::string& prefix) {
    double acc = 0;
    for (const auto& t : s.tensors())
        if (is_prefix(t.name, prefix))
            for (double g : t.grads) acc += g * g;
    return std::sqrt(acc);
}

double grad_norm_without_prefix(const ParamStore& s, const std::string& prefix) {
    double acc = 0;
    for (const auto& t : s.tensors())
        if (!is_prefix(t.name, prefix))
            for (double g : t.grads) acc += g * g;
    return std::sqrt(acc);
}

ActionOverride replay(std::vector<double> raw) {
    return [raw](std::size_t n) -> std::optional<double> { return raw.at(n - 1); };
}

std::vector<double> raw_samples(const Trajectory& t) {
    std::vector<double> out;
    for (const auto& s : t.steps) out.push_back(s.raw_sample);
    return out;
}

SyntheticData noiseless_synthetic(std::size_t per_class, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.noise_std = 0.0;
    spec.n_per_class = per_class;
    spec.seed = seed;
    return generate_synthetic(spec);
}

Model synthetic_model(const Dataset& d, std::uint64_t seed) {
    const auto slices = slice_boundaries(d.length, 3);
    const auto ranking = weighted_rank(d, slices);
    ModelConfig cfg;
    cfg.n_channels = d.n_channels;
    cfg.length = d.length;
    cfg.n_classes = d.n_classes();
    cfg.n_checkpoints = 3;
    cfg.hidden = 32;
    cfg.classifier_maps = 16;
    return create_model(cfg, group_channels(ranking, 4), seed);
}

} // namespace

TEST(Returns, Examples) {
    EXPECT_EQ(returns(0.7, 3, 1.0), (std::vector<double>{0.7, 0.7, 0.7}));
    const auto r = returns(1.0, 3, 0.99);
    EXPECT_NEAR(r[0], 0.9801, 1e-15);
    EXPECT_NEAR(r[1], 0.99, 1e-15);
    EXPECT_EQ(r[2], 1.0);
    EXPECT_EQ(returns(-0.4, 1, 0.99), std::vector<double>{-0.4});
    EXPECT_THROW(returns(1.0, 2, 0.0), ConfigError);
}

TEST(StopLabels, Examples) {
    EXPECT_EQ(stop_labels(std::vector<double>{0.1, 0.2, 0.3}), (std::vector<int>{0, 0, 1}));
    EXPECT_EQ(stop_labels(std::vector<double>{0.3, 0.2, 0.1}), (std::vector<int>{1, 1, 1}));
    EXPECT_EQ(stop_labels(std::vector<double>{0.5, 0.9, 0.7}), (std::vector<int>{0, 1, 1}));
    // Equal future value is not strictly beaten.
    EXPECT_EQ(stop_labels(std::vector<double>{0.5, 0.5}), (std::vector<int>{0, 1}));
}

TEST(StopLabels, IdealSyntheticTemplates) {
    const auto ideal = synthetic_ideal_utilization();
    const std::size_t S = 4;
    for (double delta : {0.05, 0.1, 0.2, 0.3, 0.4, 0.45}) {
        for (std::size_t pair = 0; pair < 4; ++pair) {
            const auto& u = ideal[2 * pair];
            // Checkpoint at which the ideal schedule has seen everything it needs:
            // where it filters to 0, or the trailing full-observation entry.
            std::size_t stop_at = 1;
            while (stop_at < S && u[stop_at] > 0) ++stop_at;

            // Following the ideal schedule: one entry per checkpoint reached, plus the
            // trailing entry when the episode runs out of slices.
            std::vector<double> along;
            for (std::size_t n = 1; n <= stop_at; ++n) {
                double cost = 0;
                for (std::size_t s = 0; s < n; ++s) cost += u[s];
                along.push_back(total_reward(n == stop_at, cost, S, delta).total);
            }
            std::vector<int> expect(stop_at, 0);
            expect.back() = 1;
            EXPECT_EQ(stop_labels(along), expect) << "pair " << pair << " delta " << delta;

            // Observing every channel: the first positive label is the ideal stop.
            std::vector<double> full;
            for (std::size_t n = 1; n <= S; ++n)
                full.push_back(total_reward(n >= stop_at, static_cast<double>(n), S, delta).total);
            const auto labels = stop_labels(full);
            const auto first = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), 1) - labels.begin()) + 1;
            EXPECT_EQ(first, stop_at) << "pair " << pair << " delta " << delta;
        }
    }
}

TEST(Losses, BaselineAndStopExamples) {
    Tape t;
    const std::vector<Var> b = {t.scalar(0.0), t.scalar(0.0)};
    EXPECT_DOUBLE_EQ(t.item(loss_baseline(t, b, std::vector<double>{1, -1})), 1.0);
    const std::vector<Var> same = {t.scalar(0.3), t.scalar(-0.2)};
    EXPECT_DOUBLE_EQ(t.item(loss_baseline(t, same, std::vector<double>{0.3, -0.2})), 0.0);
    const std::vector<Var> half = {t.scalar(0.5), t.scalar(0.5), t.scalar(0.5)};
    EXPECT_NEAR(t.item(loss_stop(t, half, std::vector<int>{1, 0, 1})), std::log(2.0), 1e-15);
    const std::vector<Var> perfect = {t.scalar(1.0), t.scalar(0.0)};
    EXPECT_NEAR(t.item(loss_stop(t, perfect, std::vector<int>{1, 0})), 0.0, 2e-6);
    EXPECT_THROW(loss_filter(t, b, std::vector<double>{1}, std::vector<double>{1, 2}), InputError);
}

TEST(Rollout, ForcedActions) {
    RngStream rng(61);
    Model m = small_model(1);
    const auto x = random_sample(rng, 3 * 12);
    TrainConfig cfg;
    auto zero = run_episode_train(m, x, 0, cfg, rng, [](std::size_t) { return std::optional<double>(0.0); });
    EXPECT_EQ(zero.traj.steps.size(), 1u);
    EXPECT_EQ(zero.traj.exit, ExitReason::filtered_out);
    EXPECT_DOUBLE_EQ(inference_cost(zero.traj.utilization), 1.0);
    EXPECT_EQ(zero.traj.r_stop.size(), 1u);

    auto full = run_episode_train(m, x, 0, cfg, rng, [](std::size_t) { return std::optional<double>(1.0); });
    EXPECT_EQ(full.traj.steps.size(), 3u);
    EXPECT_EQ(full.traj.utilization, (std::vector<double>{1, 1, 1, 1}));
    EXPECT_EQ(full.traj.exit, ExitReason::exhausted);
    EXPECT_EQ(full.traj.r_stop.size(), 4u);
    EXPECT_DOUBLE_EQ(full.traj.r_stop.back(), full.traj.reward.total);
    for (std::size_t n = 1; n < full.traj.steps.size(); ++n)
        EXPECT_GT(full.traj.steps[n].intermediate_cost, full.traj.steps[n - 1].intermediate_cost);
}

TEST(Rollout, IntermediatePredictionsMatchMaskedClassifier) {
    RngStream rng(62);
    for (int trial = 0; trial < 20; ++trial) {
        Model m = small_model(100 + trial);
        const auto x = random_sample(rng, 3 * 12);
        TrainConfig cfg;
        auto r = run_episode_train(m, x, 1, cfg, rng);
        std::vector<double> u(4, 0.0);
        u[0] = 1.0;
        for (std::size_t n = 1; n <= r.traj.steps.size(); ++n) {
            const auto& st = r.traj.steps[n - 1];
            const auto masked = mask_apply(x, m.slices, u, m.groups, 0.0);
            EXPECT_EQ(st.intermediate_prediction, classifier_predict(m.params, m.classifier, masked));
            EXPECT_DOUBLE_EQ(st.intermediate_cost, inference_cost(u));
            if (n < 4) u[n] = st.snapped;
        }
        EXPECT_EQ(r.traj.final_prediction,
                  classifier_predict(m.params, m.classifier, mask_apply(x, m.slices, r.traj.utilization, m.groups, 0.0)));
        for (const auto& st : r.traj.steps) EXPECT_TRUE(std::isfinite(st.log_prob));
    }
}

TEST(FilterLoss, ZeroAdvantageGivesNoGradient) {
    RngStream rng(63);
    Model m = small_model(2);
    const auto x = random_sample(rng, 36);
    auto r = run_episode_train(m, x, 0, TrainConfig{}, rng);
    const std::vector<double> rets(r.log_probs.size(), 0.4);
    m.params.zero_grad();
    r.tape.backward(loss_filter(r.tape, r.log_probs, rets, rets));
    EXPECT_EQ(grad_norm_with_prefix(m.params, "filter."), 0.0);
    EXPECT_EQ(grad_norm_with_prefix(m.params, "encoder."), 0.0);
}

TEST(FilterLoss, PositiveAdvantageRaisesLogProb) {
    RngStream rng(64);
    for (int trial = 0; trial < 20; ++trial) {
        Model m = small_model(200 + trial);
        const auto x = random_sample(rng, 36);
        auto r = run_episode_train(m, x, 0, TrainConfig{}, rng);
        const auto raw = raw_samples(r.traj);
        const std::vector<double> rets(raw.size(), 1.0), base(raw.size(), 0.0);
        double before = 0;
        for (auto lp : r.log_probs) before += r.tape.item(lp);
        m.params.zero_grad();
        r.tape.backward(loss_filter(r.tape, r.log_probs, rets, base));
        for (auto& t : m.params.tensors())
            for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= 1e-4 * t.grads[i];
        RngStream unused(0);
        auto again = run_episode_train(m, x, 0, TrainConfig{}, unused, replay(raw));
        double after = 0;
        for (auto lp : again.log_probs) after += again.tape.item(lp);
        EXPECT_GT(after, before);
    }
}

TEST(FilterLoss, GradientMatchesFiniteDifferencesOnFrozenTrajectory) {
    RngStream rng(65);
    double worst = 0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Model m = small_model(300 + trial);
        // Random biases keep pre-activations off the relu kink at exactly 0.
        for (auto& t : m.params.tensors()) charlee::testing::fill_uniform(t, rng, -0.5, 0.5);
        const auto x = random_sample(rng, 36);
        auto r = run_episode_train(m, x, 0, TrainConfig{}, rng);
        const auto raw = raw_samples(r.traj);
        std::vector<double> rets, base;
        for (std::size_t n = 0; n < raw.size(); ++n) {
            rets.push_back(rng.uniform(-1, 1));
            base.push_back(rng.uniform(-1, 1));
        }
        auto value = [&] {
            RngStream unused(0);
            auto rr = run_episode_train(m, x, 0, TrainConfig{}, unused, replay(raw));
            return rr.tape.item(loss_filter(rr.tape, rr.log_probs, rets, base));
        };
        m.params.zero_grad();
        r.tape.backward(loss_filter(r.tape, r.log_probs, rets, base));
        for (auto& t : m.params.tensors()) {
            if (!is_prefix(t.name, "filter.") && !is_prefix(t.name, "encoder.")) continue;
            for (int k = 0; k < 3; ++k) {
                const std::size_t i = rng.below(t.values.size());
                const double x0 = t.values[i], h = 1e-4;
                double f[4];
                const double steps[4] = {2 * h, h, -h, -2 * h};
                for (int s = 0; s < 4; ++s) {
                    t.values[i] = x0 + steps[s];
                    f[s] = value();
                }
                t.values[i] = x0;
                const double numeric = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * h);
                worst = std::max(worst, charlee::testing::rel_err(t.grads[i], numeric));
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 100u);
    EXPECT_LT(worst, 1e-6);
}

TEST(Losses, NoLeakageAcrossHeads) {
    RngStream rng(66);
    Model m = small_model(3);
    const auto x = random_sample(rng, 36);
    auto r = run_episode_train(m, x, 0, TrainConfig{}, rng, [](std::size_t) { return std::optional<double>(1.0); });
    m.params.zero_grad();
    r.tape.backward(loss_stop(r.tape, r.stop_probs, stop_labels(r.traj.r_stop)));
    EXPECT_GT(grad_norm_with_prefix(m.params, "stop."), 0.0);
    EXPECT_EQ(grad_norm_without_prefix(m.params, "stop."), 0.0);

    auto r2 = run_episode_train(m, x, 0, TrainConfig{}, rng, [](std::size_t) { return std::optional<double>(1.0); });
    m.params.zero_grad();
    r2.tape.backward(loss_baseline(r2.tape, r2.baselines, std::vector<double>{0.3, 0.2, 0.1}));
    EXPECT_GT(grad_norm_with_prefix(m.params, "baseline."), 0.0);
    EXPECT_EQ(grad_norm_without_prefix(m.params, "baseline."), 0.0);

    auto r3 = run_episode_train(m, x, 0, TrainConfig{}, rng);
    m.params.zero_grad();
    r3.tape.backward(loss_classification(r3.tape, m, r3.final_logits, x, 0).total);
    EXPECT_GT(grad_norm_with_prefix(m.params, "clf."), 0.0);
    EXPECT_EQ(grad_norm_without_prefix(m.params, "clf."), 0.0);
}

TEST(Losses, ClassificationGateAndFullSampleGradient) {
    RngStream rng(67);
    std::size_t wrong = 0, right = 0, fd_checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        Model m = small_model(400 + trial);
        for (auto& t : m.params.tensors())
            if (is_prefix(t.name, "clf.")) charlee::testing::fill_uniform(t, rng, -0.5, 0.5);
        const auto x = random_sample(rng, 36);
        const std::size_t label = rng.below(3);
        auto r = run_episode_train(m, x, label, TrainConfig{}, rng);
        const auto cls = loss_classification(r.tape, m, r.final_logits, x, label);
        if (r.traj.final_prediction == label) {
            ++right;
            EXPECT_FALSE(cls.full.has_value());
            EXPECT_EQ(r.tape.item(cls.total), r.tape.item(cls.acc));
            continue;
        }
        ++wrong;
        ASSERT_TRUE(cls.full.has_value());
        EXPECT_GT(r.tape.item(*cls.full), 0.0);
        EXPECT_NEAR(r.tape.item(cls.total), r.tape.item(cls.acc) + r.tape.item(*cls.full), 1e-12);
        // The full term's gradient equals plain cross-entropy on the unmasked sample.
        m.params.zero_grad();
        r.tape.backward(*cls.full);
        std::vector<std::vector<double>> got;
        for (const auto& t : m.params.tensors()) got.push_back(t.grads);
        m.params.zero_grad();
        Tape ref;
        ref.backward(ref.softmax_cross_entropy(classifier_forward(ref, m.params, m.classifier, x), label));
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], m.params.tensors()[i].grads);
        const auto& cs = m.classifier;
        const auto z0 = charlee::testing::naive_conv_same(x, m.params.get("clf.c0.w").values,
                                                          m.params.get("clf.c0.b").values, cs.n_channels, cs.kernel_length);
        auto h0 = z0;
        for (auto& v : h0) v = std::max(v, 0.0);
        const auto z1 = charlee::testing::naive_conv_same(h0, m.params.get("clf.c1.w").values,
                                                          m.params.get("clf.c1.b").values, cs.maps, cs.kernel_length);
        // Points next to a relu kink say nothing about the analytic gradient.
        if (std::min(charlee::testing::min_abs(z0), charlee::testing::min_abs(z1)) < 1e-3) continue;
        ++fd_checked;
        double worst = 0;
        auto f = [&](Tape& t) { return t.softmax_cross_entropy(classifier_forward(t, m.params, m.classifier, x), label); };
        ParamStore& store = m.params;
        for (auto& t : store.tensors()) {
            if (!is_prefix(t.name, "clf.")) continue;
            const std::size_t i = rng.below(t.values.size());
            const double x0 = t.values[i], h = 1e-5;
            auto val = [&](double v) {
                t.values[i] = v;
                Tape tt;
                return tt.item(f(tt));
            };
            const double numeric = (-val(x0 + 2 * h) + 8 * val(x0 + h) - 8 * val(x0 - h) + val(x0 - 2 * h)) / (12 * h);
            t.values[i] = x0;
            worst = std::max(worst, charlee::testing::rel_err(t.grads[i], numeric));
        }
        EXPECT_LT(worst, 1e-6);
    }
    EXPECT_GT(wrong, 0u);
    EXPECT_GT(right, 0u);
    EXPECT_GT(fd_checked, 10u);
}

TEST(Losses, BaselineRegressionConvergesOnFrozenPolicy) {
    RngStream rng(68);
    Model m = small_model(4);
    std::vector<std::vector<double>> states;
    std::vector<double> targets;
    for (int i = 0; i < 30; ++i) {
        const auto x = random_sample(rng, 36);
        auto r = run_episode_train(m, x, 0, TrainConfig{}, rng);
        const auto rets = returns(r.traj.reward.total, r.traj.steps.size(), 0.99);
        for (std::size_t n = 0; n < rets.size(); ++n) {
            states.push_back(r.traj.steps[n].state);
            targets.push_back(rets[n]);
        }
    }
    Adam adam(AdamConfig{1e-3});
    double prev = INFINITY;
    for (int epoch = 0; epoch < 60; ++epoch) {
        m.params.zero_grad();
        Tape t;
        std::vector<Var> b;
        for (const auto& s : states) b.push_back(baseline_forward(t, m.params, m.baseline_head, t.constant(s)));
        const Var loss = loss_baseline(t, b, targets);
        const double v = t.item(loss);
        EXPECT_LE(v, prev + 1e-12) << "epoch " << epoch;
        prev = v;
        t.backward(loss);
        adam.step(m.params);
    }
}

TEST(Train, DeterministicAndResumable) {
    const auto data = noiseless_synthetic(3, 0).dataset;
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.minibatch = 8;
    cfg.seed = 9;
    Model a = synthetic_model(data, 9), b = synthetic_model(data, 9);
    const auto ra = train(a, data, cfg), rb = train(b, data, cfg);
    EXPECT_EQ(history_csv(ra.history), history_csv(rb.history));
    EXPECT_TRUE(ra.completed);
    for (std::size_t i = 0; i < a.params.tensors().size(); ++i)
        EXPECT_EQ(a.params.tensors()[i].values, b.params.tensors()[i].values);

    const auto dir = std::filesystem::temp_directory_path() / "charlee_test_resume";
    std::filesystem::remove_all(dir);
    Model c = synthetic_model(data, 9);
    TrainOptions first;
    first.state_dir = dir;
    first.stop_after_epoch = 2;
    const auto partial = train(c, data, cfg, first);
    EXPECT_FALSE(partial.completed);
    EXPECT_EQ(partial.history.size(), 2u);
    Model d = synthetic_model(data, 9);
    TrainOptions second;
    second.state_dir = dir;
    const auto resumed = train(d, data, cfg, second);
    EXPECT_TRUE(resumed.completed);
    EXPECT_EQ(history_csv(resumed.history), history_csv(ra.history));
    EXPECT_EQ(resumed.best_epoch, ra.best_epoch);
    for (std::size_t i = 0; i < a.params.tensors().size(); ++i)
        EXPECT_EQ(d.params.tensors()[i].values, a.params.tensors()[i].values);
}

TEST(Train, NonFiniteParametersAbortWithDump) {
    const auto data = noiseless_synthetic(2, 0).dataset;
    Model m = synthetic_model(data, 1);
    m.params.get("clf.out.b").values[0] = std::nan("");
    TrainConfig cfg;
    cfg.epochs = 1;
    const auto dir = std::filesystem::temp_directory_path() / "charlee_test_nan";
    std::filesystem::remove_all(dir);
    TrainOptions opts;
    opts.state_dir = dir;
    EXPECT_THROW(train(m, data, cfg, opts), NumericError);
    EXPECT_TRUE(std::filesystem::exists(dir / "numeric_failure.params"));
    cfg.gamma = 0.0;
    EXPECT_THROW(train(m, data, cfg), ConfigError);
}

TEST(Train, AccuracyOnlyReachesPerfectValidationF1) {
    const auto data = noiseless_synthetic(10, 0).dataset;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig cfg;
        cfg.delta = 0.0;
        cfg.epochs = 25;
        cfg.minibatch = 16;
        cfg.learning_rate = 3e-3;
        cfg.seed = seed;
        Model m = synthetic_model(data, seed);
        const auto res = train(m, data, cfg);
        EXPECT_GE(res.history[res.best_epoch - 1].val_f1, 0.99) << "seed " << seed;
    }
}

TEST(Train, SavingsOnlyCollapsesToImmediateExit) {
    const auto data = noiseless_synthetic(10, 1).dataset;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig cfg;
        cfg.delta = 1.0;
        cfg.epochs = 10;
        cfg.minibatch = 16;
        cfg.learning_rate = 3e-3;
        cfg.seed = seed;
        Model m = synthetic_model(data, seed);
        const auto res = train(m, data, cfg);
        EXPECT_GE(res.history[res.best_epoch - 1].val_savings, 0.7) << "seed " << seed;
    }
}

TEST(History, CsvHeaderAndRows) {
    EpochRecord e;
    e.epoch = 3;
    e.val_f1 = 0.5;
    const auto csv = history_csv({e});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kHistoryHeader);
    EXPECT_NE(csv.find("\n3,0,0,0,0,0,0,0,0.5,0\n"), std::string::npos);
}
