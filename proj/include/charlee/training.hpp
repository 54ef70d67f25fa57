#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "charlee/data/dataset.hpp"
#include "charlee/data/formats.hpp"
#include "charlee/data/transforms.hpp"
#include "charlee/episode.hpp"
#include "charlee/errors.hpp"
#include "charlee/evaluation.hpp"
#include "charlee/models/model.hpp"
#include "charlee/numerics/adam.hpp"
#include "charlee/numerics/special.hpp"
#include "charlee/rollout.hpp"

namespace charlee {

struct TrainConfig {
    double delta = 0.2;
    double gamma = 0.99;
    std::size_t epochs = 100;
    std::size_t minibatch = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    double val_fraction = 0.2;
    double mask_value = 0.0;

    void validate() const {
        if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
        if (epochs == 0 || minibatch == 0) throw ConfigError("epochs and minibatch must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    }
};

struct StepRecord {
    std::vector<double> state;
    double raw_sample = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double log_prob = 0.0;
    double snapped = 0.0;
    double stop_prob = 0.0;
    double baseline = 0.0;
    std::size_t intermediate_prediction = 0;
    /// Cost if processing had stopped at this checkpoint.
    double intermediate_cost = 0.0;
};

struct Trajectory {
    std::vector<StepRecord> steps;
    std::vector<double> utilization;
    std::size_t final_prediction = 0;
    std::size_t label = 0;
    ExitReason exit = ExitReason::running;
    RewardBreakdown reward;
    /// Reward had the episode ended at each checkpoint; one extra trailing
    /// entry for the full observation when the episode ran out of slices.
    std::vector<double> r_stop;
};

/// A training rollout together with the tape that recorded it.
struct Rollout {
    Tape tape;
    Trajectory traj;
    std::vector<Var> log_probs;
    std::vector<Var> baselines;
    std::vector<Var> stop_probs;
    Var final_logits;
};

/// Replaces the Beta draw at a checkpoint (1-based) when it returns a value.
using ActionOverride = std::function<std::optional<double>(std::size_t checkpoint)>;

/// Training-mode episode: the filter action is sampled, the stop head is
/// evaluated but never ends the episode, and the classifier is run on the
/// intermediate masked input at every checkpoint.
inline Rollout run_episode_train(Model& m, std::span<const double> sample, std::size_t label, const TrainConfig& cfg,
                                 RngStream& rng, const ActionOverride& override_action = {}) {
    const std::size_t C = m.config.n_channels, N = m.config.n_checkpoints, S = m.n_slices();
    Rollout r;
    auto& tape = r.tape;
    auto& traj = r.traj;
    traj.label = label;
    RunningStats stats(m.groups, m.config.encoder, m.config.length, /*track_jacobian=*/true);
    stats.encode_slice(m.params, slice_values(sample, m.slices, C, 0), m.slices.length(0),
                       std::vector<bool>(m.groups.n_groups, true));
    Episode ep(S, m.qset);
    std::vector<double> history;
    while (!ep.terminal()) {
        const std::size_t n = ep.checkpoint() + 1;
        StepRecord rec;
        const Var state = state_var(tape, m.params, stats, history, n, N);
        rec.state = tape.value(state);
        const auto fo = filter_forward(tape, m.params, m.filter_head, state);
        rec.alpha = tape.item(fo.alpha);
        rec.beta = tape.item(fo.beta);
        std::optional<double> forced;
        if (override_action) forced = override_action(n);
        rec.raw_sample = forced ? std::clamp(*forced, 0.0, 1.0) : beta_sample(rec.alpha, rec.beta, rng);
        const Var lp = tape.beta_log_prob(fo.alpha, fo.beta, std::clamp(rec.raw_sample, kBetaClamp, 1.0 - kBetaClamp));
        rec.log_prob = tape.item(lp);
        rec.snapped = apply_filter_action(ep.kept(), rec.raw_sample, m.qset);

        const Var detached = tape.constant(rec.state);
        const Var b = baseline_forward(tape, m.params, m.baseline_head, detached);
        const Var sp = stop_forward(tape, m.params, m.stop_head, detached, rec.snapped);
        rec.baseline = tape.item(b);
        rec.stop_prob = tape.item(sp);

        const auto partial = truncated_schedule(ep.utilization(), n);
        rec.intermediate_cost = inference_cost(partial);
        rec.intermediate_prediction =
            classifier_predict(m.params, m.classifier, masked_input(m, sample, partial, cfg.mask_value));

        r.log_probs.push_back(lp);
        r.baselines.push_back(b);
        r.stop_probs.push_back(sp);
        traj.steps.push_back(std::move(rec));

        const double snapped = traj.steps.back().snapped;
        ep.step(snapped, false);
        history.push_back(snapped);
        if (!ep.terminal())
            stats.encode_slice(m.params, slice_values(sample, m.slices, C, n), m.slices.length(n),
                               active_groups(m.groups, snapped));
    }
    traj.utilization = ep.utilization();
    traj.exit = ep.exit_reason();
    r.final_logits = classifier_forward(tape, m.params, m.classifier, masked_input(m, sample, traj.utilization, cfg.mask_value));
    traj.final_prediction = argmax(tape.value(r.final_logits));
    traj.reward = total_reward(traj.final_prediction == label, ep.cost(), S, cfg.delta);
    for (const auto& st : traj.steps)
        traj.r_stop.push_back(total_reward(st.intermediate_prediction == label, st.intermediate_cost, S, cfg.delta).total);
    if (traj.exit == ExitReason::exhausted) traj.r_stop.push_back(traj.reward.total);
    return r;
}

/// gamma^(last - n) * R for each of the n_used checkpoints.
inline std::vector<double> returns(double final_reward, std::size_t n_used, double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    std::vector<double> out(n_used);
    for (std::size_t n = 0; n < n_used; ++n) out[n] = std::pow(gamma, static_cast<double>(n_used - 1 - n)) * final_reward;
    return out;
}

/// 1 where the reward for stopping beats every later option (strictly);
/// the last entry is always 1.
inline std::vector<int> stop_labels(std::span<const double> r_stop) {
    std::vector<int> labels(r_stop.size(), 0);
    double best_future = -std::numeric_limits<double>::infinity();
    for (std::size_t i = r_stop.size(); i-- > 0;) {
        labels[i] = r_stop[i] > best_future ? 1 : 0;
        best_future = std::max(best_future, r_stop[i]);
    }
    return labels;
}

/// REINFORCE with baseline; the advantage is a constant on the tape.
inline Var loss_filter(Tape& tape, std::span<const Var> log_probs, std::span<const double> rets,
                       std::span<const double> baselines) {
    if (log_probs.size() != rets.size() || rets.size() != baselines.size()) throw InputError("loss_filter: length mismatch");
    std::vector<Var> terms;
    for (std::size_t n = 0; n < log_probs.size(); ++n) terms.push_back(tape.scale(log_probs[n], -(rets[n] - baselines[n])));
    return tape.sum(terms);
}

inline Var loss_baseline(Tape& tape, std::span<const Var> baselines, std::span<const double> rets) {
    if (baselines.size() != rets.size() || rets.empty()) throw InputError("loss_baseline: length mismatch");
    std::vector<Var> terms;
    for (std::size_t n = 0; n < baselines.size(); ++n) terms.push_back(tape.squared_error(baselines[n], rets[n]));
    return tape.scale(tape.sum(terms), 1.0 / static_cast<double>(terms.size()));
}

inline Var loss_stop(Tape& tape, std::span<const Var> probs, std::span<const int> labels) {
    if (probs.size() > labels.size() || probs.empty()) throw InputError("loss_stop: length mismatch");
    std::vector<Var> terms;
    for (std::size_t n = 0; n < probs.size(); ++n) terms.push_back(tape.binary_cross_entropy(probs[n], labels[n]));
    return tape.scale(tape.sum(terms), 1.0 / static_cast<double>(terms.size()));
}

struct ClassificationLoss {
    Var acc;
    std::optional<Var> full;
    Var total;
};

/// Cross-entropy on the episode's masked input, plus cross-entropy on the
/// unmasked sample when the masked prediction was wrong.
inline ClassificationLoss loss_classification(Tape& tape, Model& m, Var final_logits, std::span<const double> full_sample,
                                              std::size_t label) {
    ClassificationLoss out;
    out.acc = tape.softmax_cross_entropy(final_logits, label);
    out.total = out.acc;
    if (argmax(tape.value(final_logits)) != label) {
        out.full = tape.softmax_cross_entropy(classifier_forward(tape, m.params, m.classifier, full_sample), label);
        out.total = tape.add(out.acc, *out.full);
    }
    return out;
}

struct LossValues {
    double acc = 0.0;
    double full = 0.0;
    double filter = 0.0;
    double baseline = 0.0;
    double stop = 0.0;
    double total = 0.0;

    LossValues& operator+=(const LossValues& o) {
        acc += o.acc;
        full += o.full;
        filter += o.filter;
        baseline += o.baseline;
        stop += o.stop;
        total += o.total;
        return *this;
    }
    bool finite() const {
        return std::isfinite(acc) && std::isfinite(full) && std::isfinite(filter) && std::isfinite(baseline) &&
               std::isfinite(stop) && std::isfinite(total);
    }
};

/// Builds the five loss terms for one rollout and backpropagates
/// `scale * total` into the model's parameter gradients.
inline LossValues backward_episode(Rollout& r, Model& m, std::span<const double> sample, const TrainConfig& cfg,
                                   double scale) {
    auto& tape = r.tape;
    const auto& traj = r.traj;
    const auto rets = returns(traj.reward.total, traj.steps.size(), cfg.gamma);
    std::vector<double> base;
    for (const auto& st : traj.steps) base.push_back(st.baseline);
    const auto labels = stop_labels(traj.r_stop);

    const auto cls = loss_classification(tape, m, r.final_logits, sample, traj.label);
    const Var lf = loss_filter(tape, r.log_probs, rets, base);
    const Var lb = loss_baseline(tape, r.baselines, rets);
    const Var ls = loss_stop(tape, r.stop_probs, labels);
    const Var total = tape.sum({cls.total, lf, lb, ls});

    LossValues v;
    v.acc = tape.item(cls.acc);
    v.full = cls.full ? tape.item(*cls.full) : 0.0;
    v.filter = tape.item(lf);
    v.baseline = tape.item(lb);
    v.stop = tape.item(ls);
    v.total = tape.item(total);
    if (!v.finite()) return v;
    tape.backward(tape.scale(total, scale));
    return v;
}

struct EpochRecord {
    std::size_t epoch = 0;
    LossValues loss;  // mean per episode
    double val_reward = 0.0;
    double val_f1 = 0.0;
    double val_savings = 0.0;
};

inline const char* kHistoryHeader = "epoch,loss_acc,loss_full,loss_filter,loss_baseline,loss_stop,loss_total,val_reward,val_f1,val_savings";

inline std::string history_csv(const std::vector<EpochRecord>& h) {
    std::ostringstream os;
    os << kHistoryHeader << "\n";
    using detail::format_double;
    for (const auto& e : h)
        os << e.epoch << ',' << format_double(e.loss.acc) << ',' << format_double(e.loss.full) << ','
           << format_double(e.loss.filter) << ',' << format_double(e.loss.baseline) << ',' << format_double(e.loss.stop)
           << ',' << format_double(e.loss.total) << ',' << format_double(e.val_reward) << ',' << format_double(e.val_f1)
           << ',' << format_double(e.val_savings) << "\n";
    return os.str();
}

struct TrainOptions {
    /// When set, training state is written here after every epoch and an
    /// existing state is resumed from.
    std::filesystem::path state_dir;
    /// Return early after this epoch (1-based), as if interrupted.
    std::optional<std::size_t> stop_after_epoch;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    bool completed = false;
};

namespace detail {

inline void copy_prefixed(const ParamStore& from, ParamStore& to, const std::string& prefix) {
    for (const auto& t : from.tensors()) to.add(prefix + t.name, t.shape).values = t.values;
}

inline void restore_prefixed(const ParamStore& from, ParamStore& to, const std::string& prefix) {
    for (auto& t : to.tensors()) {
        const auto& src = from.get(prefix + t.name);
        if (src.values.size() != t.values.size()) throw InputError("training state does not match the model");
        t.values = src.values;
    }
}

inline nlohmann::json epoch_json(const EpochRecord& e) {
    return {{"epoch", e.epoch},       {"acc", e.loss.acc},           {"full", e.loss.full},
            {"filter", e.loss.filter}, {"baseline", e.loss.baseline}, {"stop", e.loss.stop},
            {"total", e.loss.total},   {"val_reward", e.val_reward},  {"val_f1", e.val_f1},
            {"val_savings", e.val_savings}};
}

inline EpochRecord epoch_from_json(const nlohmann::json& j) {
    EpochRecord e;
    e.epoch = j.at("epoch").get<std::size_t>();
    e.loss.acc = j.at("acc").get<double>();
    e.loss.full = j.at("full").get<double>();
    e.loss.filter = j.at("filter").get<double>();
    e.loss.baseline = j.at("baseline").get<double>();
    e.loss.stop = j.at("stop").get<double>();
    e.loss.total = j.at("total").get<double>();
    e.val_reward = j.at("val_reward").get<double>();
    e.val_f1 = j.at("val_f1").get<double>();
    e.val_savings = j.at("val_savings").get<double>();
    return e;
}

inline void save_train_state(const std::filesystem::path& dir, const ParamStore& current, const ParamStore& best,
                             const Adam& adam, const TrainResult& res) {
    std::filesystem::create_directories(dir);
    ParamStore bundle;
    copy_prefixed(current, bundle, "cur/");
    copy_prefixed(best, bundle, "best/");
    adam.export_state(bundle);
    checkpoint::save(bundle, (dir / "train_state.params").string());
    nlohmann::json j;
    j["best_epoch"] = res.best_epoch;
    j["best_score"] = res.best_score;
    j["history"] = nlohmann::json::array();
    for (const auto& e : res.history) j["history"].push_back(epoch_json(e));
    write_text(dir / "train_state.json", j.dump(2) + "\n");
}

inline bool load_train_state(const std::filesystem::path& dir, ParamStore& current, ParamStore& best, Adam& adam,
                             TrainResult& res) {
    if (dir.empty() || !std::filesystem::exists(dir / "train_state.json")) return false;
    const ParamStore bundle = checkpoint::load((dir / "train_state.params").string());
    restore_prefixed(bundle, current, "cur/");
    restore_prefixed(bundle, best, "best/");
    adam.import_state(bundle);
    std::ifstream in(dir / "train_state.json");
    nlohmann::json j;
    in >> j;
    res.best_epoch = j.at("best_epoch").get<std::size_t>();
    res.best_score = j.at("best_score").get<double>();
    res.history.clear();
    for (const auto& e : j.at("history")) res.history.push_back(epoch_from_json(e));
    return true;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

} // namespace detail

/// Joint training of encoder, policy heads and classifier. After every epoch
/// the inference-mode policy is scored on `val` by mean episode reward; the
/// model ends up holding the parameters of the best-scoring epoch.
inline TrainResult train(Model& m, const Dataset& train_set, const Dataset& val, const TrainConfig& cfg,
                         const TrainOptions& opts = {}) {
    cfg.validate();
    if (train_set.n_samples() == 0) throw InputError("empty training set");
    if (val.n_samples() == 0) throw InputError("empty validation set");
    Adam adam(AdamConfig{cfg.learning_rate});
    TrainResult res;
    ParamStore best = m.params;
    detail::load_train_state(opts.state_dir, m.params, best, adam, res);
    const RngStream root(cfg.seed);

    for (std::size_t epoch = res.history.size() + 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = detail::shuffled_indices(train_set.n_samples(), root.derive("shuffle", epoch));
        RngStream beta_rng = root.derive("beta", epoch);
        LossValues sum;
        for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
            const std::size_t end = std::min(order.size(), start + cfg.minibatch);
            const double scale = 1.0 / static_cast<double>(end - start);
            for (std::size_t p = start; p < end; ++p) {
                const std::size_t i = order[p];
                auto dump = [&] {
                    if (!opts.state_dir.empty()) checkpoint::save(m.params, (opts.state_dir / "numeric_failure.params").string());
                };
                LossValues v;
                try {
                    auto roll = run_episode_train(m, train_set.sample(i), train_set.labels[i], cfg, beta_rng);
                    v = backward_episode(roll, m, train_set.sample(i), cfg, scale);
                } catch (const DomainError& e) {
                    // Inputs were validated up front, so this comes from diverged parameters.
                    dump();
                    throw NumericError("epoch " + std::to_string(epoch) + ", sample " + std::to_string(i) + ": " + e.what());
                }
                if (!v.finite()) {
                    dump();
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + std::to_string(i) +
                                       " (acc " + std::to_string(v.acc) + ", filter " + std::to_string(v.filter) +
                                       ", baseline " + std::to_string(v.baseline) + ", stop " + std::to_string(v.stop) + ")");
                }
                sum += v;
            }
            adam.step(m.params);
            if (!m.params.all_finite()) throw NumericError("non-finite parameters after update at epoch " + std::to_string(epoch));
        }
        EpochRecord rec;
        rec.epoch = epoch;
        const double n = static_cast<double>(order.size());
        rec.loss = LossValues{sum.acc / n, sum.full / n, sum.filter / n, sum.baseline / n, sum.stop / n, sum.total / n};
        const auto rep = evaluate(m, val, cfg.delta, cfg.mask_value);
        rec.val_reward = rep.mean_reward;
        rec.val_f1 = rep.f1;
        rec.val_savings = rep.mean_savings;
        res.history.push_back(rec);
        if (rec.val_reward > res.best_score) {
            res.best_score = rec.val_reward;
            res.best_epoch = epoch;
            best.copy_values_from(m.params);
        }
        if (opts.on_epoch) opts.on_epoch(rec);
        if (!opts.state_dir.empty()) detail::save_train_state(opts.state_dir, m.params, best, adam, res);
        if (opts.stop_after_epoch && epoch >= *opts.stop_after_epoch && epoch < cfg.epochs) return res;
    }
    m.params.copy_values_from(best);
    res.completed = true;
    return res;
}

/// Splits `data` into train/validation (stratified) and trains.
inline TrainResult train(Model& m, const Dataset& data, const TrainConfig& cfg, const TrainOptions& opts = {}) {
    const auto split = split_train_val(data, cfg.val_fraction, cfg.seed);
    return train(m, split.train, split.val, cfg, opts);
}

// ---- classifier-only training (used by the time-truncation baseline) --------

struct ClassifierTrainConfig {
    std::size_t epochs = 100;
    std::size_t minibatch = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    std::size_t maps = 32;
    std::size_t kernel_length = 9;
};

struct TrainedClassifier {
    ClassifierShape shape;
    ParamStore params;
    std::size_t best_epoch = 0;
    double best_val_f1 = -1.0;
};

inline double classifier_f1(ParamStore& params, const ClassifierShape& shape, const Dataset& d) {
    std::vector<std::size_t> preds;
    for (std::size_t i = 0; i < d.n_samples(); ++i) preds.push_back(classifier_predict(params, shape, d.sample(i)));
    return f1_macro(preds, d.labels, d.n_classes());
}

/// Cross-entropy training on unmasked inputs; keeps the epoch with the best
/// validation macro F1 (earliest on ties).
inline TrainedClassifier train_classifier(const Dataset& train_set, const Dataset& val, const ClassifierTrainConfig& cfg) {
    if (train_set.n_samples() == 0 || val.n_samples() == 0) throw InputError("classifier training needs train and validation samples");
    TrainedClassifier out;
    out.shape = ClassifierShape{train_set.n_channels, train_set.length, train_set.n_classes(), cfg.maps, cfg.kernel_length};
    const RngStream root(cfg.seed);
    RngStream init = root.derive("classifier-init");
    add_classifier_params(out.params, out.shape, init);
    ParamStore best = out.params;
    Adam adam(AdamConfig{cfg.learning_rate});
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = detail::shuffled_indices(train_set.n_samples(), root.derive("classifier-shuffle", epoch));
        for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
            const std::size_t end = std::min(order.size(), start + cfg.minibatch);
            const double scale = 1.0 / static_cast<double>(end - start);
            for (std::size_t p = start; p < end; ++p) {
                Tape tape;
                const Var logits = classifier_forward(tape, out.params, out.shape, train_set.sample(order[p]));
                const Var loss = tape.softmax_cross_entropy(logits, train_set.labels[order[p]]);
                if (!std::isfinite(tape.item(loss))) throw NumericError("non-finite classifier loss at epoch " + std::to_string(epoch));
                tape.backward(tape.scale(loss, scale));
            }
            adam.step(out.params);
        }
        const double f1 = classifier_f1(out.params, out.shape, val);
        if (f1 > out.best_val_f1) {
            out.best_val_f1 = f1;
            out.best_epoch = epoch;
            best.copy_values_from(out.params);
        }
    }
    out.params.copy_values_from(best);
    return out;
}

} // namespace charlee
