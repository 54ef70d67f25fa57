#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "charlee/data/dataset.hpp"
#include "charlee/episode.hpp"
#include "charlee/errors.hpp"
#include "charlee/models/model.hpp"
#include "charlee/rollout.hpp"

namespace charlee {

/// Stop threshold for a savings factor: 1 - delta, clamped to [0.05, 0.999].
inline double stop_threshold(double delta) { return std::clamp(1.0 - delta, 0.05, 0.999); }

struct EvalTrace {
    std::size_t sample_id = 0;
    std::size_t label = 0;
    std::size_t prediction = 0;
    std::vector<double> utilization;
    double cost = 0.0;
    double savings = 0.0;
    /// Last checkpoint at which a decision was taken (1..N).
    std::size_t stop_checkpoint = 0;
    ExitReason exit = ExitReason::running;
    RewardBreakdown reward;
};

inline nlohmann::json to_json(const EvalTrace& t) {
    return {{"sample_id", t.sample_id},
            {"utilization", t.utilization},
            {"cost", t.cost},
            {"savings", t.savings},
            {"stop_checkpoint", t.stop_checkpoint},
            {"exit", to_string(t.exit)},
            {"prediction", t.prediction},
            {"label", t.label},
            {"reward",
             {{"r_class", t.reward.r_class},
              {"r_savings", t.reward.r_savings},
              {"delta", t.reward.delta},
              {"total", t.reward.total}}}};
}

/// Deterministic inference: the filter action is the Beta mean and the stop
/// head ends processing when its output exceeds stop_threshold(delta).
inline EvalTrace run_episode_eval(Model& m, std::span<const double> sample, std::size_t label, double delta,
                                  std::size_t sample_id = 0, double mask_value = 0.0) {
    const std::size_t C = m.config.n_channels, N = m.config.n_checkpoints;
    const double tau = stop_threshold(delta);
    RunningStats stats(m.groups, m.config.encoder, m.config.length, /*track_jacobian=*/false);
    stats.encode_slice(m.params, slice_values(sample, m.slices, C, 0), m.slices.length(0),
                       std::vector<bool>(m.groups.n_groups, true));
    Episode ep(m.n_slices(), m.qset);
    std::vector<double> history;
    while (!ep.terminal()) {
        const std::size_t n = ep.checkpoint() + 1;
        Tape tape;
        const Var state = tape.constant(state_vector(stats, history, n, N));
        const auto fo = filter_forward(tape, m.params, m.filter_head, state);
        const double action = beta_mean(tape.item(fo.alpha), tape.item(fo.beta));
        const double snapped = apply_filter_action(ep.kept(), action, m.qset);
        const double a_s = tape.item(stop_forward(tape, m.params, m.stop_head, state, snapped));
        ep.step(snapped, a_s > tau);
        history.push_back(snapped);
        if (!ep.terminal())
            stats.encode_slice(m.params, slice_values(sample, m.slices, C, n), m.slices.length(n),
                               active_groups(m.groups, snapped));
    }
    EvalTrace tr;
    tr.sample_id = sample_id;
    tr.label = label;
    tr.utilization = ep.utilization();
    tr.prediction = classifier_predict(m.params, m.classifier, masked_input(m, sample, tr.utilization, mask_value));
    tr.cost = ep.cost();
    tr.savings = ep.savings();
    tr.stop_checkpoint = ep.checkpoint();
    tr.exit = ep.exit_reason();
    tr.reward = total_reward(tr.prediction == label, tr.cost, m.n_slices(), delta);
    return tr;
}

/// Unweighted mean of per-class F1 over all `n_classes` classes. A class
/// that appears in neither predictions nor labels scores 0.
inline double f1_macro(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                       std::size_t n_classes) {
    if (predictions.size() != labels.size()) throw InputError("f1_macro: length mismatch");
    if (n_classes == 0) throw InputError("f1_macro: no classes");
    std::vector<double> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] >= n_classes || labels[i] >= n_classes) throw InputError("f1_macro: class index out of range");
        if (predictions[i] == labels[i]) {
            tp[labels[i]] += 1;
        } else {
            fp[predictions[i]] += 1;
            fn[labels[i]] += 1;
        }
    }
    double total = 0.0;
    for (std::size_t k = 0; k < n_classes; ++k) {
        const double denom = 2 * tp[k] + fp[k] + fn[k];
        total += denom > 0 ? 2 * tp[k] / denom : 0.0;
    }
    return total / static_cast<double>(n_classes);
}

struct EvalReport {
    double f1 = 0.0;
    double accuracy = 0.0;
    double mean_savings = 0.0;
    double mean_reward = 0.0;
    double delta = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> per_class_utilization;  // K x S, mean over samples of that class
    std::vector<std::size_t> per_class_count;
    std::vector<EvalTrace> traces;
    nlohmann::json config = nlohmann::json::object();
};

/// Aggregates traces into report statistics. Classes without samples keep
/// an all-zero mean utilization.
inline EvalReport aggregate_traces(std::vector<EvalTrace> traces, std::size_t n_classes, std::size_t n_slices,
                                   double delta) {
    if (traces.empty()) throw InputError("cannot evaluate an empty dataset");
    EvalReport r;
    r.delta = delta;
    r.per_class_utilization.assign(n_classes, std::vector<double>(n_slices, 0.0));
    r.per_class_count.assign(n_classes, 0);
    std::vector<std::size_t> preds, labels;
    std::size_t correct = 0;
    for (const auto& t : traces) {
        preds.push_back(t.prediction);
        labels.push_back(t.label);
        correct += t.prediction == t.label;
        r.mean_savings += t.savings;
        r.mean_reward += t.reward.total;
        ++r.per_class_count[t.label];
        for (std::size_t s = 0; s < n_slices; ++s) r.per_class_utilization[t.label][s] += t.utilization[s];
    }
    const double n = static_cast<double>(traces.size());
    r.mean_savings /= n;
    r.mean_reward /= n;
    r.accuracy = static_cast<double>(correct) / n;
    r.f1 = f1_macro(preds, labels, n_classes);
    for (std::size_t k = 0; k < n_classes; ++k)
        if (r.per_class_count[k])
            for (auto& v : r.per_class_utilization[k]) v /= static_cast<double>(r.per_class_count[k]);
    r.traces = std::move(traces);
    return r;
}

inline EvalReport evaluate(Model& m, const Dataset& d, double delta, double mask_value = 0.0) {
    if (d.n_samples() == 0) throw InputError("cannot evaluate an empty dataset");
    if (d.n_channels != m.config.n_channels || d.length != m.config.length)
        throw InputError("dataset shape does not match the model");
    std::vector<EvalTrace> traces;
    traces.reserve(d.n_samples());
    for (std::size_t i = 0; i < d.n_samples(); ++i)
        traces.push_back(run_episode_eval(m, d.sample(i), d.labels[i], delta, i, mask_value));
    return aggregate_traces(std::move(traces), m.config.n_classes, m.n_slices(), delta);
}

inline nlohmann::json to_json(const EvalReport& r, const std::vector<std::string>& class_names = {}) {
    nlohmann::json per_class = nlohmann::json::object();
    for (std::size_t k = 0; k < r.per_class_utilization.size(); ++k) {
        const std::string key = k < class_names.size() ? class_names[k] : std::to_string(k);
        per_class[key] = {{"mean_utilization", r.per_class_utilization[k]}, {"count", r.per_class_count[k]}};
    }
    return {{"f1_macro", r.f1},
            {"accuracy", r.accuracy},
            {"mean_savings", r.mean_savings},
            {"mean_reward", r.mean_reward},
            {"delta", r.delta},
            {"seed", r.seed},
            {"per_class", per_class},
            {"config", r.config}};
}

inline std::string traces_jsonl(const EvalReport& r) {
    std::string out;
    for (const auto& t : r.traces) out += to_json(t).dump() + "\n";
    return out;
}

struct AlignmentRow {
    std::size_t cls = 0;
    std::vector<double> achieved;
    std::vector<double> ideal;
    double l1 = 0.0;
    double achieved_savings = 0.0;
    double ideal_savings = 0.0;
    double savings_gap = 0.0;  // achieved - ideal
};

/// Per-class L1 distance between achieved mean utilization and the ideal schedule.
inline std::vector<AlignmentRow> synthetic_alignment(const EvalReport& r, const std::vector<std::vector<double>>& ideal) {
    if (ideal.size() != r.per_class_utilization.size()) throw InputError("ideal table does not match class count");
    std::vector<AlignmentRow> rows;
    for (std::size_t k = 0; k < ideal.size(); ++k) {
        AlignmentRow row;
        row.cls = k;
        row.achieved = r.per_class_utilization[k];
        row.ideal = ideal[k];
        if (row.ideal.size() != row.achieved.size()) throw InputError("ideal schedule has the wrong slice count");
        for (std::size_t s = 0; s < row.ideal.size(); ++s) row.l1 += std::abs(row.achieved[s] - row.ideal[s]);
        row.achieved_savings = savings_fraction(row.achieved);
        row.ideal_savings = savings_fraction(row.ideal);
        row.savings_gap = row.achieved_savings - row.ideal_savings;
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Average ranks (1-based), ties sharing the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> rank(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t q = i; q <= j; ++q) rank[order[q]] = r;
        i = j + 1;
    }
    return rank;
}

/// Pearson correlation of average ranks. Returns 0 when either side is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InputError("spearman: need two equal-length series of size >= 2");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace charlee
