#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "charlee/baselines.hpp"
#include "charlee/config.hpp"
#include "charlee/data/formats.hpp"
#include "charlee/data/synthetic.hpp"
#include "charlee/data/transforms.hpp"
#include "charlee/evaluation.hpp"
#include "charlee/models/model.hpp"
#include "charlee/ranking.hpp"
#include "charlee/training.hpp"

// Filesystem layout under the output root:
//
//   <root>/<dataset>/data/                    cmd_synth: train/test .ts and .csv, ideal_utilization.json
//   <root>/<dataset>/ranking.json             cmd_rank
//   <root>/<dataset>/delta_<d>/seed_<s>/      cmd_train and cmd_eval, one directory per run
//   <root>/<dataset>/delta_<d>/toee.csv       cmd_toee
//
// Every directory written gets a manifest.json that depends only on the
// configuration, so reruns are byte-identical; wall-clock data goes to
// metadata.json next to it.

namespace charlee {

inline constexpr const char* kSummaryHeader = "dataset,delta,seed,f1,savings,method";

struct LoadedData {
    Dataset train;
    Dataset test;
    std::optional<SyntheticData> synthetic_train;
};

inline LoadedData load_data(const RunConfig& c) {
    LoadedData out;
    if (c.dataset.is_synthetic()) {
        auto tr = generate_synthetic(c.dataset.synthetic, "train");
        out.test = generate_synthetic(c.dataset.synthetic, "test").dataset;
        out.train = tr.dataset;
        out.synthetic_train = std::move(tr);
    } else {
        out.train = load_dataset(c.dataset.train_path);
        out.test = load_dataset(c.dataset.test_path);
        out.train.validate();
        out.test.validate();
        if (out.train.n_channels != out.test.n_channels || out.train.length != out.test.length ||
            out.train.class_names != out.test.class_names)
            throw InputError("train and test datasets disagree on shape or classes");
        if (c.dataset.znormalize) {
            out.train = znormalize(out.train);
            out.test = znormalize(out.test);
        }
    }
    out.train.name = out.test.name = c.dataset.name;
    return out;
}

inline std::string delta_label(double delta) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", delta);
    return buf;
}

inline std::filesystem::path dataset_dir(const std::filesystem::path& root, const RunConfig& c) { return root / c.dataset.name; }
inline std::filesystem::path delta_dir(const std::filesystem::path& root, const RunConfig& c) {
    return dataset_dir(root, c) / ("delta_" + delta_label(c.delta));
}
inline std::filesystem::path run_dir(const std::filesystem::path& root, const RunConfig& c, std::uint64_t seed) {
    return delta_dir(root, c) / ("seed_" + std::to_string(seed));
}

namespace detail {

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw InputError("cannot open " + p.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

inline void write_manifest(const std::filesystem::path& dir, const std::string& command, const RunConfig& c,
                           nlohmann::json extra, std::vector<std::string> files) {
    // The output root is implied by where the manifest lives; leaving it out
    // keeps manifests comparable across roots.
    RunConfig echo = c;
    echo.output_dir.reset();
    nlohmann::json m = {{"command", command}, {"dataset", c.dataset.name}, {"config", to_json(echo)}, {"files", files}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_json(dir / "manifest.json", m);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[64];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    write_json(dir / "metadata.json", {{"command", command}, {"finished_at", stamp}});
}

inline std::string summary_row(const std::string& dataset, double delta, std::uint64_t seed, double f1, double savings,
                               const std::string& method) {
    return dataset + "," + detail::format_double(delta) + "," + std::to_string(seed) + "," + detail::format_double(f1) + "," +
           detail::format_double(savings) + "," + method + "\n";
}

inline GroupAssignment rank_and_group(const RunConfig& c, const Dataset& train, ChannelRanking* ranking_out = nullptr) {
    const auto slices = slice_boundaries(train.length, c.checkpoints());
    auto ranking = weighted_rank(train, slices, c.w_last);
    auto groups = group_channels(ranking, c.groups_for(train.n_channels));
    if (ranking_out) *ranking_out = std::move(ranking);
    return groups;
}

} // namespace detail

/// Writes the synthetic benchmark (train and test splits) and its ideal
/// utilization table. Returns the data directory.
inline std::filesystem::path cmd_synth(const RunConfig& c, const std::filesystem::path& root) {
    if (!c.dataset.is_synthetic()) throw ConfigError("synth needs a synthetic dataset config (no dataset.train)");
    const auto dir = dataset_dir(root, c) / "data";
    std::filesystem::create_directories(dir);
    auto tr = generate_synthetic(c.dataset.synthetic, "train");
    auto te = generate_synthetic(c.dataset.synthetic, "test");
    tr.dataset.name = te.dataset.name = c.dataset.name;
    write_ts(tr.dataset, (dir / "train.ts").string());
    write_ts(te.dataset, (dir / "test.ts").string());
    write_csv(tr.dataset, (dir / "train.csv").string());
    write_csv(te.dataset, (dir / "test.csv").string());
    detail::write_json(dir / "ideal_utilization.json", ideal_table_json(tr));
    detail::write_manifest(dir, "synth", c, nlohmann::json::object(),
                           {"train.ts", "test.ts", "train.csv", "test.csv", "ideal_utilization.json"});
    return dir;
}

/// Ranks the channels of the training set. Returns the path of ranking.json.
inline std::filesystem::path cmd_rank(const RunConfig& c, const std::filesystem::path& root) {
    const auto data = load_data(c);
    ChannelRanking ranking;
    const auto groups = detail::rank_and_group(c, data.train, &ranking);
    auto report = ranking_report(ranking, groups);
    report["channel_names"] = data.train.channel_names;
    const auto dir = dataset_dir(root, c);
    detail::write_json(dir / "ranking.json", report);
    return dir / "ranking.json";
}

struct TrainRunOptions {
    /// Forwarded to TrainOptions::stop_after_epoch (simulated interruption).
    std::optional<std::size_t> stop_after_epoch;
    std::function<void(std::uint64_t, const EpochRecord&)> on_epoch;
};

/// Trains one model per seed. Each run keeps resumable state in
/// `<run>/state`; a rerun continues from it. Returns the run directories.
inline std::vector<std::filesystem::path> cmd_train(const RunConfig& c, const std::filesystem::path& root,
                                                    const TrainRunOptions& run_opts = {}) {
    c.validate();
    const auto data = load_data(c);
    std::vector<std::filesystem::path> dirs;
    for (auto seed : c.seeds) {
        const auto dir = run_dir(root, c, seed);
        std::filesystem::create_directories(dir);
        const auto tc = c.train_config(seed);
        const auto split = split_train_val(data.train, c.val_fraction, seed);
        ChannelRanking ranking;
        auto groups = detail::rank_and_group(c, split.train, &ranking);
        ModelConfig mc;
        mc.n_channels = data.train.n_channels;
        mc.length = data.train.length;
        mc.n_classes = data.train.n_classes();
        mc.n_checkpoints = c.checkpoints();
        mc.encoder = EncoderShape{c.model.encoder_kernels, c.model.encoder_kernel_length};
        mc.hidden = c.model.hidden;
        mc.classifier_maps = c.model.classifier_maps;
        mc.classifier_kernel = c.model.classifier_kernel;
        Model m = create_model(mc, groups, seed);
        m.ranking = ranking_report(ranking, m.groups);
        TrainOptions opts;
        opts.state_dir = dir / "state";
        opts.stop_after_epoch = run_opts.stop_after_epoch;
        if (run_opts.on_epoch) opts.on_epoch = [&, seed](const EpochRecord& e) { run_opts.on_epoch(seed, e); };
        const auto res = train(m, split.train, split.val, tc, opts);
        write_text(dir / "history.csv", history_csv(res.history));
        if (!res.completed) {
            dirs.push_back(dir);
            continue;
        }
        save_model(m, dir / "model");
        detail::write_manifest(dir, "train", c,
                               {{"delta", c.delta}, {"seed", seed}, {"best_epoch", res.best_epoch},
                                {"best_val_reward", res.best_score}, {"split_warnings", split.warnings}},
                               {"model.params", "model.json", "history.csv"});
        dirs.push_back(dir);
    }
    return dirs;
}

/// Evaluates the trained model of every seed on the test split. Writes
/// report.json, traces.jsonl and a one-row summary.csv per run.
inline std::vector<EvalReport> cmd_eval(const RunConfig& c, const std::filesystem::path& root) {
    const auto data = load_data(c);
    std::vector<EvalReport> reports;
    for (auto seed : c.seeds) {
        const auto dir = run_dir(root, c, seed);
        if (!std::filesystem::exists(dir / "model.json"))
            throw InputError("no trained model in " + dir.string() + " (run train first)");
        Model m = load_model(dir / "model");
        auto rep = evaluate(m, data.test, c.delta, c.mask_value);
        rep.seed = seed;
        rep.config = to_json(c);
        auto j = to_json(rep, data.test.class_names);
        if (data.synthetic_train) {
            std::vector<std::vector<double>> ideal;
            for (const auto& u : data.synthetic_train->ideal_utilization) ideal.emplace_back(u.begin(), u.end());
            nlohmann::json rows = nlohmann::json::array();
            for (const auto& r : synthetic_alignment(rep, ideal))
                rows.push_back({{"class", data.test.class_names[r.cls]}, {"l1", r.l1},
                                {"achieved_savings", r.achieved_savings}, {"ideal_savings", r.ideal_savings},
                                {"savings_gap", r.savings_gap}});
            j["alignment"] = rows;
        }
        detail::write_json(dir / "report.json", j);
        write_text(dir / "traces.jsonl", traces_jsonl(rep));
        write_text(dir / "summary.csv", std::string(kSummaryHeader) + "\n" +
                                            detail::summary_row(c.dataset.name, c.delta, seed, rep.f1, rep.mean_savings, "charlee"));
        detail::write_manifest(dir, "eval", c, {{"delta", c.delta}, {"seed", seed}},
                               {"report.json", "traces.jsonl", "summary.csv"});
        reports.push_back(std::move(rep));
    }
    return reports;
}

/// Mean test savings over the evaluated runs of this delta.
inline double matched_savings(const RunConfig& c, const std::filesystem::path& root) {
    double sum = 0.0;
    std::size_t n = 0;
    for (auto seed : c.seeds) {
        const auto p = run_dir(root, c, seed) / "report.json";
        if (!std::filesystem::exists(p)) continue;
        sum += detail::read_json(p).at("mean_savings").get<double>();
        ++n;
    }
    if (n == 0) throw ConfigError("no evaluated runs to match savings against; set toee_target_savings or run eval first");
    return sum / static_cast<double>(n);
}

/// Trains the time-only baseline per seed at the configured (or matched)
/// savings and writes toee.csv. Returns the result.
inline ToeeResult cmd_toee(const RunConfig& c, const std::filesystem::path& root) {
    const auto data = load_data(c);
    const double target = c.toee_target_savings ? *c.toee_target_savings : matched_savings(c, root);
    const auto res = toee_baseline(data.train, data.test, target, c.classifier_config(0), c.seeds, c.val_fraction);
    const double realized = 1.0 - static_cast<double>(res.kept_length) / static_cast<double>(data.train.length);
    std::string csv = std::string(kSummaryHeader) + "\n";
    for (std::size_t i = 0; i < res.seeds.size(); ++i)
        csv += detail::summary_row(c.dataset.name, c.delta, res.seeds[i], res.f1[i], realized, "toee");
    const auto dir = delta_dir(root, c);
    write_text(dir / "toee.csv", csv);
    detail::write_json(dir / "toee.json", {{"target_savings", target}, {"kept_length", res.kept_length},
                                           {"realized_savings", realized}, {"mean_f1", res.mean_f1}});
    return res;
}

// ---- reporting ---------------------------------------------------------------

enum class Outcome { win, tie, loss };

inline const char* to_string(Outcome o) {
    switch (o) {
    case Outcome::win: return "win";
    case Outcome::tie: return "tie";
    case Outcome::loss: return "loss";
    }
    return "?";
}

/// A method wins when its mean F1 is more than `margin` above the other's.
inline Outcome compare_f1(double charlee_f1, double toee_f1, double margin = 0.01) {
    const double gap = charlee_f1 - toee_f1;
    if (gap > margin) return Outcome::win;
    if (gap < -margin) return Outcome::loss;
    return Outcome::tie;
}

struct SummaryRow {
    std::string dataset;
    double delta = 0.0;
    std::uint64_t seed = 0;
    double f1 = 0.0;
    double savings = 0.0;
    std::string method;
};

inline std::vector<SummaryRow> parse_summary_csv(std::string_view text, const std::string& origin = "summary") {
    std::vector<SummaryRow> rows;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != kSummaryHeader) throw ParseError(origin + ": unexpected header", line_no);
            continue;
        }
        const auto f = detail::split(line, ',');
        if (f.size() != 6) throw ParseError(origin + ": expected 6 fields", line_no);
        SummaryRow r;
        r.dataset = std::string(f[0]);
        r.delta = detail::parse_value(f[1], line_no);
        r.seed = detail::parse_count(f[2], line_no);
        r.f1 = detail::parse_value(f[3], line_no);
        r.savings = detail::parse_value(f[4], line_no);
        r.method = std::string(f[5]);
        if (r.method != "charlee" && r.method != "toee") throw ParseError(origin + ": unknown method " + r.method, line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Collects summary.csv and toee.csv files found under `dirs` (recursively).
inline std::vector<SummaryRow> collect_summaries(const std::vector<std::filesystem::path>& dirs) {
    std::vector<std::filesystem::path> files;
    for (const auto& d : dirs) {
        if (!std::filesystem::exists(d)) throw InputError("no such directory: " + d.string());
        if (std::filesystem::is_regular_file(d)) {
            files.push_back(d);
            continue;
        }
        for (const auto& e : std::filesystem::recursive_directory_iterator(d)) {
            const auto name = e.path().filename().string();
            if (e.is_regular_file() && (name == "summary.csv" || name == "toee.csv")) files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<SummaryRow> rows;
    for (const auto& f : files) {
        const auto part = parse_summary_csv(detail::read_file(f.string()), f.string());
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single value
    std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd r;
    r.n = v.size();
    if (v.empty()) return r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return r;
}

inline constexpr const char* kReportHeader =
    "dataset,delta,charlee_f1_mean,charlee_f1_std,charlee_savings_mean,charlee_n,toee_f1_mean,toee_f1_std,"
    "toee_savings_mean,toee_n,outcome";

/// One row per (dataset, delta), sorted by dataset then delta. The outcome
/// column is empty when either method has no rows.
inline std::string report_csv(const std::vector<SummaryRow>& rows, double margin = 0.01) {
    struct Acc {
        std::vector<double> f1[2], savings[2];
    };
    std::map<std::pair<std::string, double>, Acc> groups;
    for (const auto& r : rows) {
        auto& a = groups[{r.dataset, r.delta}];
        const int m = r.method == "charlee" ? 0 : 1;
        a.f1[m].push_back(r.f1);
        a.savings[m].push_back(r.savings);
    }
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& [key, a] : groups) {
        const auto cf = mean_std(a.f1[0]), tf = mean_std(a.f1[1]);
        const auto cs = mean_std(a.savings[0]), ts = mean_std(a.savings[1]);
        auto num = [](const MeanStd& s, double v) { return s.n ? detail::format_double(v) : std::string(); };
        out += key.first + "," + detail::format_double(key.second) + "," + num(cf, cf.mean) + "," + num(cf, cf.std) + "," +
               num(cs, cs.mean) + "," + std::to_string(cf.n) + "," + num(tf, tf.mean) + "," + num(tf, tf.std) + "," +
               num(ts, ts.mean) + "," + std::to_string(tf.n) + "," +
               (cf.n && tf.n ? to_string(compare_f1(cf.mean, tf.mean, margin)) : "") + "\n";
    }
    return out;
}

} // namespace charlee
