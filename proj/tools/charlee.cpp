// Command-line driver: synth | rank | train | eval | toee | report.
//
// Exit codes: 0 success, 1 internal error, 2 configuration error,
// 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "charlee/pipeline.hpp"

namespace {

using namespace charlee;

struct CommonFlags {
    std::string config_path;
    std::optional<double> delta;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config,-c", f.config_path, "JSON run configuration (defaults apply when omitted)");
    cmd->add_option("--delta", f.delta, "savings factor, overrides the config");
    cmd->add_option("--seed", f.seed, "run a single seed instead of the configured list");
    cmd->add_option("--out", f.out, "output root, overrides the config and $CHARLEE_OUT");
    cmd->add_flag("--quiet,-q", f.quiet, "suppress progress output");
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig c = f.config_path.empty() ? RunConfig{} : load_run_config(f.config_path);
    if (f.delta) c.delta = *f.delta;
    if (f.seed) c.seeds = {*f.seed};
    if (f.out) c.output_dir = *f.out;
    c.validate();
    return c;
}

int run(int argc, char** argv) {
    CLI::App app{"Channel- and time-adaptive early classification of multivariate time series"};
    app.require_subcommand(1);
    CommonFlags flags;
    std::optional<std::size_t> stop_after;
    std::optional<double> target_savings;
    std::vector<std::string> report_dirs;
    std::string report_out;
    double margin = 0.01;

    auto* synth = app.add_subcommand("synth", "write the synthetic benchmark and its ideal utilization table");
    auto* rank = app.add_subcommand("rank", "rank channels of the training set");
    auto* train_cmd = app.add_subcommand("train", "train one model per seed (resumes interrupted runs)");
    auto* eval = app.add_subcommand("eval", "evaluate trained models on the test split");
    auto* toee = app.add_subcommand("toee", "train the time-only truncation baseline at matched savings");
    auto* report = app.add_subcommand("report", "combine run summaries into a comparison table");
    for (auto* cmd : {synth, rank, train_cmd, eval, toee, report}) add_common(cmd, flags);
    train_cmd->add_option("--stop-after-epoch", stop_after, "return after this epoch, leaving resumable state");
    toee->add_option("--target-savings", target_savings, "truncation savings; default matches evaluated runs");
    report->add_option("dirs", report_dirs, "directories to scan for summary.csv / toee.csv (default: output root)");
    report->add_option("--report-file", report_out, "also write the table here");
    report->add_option("--margin", margin, "F1 margin for win/loss")->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const RunConfig cfg = resolve(flags);
    const auto root = output_root(cfg);
    auto say = [&](const std::string& s) {
        if (!flags.quiet) std::cerr << s << "\n";
    };

    if (synth->parsed()) {
        say("wrote " + cmd_synth(cfg, root).string());
    } else if (rank->parsed()) {
        say("wrote " + cmd_rank(cfg, root).string());
    } else if (train_cmd->parsed()) {
        TrainRunOptions opts;
        opts.stop_after_epoch = stop_after;
        opts.on_epoch = [&](std::uint64_t seed, const EpochRecord& e) {
            if (flags.quiet) return;
            std::fprintf(stderr, "seed %llu epoch %zu loss %.4f val_reward %.4f val_f1 %.4f val_savings %.4f\n",
                         static_cast<unsigned long long>(seed), e.epoch, e.loss.total, e.val_reward, e.val_f1,
                         e.val_savings);
        };
        for (const auto& d : cmd_train(cfg, root, opts)) say("run " + d.string());
    } else if (eval->parsed()) {
        const auto reps = cmd_eval(cfg, root);
        for (std::size_t i = 0; i < reps.size(); ++i)
            std::printf("seed %llu f1 %.4f savings %.4f\n", static_cast<unsigned long long>(reps[i].seed), reps[i].f1,
                        reps[i].mean_savings);
    } else if (toee->parsed()) {
        RunConfig c = cfg;
        if (target_savings) c.toee_target_savings = *target_savings;
        c.validate();
        const auto res = cmd_toee(c, root);
        std::printf("toee target %.4f kept %zu mean f1 %.4f\n", res.target_savings, res.kept_length, res.mean_f1);
    } else if (report->parsed()) {
        std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
        if (dirs.empty()) dirs.push_back(root);
        const auto table = report_csv(collect_summaries(dirs), margin);
        std::cout << table;
        if (!report_out.empty()) write_text(report_out, table);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const charlee::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const charlee::InputError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const charlee::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
