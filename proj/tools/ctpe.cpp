#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "ctpe/config.hpp"
#include "ctpe/error.hpp"
#include "ctpe/io.hpp"
#include "ctpe/runner.hpp"

using ctpe::config::RunConfig;

namespace {

struct CommonOpts {
    std::string config_path = "ctpe.cfg";
    std::string split = "test";
    std::string out_dir;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_split = false) {
    cmd->add_option("--config", opts.config_path, "run configuration file")->capture_default_str();
    if (with_split)
        cmd->add_option("--split", opts.split, "dataset split")
            ->check(CLI::IsMember({"train", "val", "test"}))
            ->capture_default_str();
    cmd->add_flag("--deterministic", opts.deterministic, "force single-threaded deterministic mode");
    cmd->add_option("--out", opts.out_dir, "override out_dir from the config");
}

RunConfig load_config(const CommonOpts& opts) {
    RunConfig cfg = RunConfig::from_file(opts.config_path);
    if (!opts.out_dir.empty()) cfg.set("out_dir", opts.out_dir);
    if (opts.deterministic) cfg.set("deterministic", "1");
    return cfg;
}

ctpe::data::Split parse_split_or_throw(const std::string& s) {
    const auto split = ctpe::data::parse_split(s);
    if (!split) throw ctpe::usage_error("bad split '" + s + "'");
    return *split;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage attention CNN-LSTM pipeline for PE classification on CTPA studies"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string predictions_path;
    std::string init_config_path = "ctpe.cfg";
    bool check_raw = false;

    auto* init_cmd = app.add_subcommand("init-config", "write a config template with desk-scale defaults");
    init_cmd->add_option("path", init_config_path, "where to write the template")->capture_default_str();

    auto* synth = app.add_subcommand("make-synthetic", "generate a synthetic dataset with planted emboli");
    add_common(synth, opts);
    auto* prep = app.add_subcommand("preprocess", "window HU volumes into 3-channel caches");
    add_common(prep, opts);
    auto* t1 = app.add_subcommand("train-stage1", "train the per-slice CNN classifier");
    add_common(t1, opts);
    auto* ef = app.add_subcommand("extract-features", "export per-slice embeddings with the stage-1 model");
    add_common(ef, opts);
    auto* t2 = app.add_subcommand("train-stage2", "train the BiLSTM + attention sequence model");
    add_common(t2, opts);
    auto* pr = app.add_subcommand("predict", "write per-study predictions for a split");
    add_common(pr, opts, true);
    auto* ev = app.add_subcommand("evaluate", "per-label ROC/AUC report for a split");
    add_common(ev, opts, true);
    auto* cc = app.add_subcommand("check-consistency", "validate a predictions file against the label rules");
    add_common(cc, opts, true);
    cc->add_option("predictions", predictions_path, "predictions file (default: the split's predictions)");
    cc->add_flag("--raw", check_raw, "check the pre-enforcement probabilities");

    CLI11_PARSE(app, argc, argv);

    try {
        if (init_cmd->parsed()) {
            ctpe::io::write_text(init_config_path, ctpe::config::default_config_text());
            std::cout << "wrote " << init_config_path << "\n";
            return 0;
        }

        RunConfig cfg = load_config(opts);

        if (synth->parsed()) {
            ctpe::runner::make_synthetic(cfg);
            std::cout << "synthetic dataset written to " << cfg.get("dataset_root", "data") << "\n";
        } else if (prep->parsed()) {
            const auto stats = ctpe::runner::preprocess(cfg);
            std::cout << "preprocess: " << stats.written << " written, " << stats.skipped
                      << " up-to-date\n";
        } else if (t1->parsed()) {
            const auto result = ctpe::runner::train_stage1_cmd(cfg);
            std::cout << "stage1: best epoch " << result.best_epoch << " val loss "
                      << result.best_val_loss << "\n";
        } else if (ef->parsed()) {
            const auto stats = ctpe::runner::extract_features(cfg);
            std::cout << "extract-features: " << stats.written << " written, " << stats.skipped
                      << " up-to-date\n";
        } else if (t2->parsed()) {
            const auto result = ctpe::runner::train_stage2_cmd(cfg);
            std::cout << "stage2: best epoch " << result.best_epoch << " val loss "
                      << result.best_val_loss << "\n";
        } else if (pr->parsed()) {
            const auto path = ctpe::runner::predict(cfg, parse_split_or_throw(opts.split));
            std::cout << "predictions written to " << path.string() << "\n";
        } else if (ev->parsed()) {
            const auto report = ctpe::runner::evaluate_cmd(cfg, parse_split_or_throw(opts.split));
            std::cout << ctpe::evaluate::format_metrics_csv(report);
            if (report.consistency_violations != 0) {
                std::cerr << "error: enforced predictions violate consistency rules\n";
                return 3;
            }
        } else if (cc->parsed()) {
            std::filesystem::path path = predictions_path.empty()
                ? ctpe::runner::predictions_path(cfg, parse_split_or_throw(opts.split))
                : std::filesystem::path(predictions_path);
            const int violations = ctpe::runner::check_consistency(path, check_raw, std::cout);
            if (violations > 0) {
                std::cerr << violations << " consistency violations\n";
                return 3;
            }
            std::cout << "consistent: no violations\n";
        }
        return 0;
    } catch (const ctpe::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
