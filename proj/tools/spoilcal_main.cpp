#include "spoilcal/error.hpp"
#include "spoilcal/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace spoilcal;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    bool no_group_folds = false;
    std::string classifier;
    std::string branch = "both";
};

pipeline::RunConfig resolve_config(const Options& o) {
    auto cfg = pipeline::load_config(o.config);
    if (!o.out.empty()) cfg.out = o.out;
    if (o.seed) pipeline::set_seed(cfg, *o.seed);
    if (o.jobs) {
        if (*o.jobs < 1) throw ConfigError("--jobs: must be >= 1");
        cfg.jobs = *o.jobs;
        cfg.features.jobs = *o.jobs;
    }
    if (o.no_group_folds) cfg.cv.group_by_pile = false;
    if (!o.classifier.empty()) cfg.classifiers = {ml::parse_kind(o.classifier)};
    return cfg;
}

std::vector<pipeline::Branch> branches(const std::string& b) {
    if (b == "both") return {pipeline::Branch::Calibrated, pipeline::Branch::Uncalibrated};
    if (b == "calibrated") return {pipeline::Branch::Calibrated};
    if (b == "uncalibrated") return {pipeline::Branch::Uncalibrated};
    throw ConfigError("--branch: expected calibrated, uncalibrated or both");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-date spoil pile calibration and classification"};
    app.require_subcommand(1);
    Options opt;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "generate a synthetic scene series with ground truth"},
        {"calibrate", "chain-calibrate the scene series on invariant masks"},
        {"segment", "segment every scene DSM into mound objects"},
        {"features", "per-segment feature tables"},
        {"train", "fit the configured classifiers on all labeled rows"},
        {"evaluate", "k-fold cross-validation of the configured classifiers"},
        {"classify", "paint thematic maps with the trained classifiers"},
        {"diff", "compare calibrated and uncalibrated thematic maps"},
        {"report", "write report.json and report.txt"},
        {"pipeline", "run every step on both branches"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "run config JSON")->required();
        sub->add_option("--out", opt.out, "output directory (overrides config)");
        sub->add_option("--seed", opt.seed, "seed for every random step");
        sub->add_option("--jobs", opt.jobs, "worker threads");
        sub->add_flag("--no-group-folds", opt.no_group_folds, "plain stratified folds instead of pile-grouped folds");
        sub->add_option("--classifier", opt.classifier, "qsvm, subspace, lda, tree, knn or gnb");
        if (name == "features" || name == "train" || name == "evaluate" || name == "classify") {
            sub->add_option("--branch", opt.branch, "calibrated, uncalibrated or both");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const auto cfg = resolve_config(opt);
        const std::string cmd = app.get_subcommands().front()->get_name();
        pipeline::Status st;
        if (cmd == "synth") st = pipeline::cmd_synth(cfg);
        else if (cmd == "calibrate") st = pipeline::cmd_calibrate(cfg);
        else if (cmd == "segment") st = pipeline::cmd_segment(cfg);
        else if (cmd == "features") st = pipeline::cmd_features(cfg, branches(opt.branch));
        else if (cmd == "train") st = pipeline::cmd_train(cfg, branches(opt.branch));
        else if (cmd == "evaluate") st = pipeline::cmd_evaluate(cfg, branches(opt.branch));
        else if (cmd == "classify") st = pipeline::cmd_classify(cfg, branches(opt.branch));
        else if (cmd == "diff") st = pipeline::cmd_diff(cfg);
        else if (cmd == "report") st = pipeline::cmd_report(cfg);
        else st = pipeline::run_pipeline(cfg);
        for (const auto& w : st.warnings) std::cerr << "warning: " << w << "\n";
        return st.warnings.empty() ? 0 : 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
