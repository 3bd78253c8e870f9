#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgode/config.hpp"
#include "dgode/dataio.hpp"
#include "dgode/metrics.hpp"
#include "dgode/model.hpp"
#include "dgode/verify.hpp"

namespace dgode::cli {

inline void ensure_out_dir(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out);
}

/// gen always writes inside the output directory; the file name follows the
/// configured dataset path's basename.
inline std::string gen_target_path(const RunConfig& cfg) {
    const std::string base = std::filesystem::path(cfg.dataset).filename().string();
    return (std::filesystem::path(cfg.out) / (base.empty() ? "dataset.jsonl" : base)).string();
}

inline int cmd_verify(const RunConfig& cfg, bool fault_inject) {
    verify::VerifyOptions opts;
    opts.seed = cfg.seed;
    opts.fault_inject = fault_inject;
    const auto results = verify::run_all(opts);
    verify::print_results(results, stdout);
    return verify::all_passed(results) ? 0 : 1;
}

inline int cmd_gen(const RunConfig& cfg) {
    cfg.synthetic.validate();
    ensure_out_dir(cfg);
    const Dataset ds = gen_synthetic(cfg.synthetic);
    const std::string path = gen_target_path(cfg);
    save_dataset(ds, path);
    std::printf("wrote %zu conversations (%zu utterances) to %s\n", ds.conversations.size(),
                ds.utterance_count(), path.c_str());
    return 0;
}

namespace detail {

inline Dataset load_for_run(const RunConfig& cfg) {
    if (!std::filesystem::exists(cfg.dataset))
        throw Error("dataset not found: " + cfg.dataset + " (run `gen` first?)");
    return load_dataset(cfg.dataset);
}

}  // namespace detail

inline int cmd_train(const RunConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg);
    const Dataset ds = detail::load_for_run(cfg);
    const auto splits = split_dataset(ds, cfg.split_fractions, cfg.seed);

    ModelParams params = ModelParams::init(cfg.model, ds.header, ds.speakers(), cfg.seed);
    const TrainLog log = train(splits[0], splits[1], params, cfg.train, true);

    const std::string params_path = cfg.params_path();
    save_params(params, params_path);

    // Epoch log keeps only run-reproducible fields; wall time goes to stderr.
    std::ofstream out(cfg.out + "/train_log.jsonl");
    for (const auto& rec : log.epochs) {
        nlohmann::ordered_json j;
        j["epoch"] = rec.epoch;
        j["train_loss"] = rec.train_loss;
        j["val_wf1"] = rec.val_wf1;
        out << j.dump() << "\n";
    }
    std::printf("trained %zu epochs; best val W-F1 %.4f (epoch %zu); params -> %s\n",
                log.epochs.size(), log.best_val_wf1, log.best_epoch, params_path.c_str());
    return 0;
}

inline int cmd_eval(const RunConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg);
    const Dataset ds = detail::load_for_run(cfg);
    const auto splits = split_dataset(ds, cfg.split_fractions, cfg.seed);
    const Dataset& test = splits[2].conversations.empty() ? ds : splits[2];

    ModelParams params = load_params(cfg.params_path());
    if (params.class_names != ds.header.classes)
        throw ConfigError("eval: dataset classes do not match the trained parameters");

    const MetricsReport report = evaluate(test, params);
    const std::string table = format_metrics_table(report, "dgode");
    std::fputs(table.c_str(), stdout);

    std::ofstream txt(cfg.out + "/metrics.txt");
    txt << table;
    nlohmann::ordered_json j;
    j["classes"] = report.class_names;
    j["per_class_f1"] = report.per_class_f1;
    j["support"] = report.support;
    j["weighted_f1"] = report.weighted_f1;
    j["accuracy"] = report.accuracy;
    std::vector<std::vector<double>> confusion(report.confusion.rows());
    for (std::size_t i = 0; i < report.confusion.rows(); ++i)
        confusion[i] = report.confusion.row(i);
    j["confusion"] = confusion;
    std::ofstream js(cfg.out + "/metrics.json");
    js << j.dump(2) << "\n";
    return 0;
}

inline int cmd_sweep(const RunConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg);
    const Dataset ds = detail::load_for_run(cfg);
    const auto splits = split_dataset(ds, cfg.split_fractions, cfg.seed);

    const auto records = depth_sweep(splits[0], splits[1], splits[2], cfg.model, cfg.train,
                                     cfg.sweep_depths, cfg.sweep_seeds, true);
    std::ofstream out(cfg.out + "/sweep.jsonl");
    for (const auto& rec : records) {
        nlohmann::ordered_json j;
        j["method"] = rec.method;
        j["depth"] = rec.depth;
        j["wf1_per_seed"] = rec.wf1_per_seed;
        j["wf1_median"] = rec.wf1_median;
        out << j.dump() << "\n";
        std::printf("%-12s depth %3zu median W-F1 %.4f\n", rec.method.c_str(), rec.depth,
                    rec.wf1_median);
    }
    return 0;
}

}  // namespace dgode::cli
