#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dgode/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"DGODE: continuous-depth graph network for conversation emotion classification"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    bool fault_inject = false;

    app.add_option("--config", config_path, "plain-text config file ([section] key = value)");
    app.add_option("--seed", seed_override, "override [run] seed");
    app.add_option("--out", out_override, "override [run] out directory");

    auto* verify_cmd =
        app.add_subcommand("verify", "run the numeric verification suite on seeded instances");
    verify_cmd->add_flag("--fault-inject", fault_inject,
                         "perturb the ODE right-hand side by 1e-3; the oracle triangle must fail");
    auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset file");
    auto* train_cmd = app.add_subcommand("train", "train on the configured dataset");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate saved parameters on the test split");
    auto* sweep_cmd = app.add_subcommand("sweep", "depth sweep: DGODE vs stacked vanilla GCN");
    for (auto* sub : {verify_cmd, gen_cmd, train_cmd, eval_cmd, sweep_cmd}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version exit 0; usage problems exit 2
    }

    try {
        dgode::RunConfig cfg =
            config_path.empty() ? dgode::RunConfig{} : dgode::parse_config_file(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
            dgode::sync_seeds(cfg);
        }
        if (out_override) cfg.out = *out_override;

        if (verify_cmd->parsed()) return dgode::cli::cmd_verify(cfg, fault_inject);
        if (gen_cmd->parsed()) return dgode::cli::cmd_gen(cfg);
        if (train_cmd->parsed()) return dgode::cli::cmd_train(cfg);
        if (eval_cmd->parsed()) return dgode::cli::cmd_eval(cfg);
        if (sweep_cmd->parsed()) return dgode::cli::cmd_sweep(cfg);
        std::fprintf(stderr, "no command given\n");
        return 2;
    } catch (const dgode::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}
