#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedlec/config.hpp"
#include "fedlec/runner.hpp"

namespace {

// Exit codes: 0 success, 1 configuration error, 2 runtime error.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

int resolve_workers(int cli_workers) {
    // FEDLEC_THREADS overrides the worker count, including --workers.
    if (const char* env = std::getenv("FEDLEC_THREADS")) {
        try {
            const int value = std::stoi(env);
            if (value >= 1) return value;
        } catch (const std::exception&) {
        }
        std::cerr << "warning: ignoring invalid FEDLEC_THREADS value \"" << env << "\"\n";
    }
    return cli_workers;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated spiking-network learning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    int workers = 1;
    bool seed_given = false;
    std::uint64_t seed_override = 0;

    auto* run_cmd = app.add_subcommand("run", "Execute one experiment from a config file");
    run_cmd->add_option("config", config_path, "experiment config file")->required();
    run_cmd->add_option("--out", out_dir, "output directory")->required();
    run_cmd->add_option("--workers", workers, "client worker threads")
        ->check(CLI::PositiveNumber);
    run_cmd
        ->add_option("--seed", seed_override,
                     "override the config seed (key for every derived stream)")
        ->each([&seed_given](const std::string&) { seed_given = true; });

    std::vector<std::string> run_dirs;
    std::string compare_out = "comparison.csv";
    auto* compare_cmd =
        app.add_subcommand("compare", "Summarize completed runs on one partition");
    compare_cmd->add_option("dirs", run_dirs, "run directories")->required()->expected(-2);
    compare_cmd->add_option("--out", compare_out, "comparison CSV path");

    std::string report_config;
    auto* report_cmd = app.add_subcommand(
        "partition-report", "Print the per-client label allocation matrix (percent)");
    report_cmd->add_option("config", report_config, "experiment config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            fedlec::ExperimentConfig cfg = fedlec::parse_config(config_path);
            if (seed_given) cfg.seed = seed_override;
            const auto reports = fedlec::run_to_dir(cfg, out_dir, resolve_workers(workers));
            std::cout << "run complete: " << reports.size() << " rounds, final accuracy "
                      << reports.back().global_accuracy << ", outputs in " << out_dir << "\n";
        } else if (compare_cmd->parsed()) {
            const fedlec::CompareResult result = fedlec::compare_runs(run_dirs);
            fedlec::print_compare(result, std::cout);
            fedlec::write_compare_csv(result, compare_out);
            std::cout << "written: " << compare_out << "\n";
        } else if (report_cmd->parsed()) {
            const fedlec::ExperimentConfig cfg = fedlec::parse_config(report_config);
            fedlec::print_partition_report(cfg, std::cout);
        }
    } catch (const fedlec::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
