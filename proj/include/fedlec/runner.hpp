#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedlec/config.hpp"
#include "fedlec/engine.hpp"

namespace fedlec {

inline constexpr const char* kArtifactVersion = "fedlec-sim 0.1.0";

/// One metrics CSV row: per-round global metrics for a run.
struct MetricsRow {
    std::string algorithm;
    std::string partition;  // "dir:0.1" / "cnum:2"
    std::uint64_t seed = 0;
    int round = -1;
    double accuracy = 0.0;
    std::vector<double> per_label;  // semicolon-joined in the CSV cell
    double loss_total = 0.0;
    double loss_lc = 0.0;
    double loss_lgc = 0.0;
    double loss_lad = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

/// Executes the configured experiment and writes manifest.json, metrics.csv,
/// per_label.json, the resolved config, and the final checkpoint into
/// out_dir (created if needed, overwritten deterministically).
/// Returns the per-round reports.
std::vector<RoundReport> run_to_dir(const ExperimentConfig& cfg, const std::string& out_dir,
                                    int workers);

struct CompareEntry {
    std::string algorithm;
    double mean_final_accuracy = 0.0;
    double mean_delta = 0.0;                       // vs the baseline algorithm
    std::vector<std::pair<std::uint64_t, double>>  // (seed, delta vs baseline)
        per_seed_delta;
};

struct CompareResult {
    std::string partition;
    std::string baseline;  // algorithm of the first run dir
    std::vector<CompareEntry> entries;
};

/// Summarizes >= 2 completed runs. All runs must share one partition
/// descriptor; deltas pair runs of equal seed against the baseline.
CompareResult compare_runs(const std::vector<std::string>& run_dirs);

void print_compare(const CompareResult& result, std::ostream& out);
void write_compare_csv(const CompareResult& result, const std::string& path);

/// Prints the per-(client, label) allocation matrix of the configured
/// partition, as percentages of each label's samples.
void print_partition_report(const ExperimentConfig& cfg, std::ostream& out);

}  // namespace fedlec
