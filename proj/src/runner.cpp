#include "fedlec/runner.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace fedlec {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ";";
        out += format_double(v[i]);
    }
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ';')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ',' && !quoted) {
            out.push_back(field);
            field.clear();
        } else {
            field += ch;
        }
    }
    out.push_back(field);
    return out;
}

constexpr const char* kMetricsHeader =
    "algorithm,partition,seed,round,accuracy,per_label_accuracy,"
    "loss_total,loss_lc,loss_lgc,loss_lad";

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write metrics CSV: " + path);
    out << kMetricsHeader << "\n";
    for (const auto& r : rows) {
        out << r.algorithm << ",\"" << r.partition << "\"," << r.seed << "," << r.round << ","
            << format_double(r.accuracy) << ",\"" << join_doubles(r.per_label) << "\","
            << format_double(r.loss_total) << "," << format_double(r.loss_lc) << ","
            << format_double(r.loss_lgc) << "," << format_double(r.loss_lad) << "\n";
    }
    if (!out) throw std::runtime_error("failed writing metrics CSV: " + path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics CSV: " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) {
        throw std::runtime_error("unexpected metrics CSV header in " + path);
    }
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 10) {
            throw std::runtime_error("malformed metrics CSV row in " + path);
        }
        MetricsRow r;
        r.algorithm = fields[0];
        r.partition = fields[1];
        r.seed = std::stoull(fields[2]);
        r.round = std::stoi(fields[3]);
        r.accuracy = std::stod(fields[4]);
        r.per_label = split_doubles(fields[5]);
        r.loss_total = std::stod(fields[6]);
        r.loss_lc = std::stod(fields[7]);
        r.loss_lgc = std::stod(fields[8]);
        r.loss_lad = std::stod(fields[9]);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<RoundReport> run_to_dir(const ExperimentConfig& cfg, const std::string& out_dir,
                                    int workers) {
    cfg.validate();
    fs::create_directories(out_dir);

    auto [train, test] = make_datasets(cfg);
    const PartitionPlan plan = make_partition(cfg, train);
    ExperimentResult result = run_experiment(cfg, train, test, plan, workers);
    const std::vector<RoundReport>& reports = result.reports;

    const std::string descriptor = cfg.partition_descriptor();
    std::vector<MetricsRow> rows;
    rows.reserve(reports.size());
    for (const auto& rep : reports) {
        MetricsRow r;
        r.algorithm = cfg.algorithm;
        r.partition = descriptor;
        r.seed = cfg.seed;
        r.round = rep.round;
        r.accuracy = rep.global_accuracy;
        r.per_label = rep.per_label_accuracy;
        r.loss_total = rep.mean_loss_total;
        r.loss_lc = rep.mean_loss_lc;
        r.loss_lgc = rep.mean_loss_lgc;
        r.loss_lad = rep.mean_loss_lad;
        rows.push_back(std::move(r));
    }
    write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), rows);

    {
        std::ofstream out(fs::path(out_dir) / "config.resolved.toml", std::ios::trunc);
        out << serialize_config(cfg);
    }

    const RoundReport& final_report = reports.back();
    {
        json per_label;
        per_label["round"] = final_report.round;
        per_label["final_accuracy"] = final_report.global_accuracy;
        per_label["per_label_accuracy"] = final_report.per_label_accuracy;
        per_label["test_label_counts"] = final_report.test_label_counts;
        std::ofstream out(fs::path(out_dir) / "per_label.json", std::ios::trunc);
        out << per_label.dump(2) << "\n";
    }

    save_checkpoint((fs::path(out_dir) / "checkpoint_final.flsn").string(), result.final_params);

    {
        char hash_buf[32];
        std::snprintf(hash_buf, sizeof hash_buf, "%016" PRIx64, config_hash(cfg));
        json manifest;
        manifest["artifact_version"] = kArtifactVersion;
        manifest["config_hash"] = hash_buf;
        manifest["algorithm"] = cfg.algorithm;
        manifest["partition"] = descriptor;
        manifest["seed"] = cfg.seed;
        manifest["derived_seeds"] = {
            {"partition", mix_seed({cfg.seed, seed_tag::kPartition})},
            {"model_init", mix_seed({cfg.seed, seed_tag::kModelInit})},
            {"blob_train", mix_seed({cfg.seed, seed_tag::kBlobTrain})},
            {"blob_test", mix_seed({cfg.seed, seed_tag::kBlobTest})},
        };
        manifest["outputs"] = {
            {"metrics", "metrics.csv"},
            {"per_label", "per_label.json"},
            {"config", "config.resolved.toml"},
            {"checkpoint", "checkpoint_final.flsn"},
        };
        std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::trunc);
        out << manifest.dump(2) << "\n";
    }
    return reports;
}

CompareResult compare_runs(const std::vector<std::string>& run_dirs) {
    if (run_dirs.size() < 2) {
        throw std::invalid_argument("compare needs at least two run directories");
    }
    struct RunInfo {
        std::string algorithm;
        std::string partition;
        std::uint64_t seed;
        double final_accuracy;
    };
    std::vector<RunInfo> runs;
    for (const auto& dir : run_dirs) {
        const auto rows = read_metrics_csv((fs::path(dir) / "metrics.csv").string());
        if (rows.empty()) throw std::runtime_error("empty metrics in " + dir);
        const MetricsRow& last = rows.back();
        runs.push_back({last.algorithm, last.partition, last.seed, last.accuracy});
    }
    for (const auto& run : runs) {
        if (run.partition != runs.front().partition) {
            throw std::invalid_argument("refusing to compare runs with different partitions: \"" +
                                        runs.front().partition + "\" vs \"" + run.partition +
                                        "\"");
        }
    }

    CompareResult result;
    result.partition = runs.front().partition;
    result.baseline = runs.front().algorithm;

    std::map<std::string, std::map<std::uint64_t, double>> by_algorithm;
    for (const auto& run : runs) by_algorithm[run.algorithm][run.seed] = run.final_accuracy;
    const auto& baseline_by_seed = by_algorithm.at(result.baseline);

    for (const auto& [algorithm, by_seed] : by_algorithm) {
        CompareEntry entry;
        entry.algorithm = algorithm;
        double mean = 0.0;
        for (const auto& [seed, acc] : by_seed) mean += acc;
        entry.mean_final_accuracy = mean / static_cast<double>(by_seed.size());
        double delta_sum = 0.0;
        std::size_t paired = 0;
        for (const auto& [seed, acc] : by_seed) {
            auto it = baseline_by_seed.find(seed);
            if (it == baseline_by_seed.end()) continue;
            entry.per_seed_delta.emplace_back(seed, acc - it->second);
            delta_sum += acc - it->second;
            ++paired;
        }
        entry.mean_delta = paired ? delta_sum / static_cast<double>(paired) : 0.0;
        result.entries.push_back(std::move(entry));
    }
    return result;
}

void print_compare(const CompareResult& result, std::ostream& out) {
    out << "partition: " << result.partition << "  (baseline: " << result.baseline << ")\n";
    out << "algorithm        mean_final_acc   mean_delta   per-seed deltas\n";
    for (const auto& entry : result.entries) {
        char line[128];
        std::snprintf(line, sizeof line, "%-16s %14.4f %12.4f   ", entry.algorithm.c_str(),
                      entry.mean_final_accuracy, entry.mean_delta);
        out << line;
        for (const auto& [seed, delta] : entry.per_seed_delta) {
            char cell[64];
            std::snprintf(cell, sizeof cell, "s%" PRIu64 ":%+.4f ", seed, delta);
            out << cell;
        }
        out << "\n";
    }
}

void write_compare_csv(const CompareResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write comparison CSV: " + path);
    out << "partition,algorithm,seed,delta_vs_" << result.baseline << ",mean_final_accuracy\n";
    for (const auto& entry : result.entries) {
        for (const auto& [seed, delta] : entry.per_seed_delta) {
            out << "\"" << result.partition << "\"," << entry.algorithm << "," << seed << ","
                << format_double(delta) << "," << format_double(entry.mean_final_accuracy)
                << "\n";
        }
    }
}

void print_partition_report(const ExperimentConfig& cfg, std::ostream& out) {
    cfg.validate();
    auto [train, test] = make_datasets(cfg);
    (void)test;
    const PartitionPlan plan = make_partition(cfg, train);

    std::vector<long long> label_totals(train.num_classes, 0);
    for (int y : train.labels) ++label_totals[y];

    out << "partition " << plan.descriptor() << ", " << plan.shards.size() << " clients, "
        << train.num_classes << " labels; cells are % of each label's samples\n";
    out << "client";
    for (int c = 0; c < train.num_classes; ++c) out << "\tL" << c;
    out << "\tsize\n";
    for (std::size_t i = 0; i < plan.shards.size(); ++i) {
        std::vector<long long> counts(train.num_classes, 0);
        for (int idx : plan.shards[i]) ++counts[train.labels[idx]];
        out << i;
        for (int c = 0; c < train.num_classes; ++c) {
            char cell[32];
            const double pct = label_totals[c] == 0
                                   ? 0.0
                                   : 100.0 * static_cast<double>(counts[c]) /
                                         static_cast<double>(label_totals[c]);
            std::snprintf(cell, sizeof cell, "\t%.1f", pct);
            out << cell;
        }
        out << "\t" << plan.shards[i].size() << "\n";
    }
}

}  // namespace fedlec
