#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "fedlec/config.hpp"
#include "fedlec/runner.hpp"

using namespace fedlec;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& tag) {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() /
                         ("fedlec_" + tag + "_" + std::to_string(::getpid()) + "_" +
                          std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

ExperimentConfig tiny_config(const std::string& algorithm, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.blob_classes = 3;
    cfg.blob_per_class = 30;
    cfg.blob_dim = 4;
    cfg.blob_spread = 0.7;
    cfg.blob_test_per_class = 20;
    cfg.partition = "quantity";
    cfg.cnum = 2;
    cfg.n_clients = 3;
    cfg.rounds = 2;
    cfg.local_epochs = 1;
    cfg.hidden = {8};
    cfg.time_steps = 2;
    cfg.lr = 0.1;
    cfg.batch_size = 16;
    cfg.algorithm = algorithm;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("minimal config applies the documented defaults") {
    const ExperimentConfig cfg =
        parse_config_text("dataset = \"blobs\"\nalgorithm = \"fedavg\"\n", "mini");
    CHECK(cfg.n_clients == 10);
    CHECK(cfg.rounds == 30);
    CHECK(cfg.local_epochs == 2);
    CHECK(cfg.time_steps == 4);
    CHECK(cfg.tau == 2.0);
    CHECK(cfg.v_threshold == 1.0);
    CHECK(cfg.v_reset == 0.0);
    CHECK(cfg.hidden == std::vector<int>{128, 64});
    CHECK(cfg.theta == 0.1);
    CHECK(cfg.lambda == 1.0);
    CHECK(cfg.participation_rate == 1.0);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.seed == 1);
    CHECK(cfg.positive_leak == false);
}

TEST_CASE("config validation errors name the offending field") {
    CHECK_THROWS_WITH_AS(
        parse_config_text("participation_rate = 1.5\n", "bad"),
        doctest::Contains("participation_rate"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("tau = 0.5\n", "bad"), doctest::Contains("tau"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("algorithm = \"sgd\"\n", "bad"),
                         doctest::Contains("algorithm"), ConfigError);
}

TEST_CASE("parse errors carry the line number") {
    CHECK_THROWS_WITH_AS(parse_config_text("dataset = \"blobs\"\nnot a key value\n", "file"),
                         doctest::Contains("file:2"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("unknown_key = 3\n", "file"),
                         doctest::Contains("file:1"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("rounds = banana\n", "file"),
                         doctest::Contains("file:1"), ConfigError);
}

TEST_CASE("comments and blank lines are ignored") {
    const ExperimentConfig cfg = parse_config_text(
        "# experiment\n\nrounds = 7   # comment after value\nlambda = 0.5\n", "c");
    CHECK(cfg.rounds == 7);
    CHECK(cfg.lambda == 0.5);
}

TEST_CASE("serialize/parse round-trips to an identical form") {
    ExperimentConfig cfg = tiny_config("fedlec", 42);
    cfg.alpha = 0.15;
    cfg.lambda = 0.75;
    const std::string first = serialize_config(cfg);
    const ExperimentConfig reparsed = parse_config_text(first, "roundtrip");
    CHECK(serialize_config(reparsed) == first);
    CHECK(config_hash(reparsed) == config_hash(cfg));
}

TEST_CASE("config hash changes iff a field changes") {
    const ExperimentConfig base = tiny_config("fedlec", 42);
    ExperimentConfig changed = base;
    CHECK(config_hash(base) == config_hash(changed));
    changed.lr = base.lr * 2.0;
    CHECK(config_hash(base) != config_hash(changed));
    changed = base;
    changed.seed += 1;
    CHECK(config_hash(base) != config_hash(changed));
}

TEST_CASE("metrics CSV round-trips every column") {
    std::vector<MetricsRow> rows;
    MetricsRow r;
    r.algorithm = "fedlec";
    r.partition = "dir:0.1";
    r.seed = 7;
    r.round = 3;
    r.accuracy = 0.62512345678901234;
    r.per_label = {0.25, 1.0, 0.0, 0.33333333333333331};
    r.loss_total = 1.25;
    r.loss_lc = 1.0;
    r.loss_lgc = 0.5;
    r.loss_lad = 0.2;
    rows.push_back(r);
    r.round = 4;
    r.accuracy = 0.75;
    rows.push_back(r);

    const fs::path dir = fresh_dir("csv");
    const std::string path = (dir / "metrics.csv").string();
    write_metrics_csv(path, rows);
    const auto parsed = read_metrics_csv(path);
    REQUIRE(parsed.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(parsed[i].algorithm == rows[i].algorithm);
        CHECK(parsed[i].partition == rows[i].partition);
        CHECK(parsed[i].seed == rows[i].seed);
        CHECK(parsed[i].round == rows[i].round);
        CHECK(parsed[i].accuracy == rows[i].accuracy);
        CHECK(parsed[i].per_label == rows[i].per_label);
        CHECK(parsed[i].loss_total == rows[i].loss_total);
        CHECK(parsed[i].loss_lc == rows[i].loss_lc);
        CHECK(parsed[i].loss_lgc == rows[i].loss_lgc);
        CHECK(parsed[i].loss_lad == rows[i].loss_lad);
    }
    fs::remove_all(dir);
}

TEST_CASE("run_to_dir writes a complete, reproducible output set") {
    const ExperimentConfig cfg = tiny_config("fedlec", 11);
    const fs::path dir_a = fresh_dir("runA");
    const fs::path dir_b = fresh_dir("runB");
    const auto reports = run_to_dir(cfg, dir_a.string(), 1);
    run_to_dir(cfg, dir_b.string(), 2);

    CHECK(reports.size() == 2);
    for (const char* name : {"metrics.csv", "manifest.json", "per_label.json",
                             "config.resolved.toml", "checkpoint_final.flsn"}) {
        CHECK(fs::exists(dir_a / name));
    }
    // identical configs give byte-identical metrics regardless of workers
    CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
    CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));

    const auto rows = read_metrics_csv((dir_a / "metrics.csv").string());
    CHECK(rows.size() == 2);
    CHECK(rows.front().partition == "cnum:2");
    CHECK(rows.front().algorithm == "fedlec");

    const ParamVector params = load_checkpoint((dir_a / "checkpoint_final.flsn").string());
    CHECK(!params.data.empty());
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("compare of a run with itself reports zero delta") {
    const ExperimentConfig cfg = tiny_config("fedavg", 3);
    const fs::path dir = fresh_dir("self");
    run_to_dir(cfg, dir.string(), 1);
    const CompareResult result = compare_runs({dir.string(), dir.string()});
    REQUIRE(result.entries.size() == 1);
    CHECK(result.entries[0].algorithm == "fedavg");
    CHECK(result.entries[0].mean_delta == 0.0);
    REQUIRE(result.entries[0].per_seed_delta.size() == 1);
    CHECK(result.entries[0].per_seed_delta[0].second == 0.0);
    fs::remove_all(dir);
}

TEST_CASE("compare pairs algorithms by seed and refuses partition mismatches") {
    const fs::path a = fresh_dir("cmpA");
    const fs::path b = fresh_dir("cmpB");
    const fs::path c = fresh_dir("cmpC");
    run_to_dir(tiny_config("fedavg", 5), a.string(), 1);
    run_to_dir(tiny_config("fedlec", 5), b.string(), 1);

    const CompareResult result = compare_runs({a.string(), b.string()});
    CHECK(result.baseline == "fedavg");
    REQUIRE(result.entries.size() == 2);
    for (const auto& entry : result.entries) {
        if (entry.algorithm == "fedavg") CHECK(entry.mean_delta == 0.0);
        REQUIRE(entry.per_seed_delta.size() == 1);
        CHECK(entry.per_seed_delta[0].first == 5);
    }

    ExperimentConfig other = tiny_config("fedavg", 5);
    other.partition = "dirichlet";
    run_to_dir(other, c.string(), 1);
    CHECK_THROWS_WITH_AS(compare_runs({a.string(), c.string()}),
                         doctest::Contains("partition"), std::invalid_argument);

    // comparison CSV is written and parseable
    const fs::path out = a / "comparison.csv";
    write_compare_csv(result, out.string());
    CHECK(slurp(out).find("fedlec") != std::string::npos);

    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(c);
}

TEST_CASE("partition report prints a percentage matrix") {
    const ExperimentConfig cfg = tiny_config("fedavg", 9);
    std::ostringstream out;
    print_partition_report(cfg, out);
    const std::string text = out.str();
    CHECK(text.find("cnum:2") != std::string::npos);
    CHECK(text.find("L0") != std::string::npos);
    CHECK(text.find("L2") != std::string::npos);

    // three client rows plus two header lines
    int lines = 0;
    for (char ch : text) lines += ch == '\n';
    CHECK(lines == 2 + cfg.n_clients);
}
