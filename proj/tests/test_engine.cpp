#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <unistd.h>

#include "fedlec/engine.hpp"
#include "fedlec/rng.hpp"
#include "testutil.hpp"

using namespace fedlec;

namespace {

namespace fs = std::filesystem;

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.blob_classes = 4;
    cfg.blob_per_class = 60;
    cfg.blob_dim = 6;
    cfg.blob_spread = 0.8;
    cfg.blob_test_per_class = 50;
    cfg.partition = "quantity";
    cfg.cnum = 2;
    cfg.n_clients = 4;
    cfg.rounds = 3;
    cfg.local_epochs = 1;
    cfg.hidden = {16, 8};
    cfg.lr = 0.1;
    cfg.batch_size = 16;
    cfg.algorithm = "fedavg";
    cfg.seed = 5;
    return cfg;
}

std::vector<int> full_shard(const Dataset& ds) {
    std::vector<int> shard(ds.size());
    std::iota(shard.begin(), shard.end(), 0);
    return shard;
}

ParamVector make_params(std::vector<double> values) {
    return ParamVector{std::move(values), {{"l", "w", {2}}}};
}

ClientUpdate make_update(int id, std::vector<double> values, std::size_t size) {
    ClientUpdate u;
    u.client_id = id;
    u.params = make_params(std::move(values));
    u.shard_size = size;
    return u;
}

}  // namespace

TEST_CASE("sample_clients basic contracts") {
    CHECK(sample_clients(6, 1.0, 3, 0) == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK(sample_clients(6, 1.0, 3, 7) == std::vector<int>{0, 1, 2, 3, 4, 5});

    const auto half = sample_clients(10, 0.5, 3, 2);
    CHECK(half.size() == 5);
    CHECK(std::set<int>(half.begin(), half.end()).size() == 5);

    CHECK(sample_clients(10, 0.5, 9, 3) == sample_clients(10, 0.5, 9, 3));
    CHECK(sample_clients(10, 0.31, 9, 3).size() == 4);  // ceil(3.1)

    CHECK_THROWS_AS(sample_clients(10, 0.0, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(sample_clients(10, 1.5, 1, 0), std::invalid_argument);
}

TEST_CASE("sample_clients varies across rounds") {
    bool any_difference = false;
    for (int round = 1; round < 5; ++round) {
        if (sample_clients(10, 0.5, 4, round) != sample_clients(10, 0.5, 4, 0)) {
            any_difference = true;
        }
    }
    CHECK(any_difference);
}

TEST_CASE("local_train with zero epochs returns the broadcast parameters") {
    ExperimentConfig cfg = small_config();
    cfg.local_epochs = 0;
    auto [train, test] = make_datasets(cfg);
    (void)test;
    const ModelSpec spec = cfg.model_spec(train.dim(), std::size_t(train.num_classes));
    const ParamVector global =
        build_model(spec, NeuronMode::Spike, mix_seed({cfg.seed, seed_tag::kModelInit}))
            .parameters();
    const ClientUpdate update = local_train(train, full_shard(train), 0, 0, global, cfg);
    CHECK(update.params.data == global.data);
    CHECK(update.shard_size == train.size());
}

TEST_CASE("local_train rejects an empty shard") {
    ExperimentConfig cfg = small_config();
    auto [train, test] = make_datasets(cfg);
    (void)test;
    const ModelSpec spec = cfg.model_spec(train.dim(), std::size_t(train.num_classes));
    const ParamVector global = build_model(spec, NeuronMode::Spike, 1).parameters();
    CHECK_THROWS_AS(local_train(train, {}, 0, 0, global, cfg), std::invalid_argument);
}

TEST_CASE("fedlec with zero penalties on a uniform shard tracks fedavg bit-exactly") {
    ExperimentConfig cfg = small_config();
    cfg.algorithm = "fedlec";
    cfg.theta = 0.0;
    cfg.lambda = 0.0;
    auto [train, test] = make_datasets(cfg);
    (void)test;
    const ModelSpec spec = cfg.model_spec(train.dim(), std::size_t(train.num_classes));
    const ParamVector global =
        build_model(spec, NeuronMode::Spike, mix_seed({cfg.seed, seed_tag::kModelInit}))
            .parameters();

    // the full blob training set is label balanced, so gamma is uniform
    const ClientUpdate lec = local_train(train, full_shard(train), 2, 1, global, cfg);
    ExperimentConfig avg_cfg = cfg;
    avg_cfg.algorithm = "fedavg";
    const ClientUpdate avg = local_train(train, full_shard(train), 2, 1, global, avg_cfg);
    CHECK(lec.params.data == avg.params.data);
}

TEST_CASE("aggregate weighted-average arithmetic") {
    const ParamVector prev = make_params({0.0, 0.0});
    const auto one = aggregate({make_update(0, {1.5, -2.5}, 7)}, prev);
    CHECK(one.data == std::vector<double>{1.5, -2.5});

    const auto two = aggregate(
        {make_update(0, {1.0, 1.0}, 1), make_update(1, {3.0, 3.0}, 3)}, prev);
    CHECK(two.data == std::vector<double>{2.5, 2.5});
}

TEST_CASE("aggregate is permutation invariant and scale invariant") {
    const ParamVector prev = make_params({0.0, 0.0});
    const auto a = aggregate({make_update(0, {1.0, 2.0}, 2), make_update(1, {5.0, -1.0}, 3),
                              make_update(2, {-2.0, 0.5}, 5)},
                             prev);
    const auto b = aggregate({make_update(2, {-2.0, 0.5}, 5), make_update(0, {1.0, 2.0}, 2),
                              make_update(1, {5.0, -1.0}, 3)},
                             prev);
    CHECK(a.data == b.data);

    const auto scaled = aggregate({make_update(0, {1.0, 2.0}, 14), make_update(1, {5.0, -1.0}, 21),
                                   make_update(2, {-2.0, 0.5}, 35)},
                                  prev);
    CHECK(a.data == scaled.data);
}

TEST_CASE("aggregate of identical parameters is that parameter vector") {
    const ParamVector prev = make_params({0.0, 0.0});
    const std::vector<double> p{0.123456789, -7.5};
    const auto agg = aggregate(
        {make_update(0, p, 1), make_update(1, p, 17), make_update(2, p, 3)}, prev);
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(agg.data[i] == doctest::Approx(p[i]).epsilon(1e-14));
    }
}

TEST_CASE("aggregate error paths") {
    const ParamVector prev = make_params({0.0, 0.0});
    CHECK_THROWS_AS(aggregate({}, prev), std::invalid_argument);
    ClientUpdate bad = make_update(0, {1.0, 2.0}, 2);
    bad.params.layout[0].layer = "other";
    CHECK_THROWS_AS(aggregate({bad}, prev), std::invalid_argument);
}

TEST_CASE("evaluate recomposes overall accuracy from per-label accuracies") {
    ExperimentConfig cfg = small_config();
    auto [train, test] = make_datasets(cfg);
    (void)train;
    const ModelSpec spec = cfg.model_spec(test.dim(), std::size_t(test.num_classes));
    const ParamVector params = build_model(spec, NeuronMode::Spike, 77).parameters();
    const EvalResult r = evaluate(params, test, spec);

    double recomposed = 0.0;
    long long total = 0;
    for (std::size_t c = 0; c < r.per_label.size(); ++c) {
        recomposed += r.per_label[c] * double(r.label_counts[c]);
        total += r.label_counts[c];
    }
    CHECK(total == static_cast<long long>(test.size()));
    CHECK(r.accuracy == doctest::Approx(recomposed / double(total)).epsilon(1e-12));
    for (double acc : r.per_label) {
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }
}

TEST_CASE("untrained models score near chance on a balanced test set") {
    ExperimentConfig cfg = small_config();
    cfg.blob_test_per_class = 200;
    auto [train, test] = make_datasets(cfg);
    (void)train;
    const ModelSpec spec = cfg.model_spec(test.dim(), std::size_t(test.num_classes));
    // 3-sigma binomial band around 1/|C| for N = 800, averaged over seeds
    const double sigma = std::sqrt(0.25 * 0.75 / double(test.size()));
    double mean = 0.0;
    const int n_seeds = 5;
    for (std::uint64_t s = 1; s <= n_seeds; ++s) {
        const ParamVector params = build_model(spec, NeuronMode::Spike, s * 991).parameters();
        mean += evaluate(params, test, spec).accuracy / n_seeds;
    }
    CHECK(std::abs(mean - 0.25) < 3.0 * sigma);
}

TEST_CASE("single-client runs equal centralized training bit-exactly per round") {
    ExperimentConfig cfg = small_config();
    cfg.n_clients = 1;
    cfg.cnum = cfg.blob_classes;
    cfg.rounds = 3;
    auto [train, test] = make_datasets(cfg);
    const PartitionPlan plan = make_partition(cfg, train);
    REQUIRE(plan.shards.size() == 1);
    REQUIRE(plan.shards[0].size() == train.size());

    std::vector<ParamVector> per_round;
    run_experiment(cfg, train, test, plan, 1,
                   [&](int, const ParamVector& p) { per_round.push_back(p); });

    // independent centralized loop: same init, same shuffle stream, plain
    // CE mini-batch SGD over the whole training set
    const ModelSpec spec = cfg.model_spec(train.dim(), std::size_t(train.num_classes));
    SpikingMlp model =
        build_model(spec, NeuronMode::Spike, mix_seed({cfg.seed, seed_tag::kModelInit}));
    ParamVector params = model.parameters();
    for (int round = 0; round < cfg.rounds; ++round) {
        Rng shuffle_rng(mix_seed({cfg.seed, seed_tag::kLocalShuffle,
                                  std::uint64_t(round), 0}));
        std::vector<int> order = plan.shards[0];
        for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            for (std::size_t start = 0; start < order.size();
                 start += std::size_t(cfg.batch_size)) {
                const std::size_t stop =
                    std::min(order.size(), start + std::size_t(cfg.batch_size));
                Tensor batch({stop - start, train.dim()});
                std::vector<int> labels(stop - start);
                for (std::size_t i = start; i < stop; ++i) {
                    for (std::size_t j = 0; j < train.dim(); ++j) {
                        batch.at(i - start, j) = train.features.at(std::size_t(order[i]), j);
                    }
                    labels[i - start] = train.labels[std::size_t(order[i])];
                }
                model.set_parameters(params);
                const Tensor logits = model.forward(batch);
                const auto [loss, grad] = softmax_ce(logits, labels);
                (void)loss;
                const ParamVector grads = model.backward(grad);
                params = sgd_step(params, grads, cfg.lr);
            }
        }
        REQUIRE(std::size_t(round) < per_round.size());
        CHECK(params.data == per_round[std::size_t(round)].data);
    }
}

TEST_CASE("identical shards at full participation match one local update") {
    ExperimentConfig cfg = small_config();
    cfg.n_clients = 3;
    cfg.rounds = 1;
    cfg.batch_size = 1 << 30;  // full-batch: shuffle order only permutes the sum
    auto [train, test] = make_datasets(cfg);
    const std::vector<int> shard = full_shard(train);
    PartitionPlan plan;
    plan.shards = {shard, shard, shard};

    const ModelSpec spec = cfg.model_spec(train.dim(), std::size_t(train.num_classes));
    const ParamVector global =
        build_model(spec, NeuronMode::Spike, mix_seed({cfg.seed, seed_tag::kModelInit}))
            .parameters();
    const ClientUpdate single = local_train(train, shard, 0, 0, global, cfg);

    // run_experiment would reject overlapping shards only via sizes; feed it
    // directly: each client sees the same full-batch data, so all updates and
    // their weighted average agree with one client's result up to summation
    // order in the batch reduction
    std::vector<ClientUpdate> updates;
    for (int client = 0; client < 3; ++client) {
        updates.push_back(local_train(train, shard, client, 0, global, cfg));
    }
    const ParamVector agg = aggregate(updates, global);
    for (std::size_t i = 0; i < agg.data.size(); ++i) {
        CHECK(agg.data[i] == doctest::Approx(single.params.data[i]).epsilon(1e-9));
    }
}

TEST_CASE("round reports are complete and invariant-respecting on a skewed run") {
    ExperimentConfig cfg = small_config();
    cfg.partition = "dirichlet";
    cfg.alpha = 0.2;
    cfg.algorithm = "fedlec";
    auto [train, test] = make_datasets(cfg);
    const PartitionPlan plan = make_partition(cfg, train);
    const auto result = run_experiment(cfg, train, test, plan, 2);
    REQUIRE(result.reports.size() == std::size_t(cfg.rounds));
    for (int r = 0; r < cfg.rounds; ++r) {
        const RoundReport& rep = result.reports[std::size_t(r)];
        CHECK(rep.round == r);
        CHECK(rep.global_accuracy >= 0.0);
        CHECK(rep.global_accuracy <= 1.0);
        CHECK(rep.per_label_accuracy.size() == std::size_t(train.num_classes));
        CHECK(rep.participating.size() == std::size_t(cfg.n_clients));
    }
}

TEST_CASE("run_experiment is bit-identical across worker counts") {
    ExperimentConfig cfg = small_config();
    cfg.algorithm = "fedlec";
    cfg.partition = "dirichlet";
    cfg.alpha = 0.3;
    auto [train, test] = make_datasets(cfg);
    const PartitionPlan plan = make_partition(cfg, train);

    std::vector<ParamVector> params_1, params_4;
    const auto serial = run_experiment(cfg, train, test, plan, 1,
                                       [&](int, const ParamVector& p) { params_1.push_back(p); });
    const auto parallel = run_experiment(
        cfg, train, test, plan, 4, [&](int, const ParamVector& p) { params_4.push_back(p); });

    REQUIRE(serial.reports.size() == parallel.reports.size());
    for (std::size_t r = 0; r < serial.reports.size(); ++r) {
        CHECK(serial.reports[r].global_accuracy == parallel.reports[r].global_accuracy);
        CHECK(serial.reports[r].per_label_accuracy == parallel.reports[r].per_label_accuracy);
        CHECK(serial.reports[r].mean_loss_total == parallel.reports[r].mean_loss_total);
        CHECK(params_1[r].data == params_4[r].data);
    }
}

TEST_CASE("training on degenerate blobs reaches full accuracy") {
    ExperimentConfig cfg = small_config();
    cfg.blob_spread = 0.0;
    cfg.rounds = 5;
    cfg.local_epochs = 2;
    cfg.n_clients = 2;
    cfg.cnum = 4;
    auto [train, test] = make_datasets(cfg);
    const PartitionPlan plan = make_partition(cfg, train);
    const auto result = run_experiment(cfg, train, test, plan, 2);
    CHECK(result.reports.back().global_accuracy == 1.0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Rng rng(3);
    SpikingMlp net(4, {5, 3}, 2, 2, LifParams{}, NeuronMode::Spike, rng);
    const ParamVector params = net.parameters();

    const fs::path path = fs::temp_directory_path() /
                          ("fedlec_ckpt_" + std::to_string(::getpid()) + ".flsn");
    save_checkpoint(path.string(), params);
    const ParamVector loaded = load_checkpoint(path.string());
    CHECK(loaded.data == params.data);
    CHECK(loaded.layout == params.layout);

    // corrupt the magic
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "BOGUS1\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path.string()), std::runtime_error);
    fs::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path.string()), std::runtime_error);
}
