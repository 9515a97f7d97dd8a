#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedlec/data.hpp"
#include "fedlec/losses.hpp"
#include "fedlec/nn.hpp"
#include "fedlec/snn.hpp"

namespace fedlec {

struct ModelSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden = {128, 64};
    std::size_t num_classes = 0;
    int time_steps = 4;
    LifParams lif;
};

/// Full description of one experiment. Everything that affects results is
/// in here; two runs with equal configs produce identical outputs.
struct ExperimentConfig {
    // dataset
    std::string dataset = "blobs";  // "blobs" | "idx"
    int blob_classes = 8;
    int blob_per_class = 500;
    int blob_dim = 16;
    double blob_spread = 1.0;
    int blob_test_per_class = 100;
    std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;

    // partition
    std::string partition = "dirichlet";  // "dirichlet" | "quantity"
    double alpha = 0.1;
    int cnum = 2;

    // federation
    int n_clients = 10;
    int rounds = 30;
    int local_epochs = 2;
    double participation_rate = 1.0;

    // model
    std::vector<int> hidden = {128, 64};
    int time_steps = 4;
    double tau = 2.0;
    double v_threshold = 1.0;
    double v_reset = 0.0;
    bool positive_leak = false;

    // optimization
    double lr = 0.1;
    int batch_size = 32;

    // algorithm
    std::string algorithm = "fedlec";  // "fedlec" | "fedavg" | "fedprox"
    double theta = 0.1;
    double lambda = 1.0;
    double mu = 0.01;

    std::uint64_t seed = 1;

    void validate() const;  // throws std::invalid_argument naming the field
    CalibrationConfig calibration() const;
    ModelSpec model_spec(std::size_t input_dim, std::size_t num_classes) const;
    std::string partition_descriptor() const;
};

struct ClientUpdate {
    int client_id = -1;
    ParamVector params;        // post-training local weights
    std::size_t shard_size = 0;
    LossBreakdown mean_loss;   // batch-weighted means; grad_logits left empty
    double mean_prox = 0.0;    // FedProx proximal value (not part of mean_loss.total)
};

struct RoundReport {
    int round = -1;
    double global_accuracy = 0.0;
    std::vector<double> per_label_accuracy;
    std::vector<long long> test_label_counts;
    double mean_loss_total = 0.0;
    double mean_loss_lc = 0.0;
    double mean_loss_lgc = 0.0;
    double mean_loss_lad = 0.0;
    std::vector<int> participating;
};

/// ceil(rate * n_clients) distinct ids from a stream keyed by (seed, round).
std::vector<int> sample_clients(int n_clients, double rate, std::uint64_t seed, int round);

/// Builds the model for a spec; Xavier weights drawn from init_seed.
SpikingMlp build_model(const ModelSpec& spec, NeuronMode mode, std::uint64_t init_seed);

/// E epochs of mini-batch SGD on one shard, starting from the broadcast
/// global parameters. FedLEC keeps a frozen teacher copy of those parameters
/// and evaluates it on every batch. Shuffling is keyed by
/// (seed, round, client_id); E=0 returns the global parameters unchanged.
ClientUpdate local_train(const Dataset& train, const std::vector<int>& shard, int client_id,
                         int round, const ParamVector& global_params,
                         const ExperimentConfig& cfg);

/// Shard-size weighted average over the participating clients only.
/// Updates are processed in client-id order regardless of input order.
ParamVector aggregate(const std::vector<ClientUpdate>& updates, const ParamVector& w_prev);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_label;
    std::vector<long long> label_counts;
};

/// Spike-mode top-1 accuracy, ties broken toward the lowest class index.
EvalResult evaluate(const ParamVector& params, const Dataset& test, const ModelSpec& spec);

struct ExperimentResult {
    std::vector<RoundReport> reports;
    ParamVector final_params;
};

/// The federated round loop: sample, broadcast, local train (worker pool),
/// aggregate, evaluate. Bit-identical output for any worker count.
/// on_round, when set, sees the aggregated global parameters after each round.
ExperimentResult run_experiment(
    const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
    const PartitionPlan& plan, int workers,
    const std::function<void(int round, const ParamVector& global)>& on_round = {});

/// Builds the partition from the config (seed derived from cfg.seed).
PartitionPlan make_partition(const ExperimentConfig& cfg, const Dataset& train);

/// Builds train/test datasets from the config.
std::pair<Dataset, Dataset> make_datasets(const ExperimentConfig& cfg);

// Checkpoints: "FLSN1" magic, layout header, little-endian 64-bit floats.
void save_checkpoint(const std::string& path, const ParamVector& params);
ParamVector load_checkpoint(const std::string& path);

}  // namespace fedlec
