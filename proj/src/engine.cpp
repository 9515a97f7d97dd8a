#include "fedlec/engine.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fedlec/rng.hpp"

namespace fedlec {

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
    if (!ok) throw std::invalid_argument("invalid " + field + ": " + why);
}

Variant variant_from_name(const std::string& algorithm) {
    if (algorithm == "fedlec") return Variant::FedLEC;
    if (algorithm == "fedavg") return Variant::FedAvgCE;
    if (algorithm == "fedprox") return Variant::FedProx;
    throw std::invalid_argument("invalid algorithm: " + algorithm);
}

/// Runs fn(i) for every index in [0, n) on `workers` threads. Results must
/// be written to per-index slots; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min(static_cast<std::size_t>(workers), n);
    pool.reserve(count);
    for (std::size_t w = 0; w < count; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

void ExperimentConfig::validate() const {
    require(dataset == "blobs" || dataset == "idx", "dataset", "must be \"blobs\" or \"idx\"");
    if (dataset == "blobs") {
        require(blob_classes >= 1, "blob_classes", "must be >= 1");
        require(blob_per_class >= 1, "blob_per_class", "must be >= 1");
        require(blob_dim >= 1, "blob_dim", "must be >= 1");
        require(blob_spread >= 0.0, "blob_spread", "must be >= 0");
        require(blob_test_per_class >= 1, "blob_test_per_class", "must be >= 1");
    } else {
        require(!idx_train_images.empty() && !idx_train_labels.empty() &&
                    !idx_test_images.empty() && !idx_test_labels.empty(),
                "idx paths", "all four idx_* paths are required for dataset = \"idx\"");
    }
    require(partition == "dirichlet" || partition == "quantity", "partition",
            "must be \"dirichlet\" or \"quantity\"");
    require(alpha > 0.0, "alpha", "must be > 0");
    require(cnum >= 1, "cnum", "must be >= 1");
    require(n_clients >= 1, "n_clients", "must be >= 1");
    require(rounds >= 1, "rounds", "must be >= 1");
    require(local_epochs >= 0, "local_epochs", "must be >= 0");
    require(participation_rate > 0.0 && participation_rate <= 1.0, "participation_rate",
            "must be in (0, 1]");
    require(!hidden.empty(), "hidden", "needs at least one layer width");
    for (int h : hidden) require(h >= 1, "hidden", "layer widths must be >= 1");
    require(time_steps >= 1, "time_steps", "must be >= 1");
    require(tau > 1.0, "tau", "must be > 1");
    require(v_threshold > v_reset, "v_threshold", "must exceed v_reset");
    require(lr > 0.0, "lr", "must be > 0");
    require(batch_size >= 1, "batch_size", "must be >= 1");
    variant_from_name(algorithm);
    require(theta >= 0.0, "theta", "must be >= 0");
    require(lambda >= 0.0, "lambda", "must be >= 0");
    require(mu >= 0.0, "mu", "must be >= 0");
}

CalibrationConfig ExperimentConfig::calibration() const {
    CalibrationConfig c;
    c.theta = theta;
    c.lambda = lambda;
    c.mu = mu;
    c.variant = variant_from_name(algorithm);
    return c;
}

ModelSpec ExperimentConfig::model_spec(std::size_t input_dim, std::size_t num_classes) const {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.hidden.assign(hidden.begin(), hidden.end());
    spec.num_classes = num_classes;
    spec.time_steps = time_steps;
    spec.lif.tau = tau;
    spec.lif.v_threshold = v_threshold;
    spec.lif.v_reset = v_reset;
    spec.lif.positive_leak = positive_leak;
    return spec;
}

std::string ExperimentConfig::partition_descriptor() const {
    char buf[64];
    if (partition == "quantity") {
        std::snprintf(buf, sizeof buf, "cnum:%d", cnum);
    } else {
        std::snprintf(buf, sizeof buf, "dir:%g", alpha);
    }
    return buf;
}

std::vector<int> sample_clients(int n_clients, double rate, std::uint64_t seed, int round) {
    if (!(rate > 0.0 && rate <= 1.0)) {
        throw std::invalid_argument("sample_clients: rate must be in (0, 1]");
    }
    const int count = static_cast<int>(
        std::ceil(rate * static_cast<double>(n_clients)));
    std::vector<int> ids(n_clients);
    std::iota(ids.begin(), ids.end(), 0);
    if (count < n_clients) {
        Rng rng(mix_seed({seed, seed_tag::kClientSampling, static_cast<std::uint64_t>(round)}));
        rng.shuffle(ids);
        ids.resize(static_cast<std::size_t>(count));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

SpikingMlp build_model(const ModelSpec& spec, NeuronMode mode, std::uint64_t init_seed) {
    Rng rng(init_seed);
    return SpikingMlp(spec.input_dim, spec.hidden, spec.num_classes, spec.time_steps, spec.lif,
                      mode, rng);
}

namespace {

Tensor gather_rows(const Dataset& ds, const std::vector<int>& indices, std::size_t begin,
                   std::size_t end) {
    const std::size_t dim = ds.dim();
    Tensor batch({end - begin, dim});
    for (std::size_t i = begin; i < end; ++i) {
        std::memcpy(batch.data() + (i - begin) * dim,
                    ds.features.data() + std::size_t(indices[i]) * dim, dim * sizeof(double));
    }
    return batch;
}

}  // namespace

ClientUpdate local_train(const Dataset& train, const std::vector<int>& shard, int client_id,
                         int round, const ParamVector& global_params,
                         const ExperimentConfig& cfg) {
    if (shard.empty()) throw std::invalid_argument("local_train: empty shard");
    ClientUpdate update;
    update.client_id = client_id;
    update.shard_size = shard.size();
    if (cfg.local_epochs == 0) {
        update.params = global_params;
        return update;
    }

    const CalibrationConfig cal = cfg.calibration();
    const ModelSpec spec = cfg.model_spec(train.dim(), static_cast<std::size_t>(train.num_classes));
    SpikingMlp student = build_model(spec, NeuronMode::Spike, 0);
    student.set_parameters(global_params);
    SpikingMlp teacher = build_model(spec, NeuronMode::Spike, 0);
    const bool uses_teacher = cal.variant == Variant::FedLEC;
    if (uses_teacher) teacher.set_parameters(global_params);

    const LabelStats stats = label_stats(train, shard);

    Rng shuffle_rng(mix_seed({cfg.seed, seed_tag::kLocalShuffle,
                              static_cast<std::uint64_t>(round),
                              static_cast<std::uint64_t>(client_id)}));
    std::vector<int> order(shard);
    ParamVector params = global_params;

    double loss_weight = 0.0;
    double sum_total = 0.0, sum_lc = 0.0, sum_lgc = 0.0, sum_lad = 0.0, sum_prox = 0.0;

    const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t stop = std::min(order.size(), start + batch_size);
            Tensor batch = gather_rows(train, order, start, stop);
            std::vector<int> labels(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                labels[i - start] = train.labels[std::size_t(order[i])];
            }

            student.set_parameters(params);
            Tensor logits = student.forward(batch);
            LossBreakdown loss;
            if (uses_teacher) {
                Tensor teacher_logits = teacher.forward(batch);
                loss = fedlec_loss(logits, &teacher_logits, labels, stats, cal);
            } else {
                loss = fedlec_loss(logits, nullptr, labels, stats, cal);
            }
            ParamVector grads = student.backward(loss.grad_logits);
            double prox_value = 0.0;
            if (cal.variant == Variant::FedProx) {
                auto [value, prox_grad] = prox_term(params, global_params, cal.mu);
                prox_value = value;
                for (std::size_t i = 0; i < grads.data.size(); ++i) {
                    grads.data[i] += prox_grad.data[i];
                }
            }
            params = sgd_step(params, grads, cfg.lr);

            const double w = static_cast<double>(stop - start);
            loss_weight += w;
            sum_total += w * loss.total;
            sum_lc += w * loss.lc;
            sum_lgc += w * loss.lgc;
            sum_lad += w * loss.lad;
            sum_prox += w * prox_value;
        }
    }

    update.params = std::move(params);
    if (loss_weight > 0.0) {
        update.mean_loss.total = sum_total / loss_weight;
        update.mean_loss.lc = sum_lc / loss_weight;
        update.mean_loss.lgc = sum_lgc / loss_weight;
        update.mean_loss.lad = sum_lad / loss_weight;
        update.mean_prox = sum_prox / loss_weight;
    }
    return update;
}

ParamVector aggregate(const std::vector<ClientUpdate>& updates, const ParamVector& w_prev) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no client updates");
    std::vector<const ClientUpdate*> ordered;
    ordered.reserve(updates.size());
    for (const auto& u : updates) ordered.push_back(&u);
    std::sort(ordered.begin(), ordered.end(),
              [](const ClientUpdate* a, const ClientUpdate* b) {
                  return a->client_id < b->client_id;
              });

    double total = 0.0;
    for (const auto* u : ordered) {
        if (!u->params.same_layout(w_prev) || u->params.data.size() != w_prev.data.size()) {
            throw std::invalid_argument("aggregate: client parameter layout mismatch");
        }
        if (u->shard_size == 0) throw std::invalid_argument("aggregate: zero shard size");
        total += static_cast<double>(u->shard_size);
    }

    ParamVector result = w_prev;
    std::fill(result.data.begin(), result.data.end(), 0.0);
    for (const auto* u : ordered) {
        const double w = static_cast<double>(u->shard_size) / total;
        for (std::size_t i = 0; i < result.data.size(); ++i) {
            result.data[i] += w * u->params.data[i];
        }
    }
    return result;
}

EvalResult evaluate(const ParamVector& params, const Dataset& test, const ModelSpec& spec) {
    test.validate();
    SpikingMlp model = build_model(spec, NeuronMode::Spike, 0);
    model.set_parameters(params);

    EvalResult result;
    result.label_counts.assign(test.num_classes, 0);
    std::vector<long long> correct(test.num_classes, 0);

    const std::size_t chunk = 512;
    std::vector<int> all(test.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t start = 0; start < test.size(); start += chunk) {
        const std::size_t stop = std::min(test.size(), start + chunk);
        Tensor batch = gather_rows(test, all, start, stop);
        Tensor logits = model.forward(batch);
        for (std::size_t b = 0; b < logits.rows(); ++b) {
            const double* row = logits.data() + b * logits.cols();
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols(); ++c) {
                if (row[c] > row[best]) best = c;  // ties keep the lowest index
            }
            const int y = test.labels[start + b];
            ++result.label_counts[y];
            if (static_cast<std::size_t>(y) == best) ++correct[y];
        }
    }
    long long correct_total = 0;
    result.per_label.resize(test.num_classes);
    for (int c = 0; c < test.num_classes; ++c) {
        correct_total += correct[c];
        result.per_label[c] =
            result.label_counts[c] == 0
                ? 0.0
                : static_cast<double>(correct[c]) / static_cast<double>(result.label_counts[c]);
    }
    result.accuracy = static_cast<double>(correct_total) / static_cast<double>(test.size());
    return result;
}

PartitionPlan make_partition(const ExperimentConfig& cfg, const Dataset& train) {
    const std::uint64_t seed = mix_seed({cfg.seed, seed_tag::kPartition});
    if (cfg.partition == "quantity") {
        return partition_quantity(train, cfg.n_clients, cfg.cnum, seed);
    }
    return partition_dirichlet(train, cfg.n_clients, cfg.alpha, seed);
}

std::pair<Dataset, Dataset> make_datasets(const ExperimentConfig& cfg) {
    if (cfg.dataset == "idx") {
        return {load_idx(cfg.idx_train_images, cfg.idx_train_labels),
                load_idx(cfg.idx_test_images, cfg.idx_test_labels)};
    }
    Dataset train = generate_blobs(cfg.blob_classes, cfg.blob_per_class, cfg.blob_dim,
                                   cfg.blob_spread, mix_seed({cfg.seed, seed_tag::kBlobTrain}));
    Dataset test = generate_blobs(cfg.blob_classes, cfg.blob_test_per_class, cfg.blob_dim,
                                  cfg.blob_spread, mix_seed({cfg.seed, seed_tag::kBlobTest}));
    return {std::move(train), std::move(test)};
}

ExperimentResult run_experiment(
    const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
    const PartitionPlan& plan, int workers,
    const std::function<void(int round, const ParamVector& global)>& on_round) {
    cfg.validate();
    train.validate();
    test.validate();
    if (plan.shards.size() != static_cast<std::size_t>(cfg.n_clients)) {
        throw std::invalid_argument("run_experiment: plan does not match n_clients");
    }
    const ModelSpec spec = cfg.model_spec(train.dim(), static_cast<std::size_t>(train.num_classes));
    ParamVector global =
        build_model(spec, NeuronMode::Spike, mix_seed({cfg.seed, seed_tag::kModelInit}))
            .parameters();

    std::vector<RoundReport> reports;
    reports.reserve(static_cast<std::size_t>(cfg.rounds));
    for (int round = 0; round < cfg.rounds; ++round) {
        const std::vector<int> selected =
            sample_clients(cfg.n_clients, cfg.participation_rate, cfg.seed, round);
        std::vector<ClientUpdate> updates(selected.size());
        parallel_for(selected.size(), workers, [&](std::size_t i) {
            const int client = selected[i];
            updates[i] = local_train(train, plan.shards[std::size_t(client)], client, round,
                                     global, cfg);
        });
        global = aggregate(updates, global);
        if (on_round) on_round(round, global);
        const EvalResult eval = evaluate(global, test, spec);

        RoundReport report;
        report.round = round;
        report.global_accuracy = eval.accuracy;
        report.per_label_accuracy = eval.per_label;
        report.test_label_counts = eval.label_counts;
        report.participating = selected;
        const double n = static_cast<double>(updates.size());
        for (const auto& u : updates) {
            report.mean_loss_total += u.mean_loss.total / n;
            report.mean_loss_lc += u.mean_loss.lc / n;
            report.mean_loss_lgc += u.mean_loss.lgc / n;
            report.mean_loss_lad += u.mean_loss.lad / n;
        }
        reports.push_back(std::move(report));
    }
    return {std::move(reports), std::move(global)};
}

namespace {

constexpr char kCheckpointMagic[6] = {'F', 'L', 'S', 'N', '1', '\n'};

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& path) {
    const std::uint32_t n = read_u32(in, path);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return s;
}

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host for the f64 payload");

}  // namespace

void save_checkpoint(const std::string& path, const ParamVector& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_u32(out, static_cast<std::uint32_t>(params.layout.size()));
    for (const auto& entry : params.layout) {
        write_string(out, entry.layer);
        write_string(out, entry.name);
        write_u32(out, static_cast<std::uint32_t>(entry.shape.size()));
        for (std::size_t d : entry.shape) write_u32(out, static_cast<std::uint32_t>(d));
    }
    write_u64(out, params.data.size());
    out.write(reinterpret_cast<const char*>(params.data.data()),
              static_cast<std::streamsize>(params.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

ParamVector load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[sizeof kCheckpointMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw std::runtime_error("bad checkpoint magic: " + path);
    }
    ParamVector params;
    const std::uint32_t entries = read_u32(in, path);
    params.layout.resize(entries);
    for (auto& entry : params.layout) {
        entry.layer = read_string(in, path);
        entry.name = read_string(in, path);
        const std::uint32_t rank = read_u32(in, path);
        entry.shape.resize(rank);
        for (auto& d : entry.shape) d = read_u32(in, path);
    }
    const std::uint64_t count = read_u64(in, path);
    params.data.resize(count);
    in.read(reinterpret_cast<char*>(params.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return params;
}

}  // namespace fedlec
