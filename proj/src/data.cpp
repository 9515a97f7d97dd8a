#include "fedlec/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fedlec/rng.hpp"

namespace fedlec {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw std::runtime_error("truncated IDX file: " + path);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void move_one_sample(std::vector<std::vector<int>>& shards, std::size_t to) {
    std::size_t from = 0;
    for (std::size_t i = 1; i < shards.size(); ++i) {
        if (shards[i].size() > shards[from].size()) from = i;
    }
    if (shards[from].empty()) {
        throw std::runtime_error("cannot repair empty shard: no samples available");
    }
    shards[to].push_back(shards[from].back());
    shards[from].pop_back();
}

// Every client must end up with at least one sample; the round loop divides
// by shard size.
void repair_empty_shards(std::vector<std::vector<int>>& shards) {
    for (std::size_t i = 0; i < shards.size(); ++i) {
        if (shards[i].empty()) move_one_sample(shards, i);
    }
}

void sort_shards(std::vector<std::vector<int>>& shards) {
    for (auto& shard : shards) std::sort(shard.begin(), shard.end());
}

}  // namespace

void Dataset::validate() const {
    if (labels.empty()) throw std::invalid_argument("dataset is empty");
    if (features.rows() != labels.size()) {
        throw std::invalid_argument("dataset feature/label count mismatch");
    }
    if (num_classes < 1) throw std::invalid_argument("dataset num_classes must be >= 1");
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw std::invalid_argument("dataset label out of range");
    }
    features.check_finite("dataset features");
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open IDX images file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open IDX labels file: " + labels_path);

    if (read_be_u32(img, images_path) != kImagesMagic) {
        throw std::runtime_error("bad IDX magic in images file: " + images_path);
    }
    const std::uint32_t n_images = read_be_u32(img, images_path);
    const std::uint32_t rows = read_be_u32(img, images_path);
    const std::uint32_t cols = read_be_u32(img, images_path);

    if (read_be_u32(lab, labels_path) != kLabelsMagic) {
        throw std::runtime_error("bad IDX magic in labels file: " + labels_path);
    }
    const std::uint32_t n_labels = read_be_u32(lab, labels_path);
    if (n_images != n_labels) {
        throw std::runtime_error("IDX image/label count mismatch: " + std::to_string(n_images) +
                                 " images vs " + std::to_string(n_labels) + " labels");
    }
    if (n_images == 0) throw std::runtime_error("IDX files contain no samples");

    const std::size_t dim = std::size_t(rows) * cols;
    std::vector<unsigned char> pixel_buf(dim);
    Tensor features({n_images, dim});
    for (std::uint32_t i = 0; i < n_images; ++i) {
        img.read(reinterpret_cast<char*>(pixel_buf.data()), static_cast<std::streamsize>(dim));
        if (!img) throw std::runtime_error("truncated IDX file: " + images_path);
        double* row = features.data() + std::size_t(i) * dim;
        for (std::size_t j = 0; j < dim; ++j) row[j] = pixel_buf[j] / 255.0;
    }

    std::vector<unsigned char> label_buf(n_labels);
    lab.read(reinterpret_cast<char*>(label_buf.data()), static_cast<std::streamsize>(n_labels));
    if (!lab) throw std::runtime_error("truncated IDX file: " + labels_path);

    Dataset ds;
    ds.features = std::move(features);
    ds.labels.assign(label_buf.begin(), label_buf.end());
    ds.num_classes = static_cast<int>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
    ds.validate();
    return ds;
}

namespace {

// Class means: scaled grid points pushed through a fixed orthogonal rotation.
// The rotation is keyed by (dim) alone so train/test splits generated from
// different sample seeds share one class geometry; rotating off the axes
// makes every input coordinate carry class signal, so no weight column is
// private to one class.
std::vector<std::vector<double>> blob_means(int num_classes, int dim, double scale) {
    constexpr std::uint64_t kRotationSeed = 0x9d2c5680u;
    Rng rot_rng(mix_seed({kRotationSeed, std::uint64_t(dim)}));
    std::vector<std::vector<double>> basis;  // orthonormal rows, built lazily
    auto orthonormal_row = [&](std::size_t idx) -> const std::vector<double>& {
        while (basis.size() <= idx) {
            std::vector<double> row(dim);
            for (;;) {
                for (double& v : row) v = rot_rng.normal();
                for (const auto& prev : basis) {
                    double dot = 0.0;
                    for (int j = 0; j < dim; ++j) dot += row[j] * prev[j];
                    for (int j = 0; j < dim; ++j) row[j] -= dot * prev[j];
                }
                double norm = 0.0;
                for (double v : row) norm += v * v;
                if (norm > 1e-12) {
                    norm = std::sqrt(norm);
                    for (double& v : row) v /= norm;
                    break;
                }
            }
            basis.push_back(std::move(row));
        }
        return basis[idx];
    };

    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
    for (int c = 0; c < num_classes; ++c) {
        const int axis = c % dim;
        const int level = c / dim;
        const auto& primary = orthonormal_row(std::size_t(axis));
        for (int j = 0; j < dim; ++j) means[c][j] = scale * primary[j];
        if (level > 0) {
            const auto& secondary = orthonormal_row(std::size_t((axis + 1) % dim));
            for (int j = 0; j < dim; ++j) means[c][j] += 0.5 * scale * level * secondary[j];
        }
    }
    return means;
}

}  // namespace

Dataset generate_blobs(int num_classes, int per_class, int dim, double spread,
                       std::uint64_t seed) {
    if (num_classes < 1 || per_class < 1 || dim < 1 || spread < 0.0) {
        throw std::invalid_argument("generate_blobs: arguments must be positive");
    }
    const double grid_scale = 2.5;
    const auto means = blob_means(num_classes, dim, grid_scale);
    Rng rng(seed);
    const std::size_t n = std::size_t(num_classes) * per_class;
    Dataset ds;
    ds.num_classes = num_classes;
    ds.features = Tensor({n, static_cast<std::size_t>(dim)});
    ds.labels.resize(n);
    std::size_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (int s = 0; s < per_class; ++s, ++row) {
            double* out = ds.features.data() + row * dim;
            for (int j = 0; j < dim; ++j) out[j] = means[c][j] + spread * rng.normal();
            ds.labels[row] = c;
        }
    }
    ds.validate();
    return ds;
}

PartitionPlan partition_quantity(const Dataset& ds, int n_clients, int k, std::uint64_t seed) {
    ds.validate();
    const int classes = ds.num_classes;
    if (n_clients < 1) throw std::invalid_argument("partition_quantity: n_clients must be >= 1");
    if (k < 1 || k > classes) {
        throw std::invalid_argument("partition_quantity: k must be in 1..num_classes");
    }
    if (static_cast<long long>(n_clients) * k < classes) {
        throw std::invalid_argument(
            "partition_quantity: n_clients*k too small, some label would have no holder");
    }

    Rng rng(seed);
    std::vector<int> label_order(classes);
    std::iota(label_order.begin(), label_order.end(), 0);
    rng.shuffle(label_order);

    // Deal k consecutive labels from the cyclic shuffled stream to each
    // client: labels within a client are distinct (k <= |C|) and n*k >= |C|
    // guarantees every label gets a holder.
    std::vector<std::vector<int>> holders(classes);
    for (int client = 0; client < n_clients; ++client) {
        for (int slot = 0; slot < k; ++slot) {
            const int label = label_order[(std::size_t(client) * k + slot) % classes];
            holders[label].push_back(client);
        }
    }

    std::vector<std::vector<int>> by_label(classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_label[ds.labels[i]].push_back(int(i));

    PartitionPlan plan;
    plan.shards.resize(n_clients);
    plan.seed = seed;
    plan.scheme = PartitionScheme::Quantity;
    plan.cnum = k;
    for (int label = 0; label < classes; ++label) {
        auto& samples = by_label[label];
        rng.shuffle(samples);
        const auto& owners = holders[label];
        const std::size_t share = samples.size() / owners.size();
        const std::size_t remainder = samples.size() % owners.size();
        std::size_t pos = 0;
        for (std::size_t o = 0; o < owners.size(); ++o) {
            std::size_t take = share + (o < remainder ? 1 : 0);
            for (std::size_t s = 0; s < take; ++s) plan.shards[owners[o]].push_back(samples[pos++]);
        }
    }
    repair_empty_shards(plan.shards);
    sort_shards(plan.shards);
    return plan;
}

PartitionPlan partition_dirichlet(const Dataset& ds, int n_clients, double alpha,
                                  std::uint64_t seed) {
    ds.validate();
    if (n_clients < 1) throw std::invalid_argument("partition_dirichlet: n_clients must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("partition_dirichlet: alpha must be positive");

    Rng rng(seed);
    std::vector<std::vector<int>> by_label(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_label[ds.labels[i]].push_back(int(i));

    PartitionPlan plan;
    plan.shards.resize(n_clients);
    plan.seed = seed;
    plan.scheme = PartitionScheme::Dirichlet;
    plan.alpha = alpha;

    std::vector<double> proportions(n_clients);
    for (auto& samples : by_label) {
        if (samples.empty()) continue;
        double total = 0.0;
        do {
            total = 0.0;
            for (double& p : proportions) {
                p = rng.gamma(alpha);
                total += p;
            }
        } while (!(total > 0.0));  // guards underflow at very small alpha
        for (double& p : proportions) p /= total;

        rng.shuffle(samples);
        std::size_t assigned = 0;
        std::vector<std::size_t> take(n_clients);
        for (int c = 0; c < n_clients; ++c) {
            take[c] = static_cast<std::size_t>(
                std::floor(proportions[c] * static_cast<double>(samples.size())));
            assigned += take[c];
        }
        // leftover samples go one each to the largest-proportion clients,
        // keeping every count within one sample of its exact share
        std::vector<int> by_share(n_clients);
        std::iota(by_share.begin(), by_share.end(), 0);
        std::stable_sort(by_share.begin(), by_share.end(), [&](int a, int b) {
            return proportions[a] > proportions[b];
        });
        for (std::size_t r = 0; r < samples.size() - assigned; ++r) {
            ++take[std::size_t(by_share[r % by_share.size()])];
        }

        std::size_t pos = 0;
        for (int c = 0; c < n_clients; ++c) {
            for (std::size_t s = 0; s < take[c]; ++s) plan.shards[c].push_back(samples[pos++]);
        }
    }
    repair_empty_shards(plan.shards);
    sort_shards(plan.shards);
    return plan;
}

std::string PartitionPlan::descriptor() const {
    char buf[64];
    if (scheme == PartitionScheme::Quantity) {
        std::snprintf(buf, sizeof buf, "cnum:%d", cnum);
    } else {
        std::snprintf(buf, sizeof buf, "dir:%g", alpha);
    }
    return buf;
}

LabelStats label_stats(const Dataset& ds, const std::vector<int>& shard_indices) {
    if (shard_indices.empty()) throw std::invalid_argument("label_stats: empty shard");
    const int classes = ds.num_classes;
    LabelStats stats;
    stats.counts.assign(classes, 0);
    for (int idx : shard_indices) {
        if (idx < 0 || std::size_t(idx) >= ds.size()) {
            throw std::invalid_argument("label_stats: shard index out of range");
        }
        ++stats.counts[ds.labels[idx]];
    }
    const double avg = static_cast<double>(shard_indices.size()) / classes;
    const double eps = 1e-3;
    const double denom = static_cast<double>(shard_indices.size()) + eps * classes;
    stats.gamma.resize(classes);
    for (int c = 0; c < classes; ++c) {
        stats.gamma[c] = (static_cast<double>(stats.counts[c]) + eps) / denom;
        if (stats.counts[c] == 0) {
            stats.missing.push_back(c);
        } else if (static_cast<double>(stats.counts[c]) >= avg) {
            stats.majority.push_back(c);
        } else {
            stats.minority.push_back(c);
        }
    }
    return stats;
}

}  // namespace fedlec
