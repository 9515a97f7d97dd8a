#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlec/tensor.hpp"

namespace fedlec {

struct Dataset {
    Tensor features;          // [N x d]
    std::vector<int> labels;  // values in 0..num_classes-1
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
    void validate() const;
};

/// Reads an IDX image/label pair (big-endian, magics 0x803/0x801).
/// Pixel bytes are scaled to [0,1]; images are flattened row-major.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Gaussian clusters with class means on a scaled coordinate grid.
/// Deterministic under seed.
Dataset generate_blobs(int num_classes, int per_class, int dim, double spread,
                       std::uint64_t seed);

enum class PartitionScheme { Quantity, Dirichlet };

/// Assignment of every sample index to exactly one client shard.
struct PartitionPlan {
    std::vector<std::vector<int>> shards;
    std::uint64_t seed = 0;
    PartitionScheme scheme = PartitionScheme::Quantity;
    double alpha = 0.0;  // Dirichlet concentration
    int cnum = 0;        // labels per client (quantity scheme)

    /// "cnum:2" or "dir:0.1" style tag used in metrics rows.
    std::string descriptor() const;
};

/// Quantity-based label skew: each client holds exactly k distinct labels,
/// every label has at least one holder, and each label's samples are split
/// near-equally among its holders.
PartitionPlan partition_quantity(const Dataset& ds, int n_clients, int k, std::uint64_t seed);

/// Distribution-based label skew: per label, client proportions are drawn
/// from a symmetric Dirichlet(alpha) and samples allocated by floor with the
/// remainder going to the largest-proportion client.
PartitionPlan partition_dirichlet(const Dataset& ds, int n_clients, double alpha,
                                  std::uint64_t seed);

/// Per-shard label counts, smoothed prior estimates, and the
/// majority / minority / missing label partition.
struct LabelStats {
    std::vector<long long> counts;
    std::vector<double> gamma;   // smoothed estimate of P(y); sums to 1, all > 0
    std::vector<int> majority;   // count >= |shard| / |C|
    std::vector<int> minority;   // 0 < count < |shard| / |C|
    std::vector<int> missing;    // count == 0
};

LabelStats label_stats(const Dataset& ds, const std::vector<int>& shard_indices);

}  // namespace fedlec
