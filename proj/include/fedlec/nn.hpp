#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedlec/rng.hpp"
#include "fedlec/tensor.hpp"

namespace fedlec {

/// Fully connected layer with explicit stored-activation backward.
/// Weight/bias shapes are fixed at construction.
struct DenseLayer {
    Tensor weights;  // [out x in]
    Tensor bias;     // [out]
    std::optional<Tensor> cached_input;

    DenseLayer(std::size_t in_features, std::size_t out_features);

    /// Xavier-uniform weights, zero bias.
    static DenseLayer xavier(std::size_t in_features, std::size_t out_features, Rng& rng);

    std::size_t in_features() const { return weights.cols(); }
    std::size_t out_features() const { return weights.rows(); }
};

struct LinearGrads {
    Tensor grad_in;  // [B x in]
    Tensor grad_w;   // [out x in]
    Tensor grad_b;   // [out]
};

/// y = x * W^T + b, broadcast over the batch. Pure; no cache.
Tensor linear_forward(const DenseLayer& layer, const Tensor& x);

/// Gradients for a linear layer given the input that produced the output.
LinearGrads linear_backward(const DenseLayer& layer, const Tensor& x, const Tensor& grad_out);

/// Forward pass that caches x for dense_backward.
Tensor dense_forward(DenseLayer& layer, const Tensor& x);

/// Consumes the cached input. Calling without a preceding forward throws.
LinearGrads dense_backward(DenseLayer& layer, const Tensor& grad_out);

struct ParamEntry {
    std::string layer;
    std::string name;
    std::vector<std::size_t> shape;

    bool operator==(const ParamEntry&) const = default;
};

/// Flat view of all model parameters plus the layout needed to restore them.
/// The layout is identical across all clients and the server in one run.
struct ParamVector {
    std::vector<double> data;
    std::vector<ParamEntry> layout;

    std::size_t size() const { return data.size(); }
    bool same_layout(const ParamVector& other) const { return layout == other.layout; }
};

/// params - lr * grads, elementwise. Layouts must match.
ParamVector sgd_step(const ParamVector& params, const ParamVector& grads, double lr);

}  // namespace fedlec
