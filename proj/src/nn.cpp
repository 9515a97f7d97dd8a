#include "fedlec/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlec {

DenseLayer::DenseLayer(std::size_t in_features, std::size_t out_features)
    : weights({out_features, in_features}), bias({out_features}) {}

DenseLayer DenseLayer::xavier(std::size_t in_features, std::size_t out_features, Rng& rng) {
    DenseLayer layer(in_features, out_features);
    const double limit =
        std::sqrt(6.0 / static_cast<double>(in_features + out_features));
    for (double& w : layer.weights.vec()) w = rng.uniform(-limit, limit);
    return layer;
}

Tensor linear_forward(const DenseLayer& layer, const Tensor& x) {
    if (x.shape().size() != 2 || x.cols() != layer.in_features()) {
        throw std::invalid_argument("linear_forward: input shape " + x.shape_string() +
                                    " does not match layer input size");
    }
    const std::size_t batch = x.rows(), in = layer.in_features(), out = layer.out_features();
    Tensor y({batch, out});
    const double* px = x.data();
    const double* pw = layer.weights.data();
    const double* pb = layer.bias.data();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* xrow = px + b * in;
        double* yrow = y.data() + b * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wrow = pw + o * in;
            double acc = pb[o];
            for (std::size_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
            yrow[o] = acc;
        }
    }
    y.check_finite("dense forward output");
    return y;
}

LinearGrads linear_backward(const DenseLayer& layer, const Tensor& x, const Tensor& grad_out) {
    if (grad_out.shape().size() != 2 || grad_out.cols() != layer.out_features() ||
        grad_out.rows() != x.rows()) {
        throw std::invalid_argument("linear_backward: grad shape " + grad_out.shape_string() +
                                    " does not match layer output");
    }
    const std::size_t batch = x.rows(), in = layer.in_features(), out = layer.out_features();
    LinearGrads g{Tensor({batch, in}), Tensor({out, in}), Tensor({out})};
    // grad_in = grad_out * W
    for (std::size_t b = 0; b < batch; ++b) {
        const double* grow = grad_out.data() + b * out;
        double* irow = g.grad_in.data() + b * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double gv = grow[o];
            const double* wrow = layer.weights.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) irow[i] += gv * wrow[i];
        }
    }
    // grad_w = grad_out^T * x ; grad_b = column sums of grad_out
    for (std::size_t b = 0; b < batch; ++b) {
        const double* grow = grad_out.data() + b * out;
        const double* xrow = x.data() + b * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double gv = grow[o];
            double* wrow = g.grad_w.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) wrow[i] += gv * xrow[i];
            g.grad_b[o] += gv;
        }
    }
    g.grad_in.check_finite("dense grad_in");
    g.grad_w.check_finite("dense grad_w");
    g.grad_b.check_finite("dense grad_b");
    return g;
}

Tensor dense_forward(DenseLayer& layer, const Tensor& x) {
    Tensor y = linear_forward(layer, x);
    layer.cached_input = x;
    return y;
}

LinearGrads dense_backward(DenseLayer& layer, const Tensor& grad_out) {
    if (!layer.cached_input) {
        throw std::runtime_error("dense_backward called without a preceding forward");
    }
    Tensor x = std::move(*layer.cached_input);
    layer.cached_input.reset();
    return linear_backward(layer, x, grad_out);
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& grads, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
    if (!params.same_layout(grads) || params.data.size() != grads.data.size()) {
        throw std::invalid_argument("sgd_step: parameter/gradient layout mismatch");
    }
    ParamVector next = params;
    for (std::size_t i = 0; i < next.data.size(); ++i) next.data[i] -= lr * grads.data[i];
    return next;
}

}  // namespace fedlec
