#include "fedlec/snn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fedlec {

void LifParams::validate() const {
    if (!(tau > 1.0)) throw std::invalid_argument("LifParams: tau must be > 1");
    if (!(v_threshold > v_reset)) {
        throw std::invalid_argument("LifParams: v_threshold must exceed v_reset");
    }
}

double surrogate_grad(double x) {
    const double px = std::numbers::pi * x;
    return 1.0 / (1.0 + px * px);
}

Tensor surrogate_grad(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.vec()) v = surrogate_grad(v);
    return out;
}

double surrogate_step(double x) {
    return std::atan(std::numbers::pi * x) / std::numbers::pi + 0.5;
}

LifStepResult lif_step(const LifState& state, const Tensor& input_current, const LifParams& p,
                       NeuronMode mode) {
    p.validate();
    if (!state.v.same_shape(input_current)) {
        throw std::invalid_argument("lif_step: state shape " + state.v.shape_string() +
                                    " does not match input " + input_current.shape_string());
    }
    const double inv_tau = 1.0 / p.tau;
    const double leak_sign = p.positive_leak ? 1.0 : -1.0;
    LifStepResult r{input_current, LifState{input_current}, input_current};
    for (std::size_t i = 0; i < state.v.size(); ++i) {
        const double v_prev = state.v[i];
        const double v_pre =
            v_prev + inv_tau * (input_current[i] + leak_sign * (v_prev - p.v_reset));
        const double u = v_pre - p.v_threshold;
        const double out =
            mode == NeuronMode::Spike ? (u >= 0.0 ? 1.0 : 0.0) : surrogate_step(u);
        r.v_pre[i] = v_pre;
        r.out[i] = out;
        r.state.v[i] = out * p.v_reset + (1.0 - out) * v_pre;
    }
    r.out.check_finite("lif_step output");
    r.state.v.check_finite("lif_step membrane potential");
    return r;
}

SpikingMlp::SpikingMlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                       std::size_t num_classes, int time_steps, LifParams lif, NeuronMode mode,
                       Rng& init_rng)
    : readout_(1, 1), time_steps_(time_steps), mode_(mode) {
    if (time_steps < 1) throw std::invalid_argument("SpikingMlp: time_steps must be >= 1");
    lif.validate();
    std::size_t prev = input_dim;
    for (std::size_t width : hidden) {
        blocks_.push_back({DenseLayer::xavier(prev, width, init_rng), lif});
        prev = width;
    }
    if (blocks_.empty()) throw std::invalid_argument("SpikingMlp: needs at least one hidden block");
    readout_ = DenseLayer::xavier(prev, num_classes, init_rng);
}

Tensor SpikingMlp::forward(const Tensor& x) {
    if (x.shape().size() != 2 || x.cols() != input_dim()) {
        throw std::invalid_argument("SpikingMlp::forward: input shape " + x.shape_string() +
                                    " does not match model input size");
    }
    const std::size_t batch = x.rows();
    const std::size_t classes = num_classes();
    const auto steps = static_cast<std::size_t>(time_steps_);

    cache_.assign(blocks_.size(), {});
    for (auto& layer_cache : cache_) layer_cache.resize(steps);

    std::vector<LifState> states;
    states.reserve(blocks_.size());
    for (const auto& block : blocks_) {
        states.push_back(LifState{Tensor::full({batch, block.dense.out_features()},
                                               block.lif.v_reset)});
    }

    Tensor logit_sum({batch, classes});
    for (std::size_t t = 0; t < steps; ++t) {
        Tensor current = x;  // same static input every step
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
            auto& block = blocks_[l];
            Tensor drive = linear_forward(block.dense, current);
            LifStepResult step = lif_step(states[l], drive, block.lif, mode_);
            StepCache& sc = cache_[l][t];
            sc.input = std::move(current);
            sc.u = std::move(step.v_pre);
            for (double& u : sc.u.vec()) u -= block.lif.v_threshold;
            sc.out = step.out;
            states[l] = std::move(step.state);
            current = std::move(step.out);
        }
        Tensor step_logits = linear_forward(readout_, current);
        for (std::size_t i = 0; i < logit_sum.size(); ++i) logit_sum[i] += step_logits[i];
    }
    const double scale = 1.0 / static_cast<double>(time_steps_);
    for (double& v : logit_sum.vec()) v *= scale;
    logit_sum.check_finite("snn logits");
    cache_valid_ = true;
    return logit_sum;
}

ParamVector SpikingMlp::backward(const Tensor& grad_logits) {
    if (!cache_valid_) {
        throw std::runtime_error("SpikingMlp::backward called without a cached forward pass");
    }
    const auto steps = static_cast<std::size_t>(time_steps_);
    const std::size_t batch = grad_logits.rows();
    if (grad_logits.cols() != num_classes() || cache_.front().front().input.rows() != batch) {
        throw std::invalid_argument("SpikingMlp::backward: grad shape mismatch");
    }

    ParamVector grads = zero_grads();
    std::vector<double*> grad_slots;  // aligned with layout order below
    std::size_t offset = 0;
    for (std::size_t i = 0; i < grads.layout.size(); ++i) {
        grad_slots.push_back(grads.data.data() + offset);
        std::size_t n = 1;
        for (std::size_t d : grads.layout[i].shape) n *= d;
        offset += n;
    }

    // Readout: logits = (1/T) * sum_t (S_t W_r^T + b_r).
    Tensor grad_step = grad_logits;
    const double scale = 1.0 / static_cast<double>(time_steps_);
    for (double& v : grad_step.vec()) v *= scale;

    // grad wrt each block's output, per step; starts at the top block.
    std::vector<Tensor> grad_out(steps);
    {
        const std::size_t top = blocks_.size() - 1;
        Tensor grad_wr({readout_.out_features(), readout_.in_features()});
        Tensor grad_br({readout_.out_features()});
        for (std::size_t t = 0; t < steps; ++t) {
            LinearGrads g = linear_backward(readout_, cache_[top][t].out, grad_step);
            for (std::size_t i = 0; i < grad_wr.size(); ++i) grad_wr[i] += g.grad_w[i];
            for (std::size_t i = 0; i < grad_br.size(); ++i) grad_br[i] += g.grad_b[i];
            grad_out[t] = std::move(g.grad_in);
        }
        const std::size_t wr_slot = 2 * blocks_.size();
        for (std::size_t i = 0; i < grad_wr.size(); ++i) grad_slots[wr_slot][i] = grad_wr[i];
        for (std::size_t i = 0; i < grad_br.size(); ++i) grad_slots[wr_slot + 1][i] = grad_br[i];
    }

    for (std::size_t li = blocks_.size(); li-- > 0;) {
        auto& block = blocks_[li];
        const LifParams& p = block.lif;
        const double inv_tau = 1.0 / p.tau;
        // d v_pre / d v_prev under the configured leak sign
        const double carry = 1.0 + (p.positive_leak ? inv_tau : -inv_tau);
        const std::size_t width = block.dense.out_features();

        Tensor grad_w({width, block.dense.in_features()});
        Tensor grad_b({width});
        std::vector<Tensor> grad_in(steps);
        Tensor grad_v_next({batch, width});  // dL/dV[t] flowing from step t+1

        for (std::size_t t = steps; t-- > 0;) {
            const StepCache& sc = cache_[li][t];
            Tensor grad_drive({batch, width});
            for (std::size_t i = 0; i < sc.u.size(); ++i) {
                const double sg = surrogate_grad(sc.u[i]);
                const double s = sc.out[i];
                double dv_dvpre = 1.0 - s;
                if (mode_ == NeuronMode::Smooth) {
                    // reset gate is differentiated, not detached
                    const double v_pre = sc.u[i] + p.v_threshold;
                    dv_dvpre += sg * (p.v_reset - v_pre);
                }
                const double g_vpre = grad_out[t][i] * sg + grad_v_next[i] * dv_dvpre;
                grad_drive[i] = g_vpre * inv_tau;
                grad_v_next[i] = g_vpre * carry;  // becomes dL/dV[t-1]
            }
            LinearGrads g = linear_backward(block.dense, sc.input, grad_drive);
            for (std::size_t i = 0; i < grad_w.size(); ++i) grad_w[i] += g.grad_w[i];
            for (std::size_t i = 0; i < grad_b.size(); ++i) grad_b[i] += g.grad_b[i];
            grad_in[t] = std::move(g.grad_in);
        }
        for (std::size_t i = 0; i < grad_w.size(); ++i) grad_slots[2 * li][i] = grad_w[i];
        for (std::size_t i = 0; i < grad_b.size(); ++i) grad_slots[2 * li + 1][i] = grad_b[i];
        if (li > 0) grad_out = std::move(grad_in);  // spatial path into the block below
    }

    cache_valid_ = false;
    return grads;
}

ParamVector SpikingMlp::parameters() const {
    ParamVector pv;
    auto append = [&pv](const std::string& layer, const std::string& name, const Tensor& t) {
        pv.layout.push_back({layer, name, t.shape()});
        pv.data.insert(pv.data.end(), t.vec().begin(), t.vec().end());
    };
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string id = "block" + std::to_string(i);
        append(id, "weight", blocks_[i].dense.weights);
        append(id, "bias", blocks_[i].dense.bias);
    }
    append("readout", "weight", readout_.weights);
    append("readout", "bias", readout_.bias);
    return pv;
}

void SpikingMlp::set_parameters(const ParamVector& params) {
    const ParamVector expected = parameters();
    if (!params.same_layout(expected) || params.data.size() != expected.data.size()) {
        throw std::invalid_argument("SpikingMlp::set_parameters: layout mismatch");
    }
    std::size_t offset = 0;
    auto restore = [&](Tensor& t) {
        std::copy(params.data.begin() + static_cast<std::ptrdiff_t>(offset),
                  params.data.begin() + static_cast<std::ptrdiff_t>(offset + t.size()),
                  t.vec().begin());
        offset += t.size();
    };
    for (auto& block : blocks_) {
        restore(block.dense.weights);
        restore(block.dense.bias);
    }
    restore(readout_.weights);
    restore(readout_.bias);
}

ParamVector SpikingMlp::zero_grads() const {
    ParamVector pv = parameters();
    std::fill(pv.data.begin(), pv.data.end(), 0.0);
    return pv;
}

}  // namespace fedlec
