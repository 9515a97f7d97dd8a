#pragma once

#include <cstdint>
#include <vector>

#include "fedlec/nn.hpp"
#include "fedlec/tensor.hpp"

namespace fedlec {

/// LIF neuron constants. The leak pulls the potential back toward v_reset;
/// positive_leak flips the sign so the deviation from rest self-amplifies
/// (kept selectable for comparison runs, off by default).
struct LifParams {
    double tau = 2.0;
    double v_threshold = 1.0;
    double v_reset = 0.0;
    bool positive_leak = false;

    void validate() const;
};

/// Per-layer membrane potentials across a batch.
struct LifState {
    Tensor v;  // [B x n]
};

/// Spike: binary Heaviside output with hard reset.
/// Smooth: arctan sigmoid output; the fully differentiable system used by
/// gradient checks.
enum class NeuronMode { Spike, Smooth };

/// 1 / (1 + (pi*x)^2): derivative of the arctan surrogate.
double surrogate_grad(double x);
Tensor surrogate_grad(const Tensor& x);

/// (1/pi) * arctan(pi*x) + 1/2: the smooth stand-in for the Heaviside step.
/// Antiderivative of surrogate_grad.
double surrogate_step(double x);

struct LifStepResult {
    Tensor out;     // spikes in {0,1} (Spike) or values in (0,1) (Smooth)
    LifState state; // membrane potential after reset
    Tensor v_pre;   // potential after integration, before reset
};

/// One discrete LIF update:
///   v_pre = v + (1/tau) * (input - (v - v_reset))
///   out   = H(v_pre - v_threshold)          (Spike; >= fires)
///   v     = out*v_reset + (1-out)*v_pre     (hard reset)
LifStepResult lif_step(const LifState& state, const Tensor& input_current, const LifParams& p,
                       NeuronMode mode);

/// Spiking MLP: dense+LIF hidden blocks with weights shared across time
/// steps, a non-spiking linear readout, and logits averaged over T steps.
/// The static input is presented at every step (direct encoding).
class SpikingMlp {
public:
    SpikingMlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
               std::size_t num_classes, int time_steps, LifParams lif, NeuronMode mode,
               Rng& init_rng);

    /// Runs T steps and returns [B x num_classes] logits. Caches every
    /// per-step activation needed by backward.
    Tensor forward(const Tensor& x);

    /// BPTT through the cached pass. In Spike mode dH/dx is replaced by
    /// surrogate_grad and the reset gate is treated as constant; in Smooth
    /// mode the exact derivative of the smooth system is used.
    ParamVector backward(const Tensor& grad_logits);

    ParamVector parameters() const;
    void set_parameters(const ParamVector& params);
    ParamVector zero_grads() const;

    int time_steps() const { return time_steps_; }
    NeuronMode mode() const { return mode_; }
    void set_mode(NeuronMode mode) { mode_ = mode; }
    std::size_t input_dim() const { return blocks_.front().dense.in_features(); }
    std::size_t num_classes() const { return readout_.out_features(); }

private:
    struct HiddenBlock {
        DenseLayer dense;
        LifParams lif;
    };

    struct StepCache {
        Tensor input;  // input to the dense layer at this step
        Tensor u;      // v_pre - v_threshold
        Tensor out;    // block output
    };

    std::vector<HiddenBlock> blocks_;
    DenseLayer readout_;
    int time_steps_;
    NeuronMode mode_;

    // cache_[layer][t]; cache_valid_ guards backward-without-forward.
    std::vector<std::vector<StepCache>> cache_;
    bool cache_valid_ = false;
};

}  // namespace fedlec
