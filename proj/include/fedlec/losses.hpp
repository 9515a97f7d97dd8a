#pragma once

#include <utility>
#include <vector>

#include "fedlec/data.hpp"
#include "fedlec/nn.hpp"
#include "fedlec/tensor.hpp"

namespace fedlec {

/// Local training objectives. FedAvgCE is plain cross-entropy; FedProx adds
/// the proximal term at the parameter level; FedLEC composes the calibrated
/// cross-entropy with the two penalty terms.
enum class Variant { FedLEC, FedAvgCE, FedProx };

struct CalibrationConfig {
    double theta = 0.1;    // weight of the generalized-calibration penalty
    double lambda = 1.0;   // weight of the alignment-distillation penalty
    Variant variant = Variant::FedLEC;
    double mu = 0.01;      // FedProx proximal coefficient

    void validate() const;
};

/// One evaluated loss with its components and the gradient w.r.t. logits.
struct LossBreakdown {
    double total = 0.0;
    double lc = 0.0;
    double lgc = 0.0;
    double lad = 0.0;
    Tensor grad_logits;
};

using LossValueGrad = std::pair<double, Tensor>;

/// Mean softmax cross-entropy over the batch.
LossValueGrad softmax_ce(const Tensor& logits, const std::vector<int>& labels);

/// Cross-entropy over prior-adjusted logits f + log(gamma). The per-class
/// shift is anchored at its maximum so a uniform prior reduces to plain
/// cross-entropy bit-exactly.
LossValueGrad calibrated_ce(const Tensor& logits, const std::vector<int>& labels,
                            const LabelStats& stats);

/// Generalized-calibration penalty:
///   sum_c gamma_c * log( mean over samples with y != c of exp(f_c) ).
/// Classes covered by every batch label contribute zero.
LossValueGrad gc_penalty(const Tensor& logits, const std::vector<int>& labels,
                         const LabelStats& stats);

/// Alignment distillation: KL between teacher and student softmax restricted
/// to missing-label coordinates, averaged over the batch. The teacher logits
/// are constants; the gradient flows only into the local logits.
LossValueGrad ad_penalty(const Tensor& local_logits, const Tensor& global_logits,
                         const LabelStats& stats);

/// Composes the configured variant. FedLEC requires teacher logits.
LossBreakdown fedlec_loss(const Tensor& local_logits, const Tensor* global_logits,
                          const std::vector<int>& labels, const LabelStats& stats,
                          const CalibrationConfig& cfg);

/// (mu/2) * ||w - w_global||^2 with gradient mu * (w - w_global).
std::pair<double, ParamVector> prox_term(const ParamVector& w, const ParamVector& w_global,
                                         double mu);

}  // namespace fedlec
