#include "fedlec/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedlec {

namespace {

void check_labels(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2) throw std::invalid_argument("logits must be [B x C]");
    if (logits.rows() != labels.size()) {
        throw std::invalid_argument("logit/label batch size mismatch");
    }
    for (int y : labels) {
        if (y < 0 || std::size_t(y) >= logits.cols()) {
            throw std::invalid_argument("label out of range");
        }
    }
    if (labels.empty()) throw std::invalid_argument("empty batch");
}

/// Row-wise softmax with the row max subtracted before exponentiation.
Tensor softmax_rows(const Tensor& logits) {
    const std::size_t batch = logits.rows(), classes = logits.cols();
    Tensor probs({batch, classes});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = logits.data() + b * classes;
        double* prow = probs.data() + b * classes;
        double mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            prow[c] = std::exp(row[c] - mx);
            sum += prow[c];
        }
        for (std::size_t c = 0; c < classes; ++c) prow[c] /= sum;
    }
    return probs;
}

LossValueGrad softmax_ce_impl(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t batch = logits.rows(), classes = logits.cols();
    const double inv_batch = 1.0 / static_cast<double>(batch);
    Tensor grad({batch, classes});
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = logits.data() + b * classes;
        double* grow = grad.data() + b * classes;
        double mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            grow[c] = std::exp(row[c] - mx);
            sum += grow[c];
        }
        const std::size_t y = static_cast<std::size_t>(labels[b]);
        loss -= (row[y] - mx) - std::log(sum);
        for (std::size_t c = 0; c < classes; ++c) {
            grow[c] = grow[c] / sum * inv_batch;
        }
        grow[y] -= inv_batch;
    }
    loss *= inv_batch;
    grad.check_finite("cross-entropy gradient");
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite cross-entropy loss");
    return {loss, std::move(grad)};
}

}  // namespace

void CalibrationConfig::validate() const {
    if (theta < 0.0 || lambda < 0.0 || mu < 0.0) {
        throw std::invalid_argument("calibration coefficients must be nonnegative");
    }
}

LossValueGrad softmax_ce(const Tensor& logits, const std::vector<int>& labels) {
    check_labels(logits, labels);
    return softmax_ce_impl(logits, labels);
}

LossValueGrad calibrated_ce(const Tensor& logits, const std::vector<int>& labels,
                            const LabelStats& stats) {
    check_labels(logits, labels);
    if (stats.gamma.size() != logits.cols()) {
        throw std::invalid_argument("calibrated_ce: gamma size mismatch");
    }
    std::vector<double> shift(stats.gamma.size());
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < shift.size(); ++c) {
        if (!(stats.gamma[c] > 0.0)) {
            throw std::invalid_argument("calibrated_ce: gamma must be strictly positive");
        }
        shift[c] = std::log(stats.gamma[c]);
        max_log = std::max(max_log, shift[c]);
    }
    // Anchoring the shift at its max changes nothing under softmax and makes
    // the uniform-prior case coincide with plain cross-entropy bit-exactly.
    Tensor adjusted = logits;
    const std::size_t classes = logits.cols();
    for (std::size_t b = 0; b < logits.rows(); ++b) {
        double* row = adjusted.data() + b * classes;
        for (std::size_t c = 0; c < classes; ++c) row[c] += shift[c] - max_log;
    }
    return softmax_ce_impl(adjusted, labels);
}

LossValueGrad gc_penalty(const Tensor& logits, const std::vector<int>& labels,
                         const LabelStats& stats) {
    check_labels(logits, labels);
    if (stats.gamma.size() != logits.cols()) {
        throw std::invalid_argument("gc_penalty: gamma size mismatch");
    }
    const std::size_t batch = logits.rows(), classes = logits.cols();
    Tensor grad({batch, classes});
    double loss = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        double mx = -std::numeric_limits<double>::infinity();
        std::size_t count = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            if (std::size_t(labels[b]) == c) continue;
            mx = std::max(mx, logits.at(b, c));
            ++count;
        }
        if (count == 0) continue;  // every batch sample carries this label
        double sum = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            if (std::size_t(labels[b]) == c) continue;
            sum += std::exp(logits.at(b, c) - mx);
        }
        // log of the masked mean of exp(f_c), computed as a shifted LSE
        loss += stats.gamma[c] *
                (mx + std::log(sum) - std::log(static_cast<double>(count)));
        for (std::size_t b = 0; b < batch; ++b) {
            if (std::size_t(labels[b]) == c) continue;
            grad.at(b, c) = stats.gamma[c] * std::exp(logits.at(b, c) - mx) / sum;
        }
    }
    grad.check_finite("gc_penalty gradient");
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite gc_penalty loss");
    return {loss, std::move(grad)};
}

LossValueGrad ad_penalty(const Tensor& local_logits, const Tensor& global_logits,
                         const LabelStats& stats) {
    if (!local_logits.same_shape(global_logits) || local_logits.shape().size() != 2) {
        throw std::invalid_argument("ad_penalty: logit shape mismatch");
    }
    const std::size_t batch = local_logits.rows(), classes = local_logits.cols();
    Tensor grad({batch, classes});
    if (stats.missing.empty() || batch == 0) {
        return {0.0, std::move(grad)};
    }
    // softmax restricted to the missing coordinates. A KL against the
    // full-class softmax masked to missing labels rewards dumping all student
    // mass onto them; renormalizing makes the term a proper KL, zero exactly
    // when the relative missing-label predictions agree.
    const std::size_t m = stats.missing.size();
    std::vector<double> p(m), q(m);
    const double inv_batch = 1.0 / static_cast<double>(batch);
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* grow_in = global_logits.data() + b * classes;
        const double* lrow_in = local_logits.data() + b * classes;
        double* grow = grad.data() + b * classes;
        double pmax = -std::numeric_limits<double>::infinity();
        double qmax = pmax;
        for (std::size_t i = 0; i < m; ++i) {
            pmax = std::max(pmax, grow_in[stats.missing[i]]);
            qmax = std::max(qmax, lrow_in[stats.missing[i]]);
        }
        double psum = 0.0, qsum = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            p[i] = std::exp(grow_in[stats.missing[i]] - pmax);
            q[i] = std::exp(lrow_in[stats.missing[i]] - qmax);
            psum += p[i];
            qsum += q[i];
        }
        for (std::size_t i = 0; i < m; ++i) {
            p[i] /= psum;
            q[i] /= qsum;
            loss += p[i] * std::log(p[i] / q[i]) * inv_batch;
            grow[stats.missing[i]] = (q[i] - p[i]) * inv_batch;
        }
    }
    grad.check_finite("ad_penalty gradient");
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite ad_penalty loss");
    return {loss, std::move(grad)};
}

LossBreakdown fedlec_loss(const Tensor& local_logits, const Tensor* global_logits,
                          const std::vector<int>& labels, const LabelStats& stats,
                          const CalibrationConfig& cfg) {
    cfg.validate();
    LossBreakdown out;
    if (cfg.variant == Variant::FedLEC) {
        if (global_logits == nullptr) {
            throw std::invalid_argument("fedlec_loss: FedLEC requires teacher logits");
        }
        auto [lc, grad_lc] = calibrated_ce(local_logits, labels, stats);
        auto [lgc, grad_gc] = gc_penalty(local_logits, labels, stats);
        auto [lad, grad_ad] = ad_penalty(local_logits, *global_logits, stats);
        out.lc = lc;
        out.lgc = lgc;
        out.lad = lad;
        out.grad_logits = std::move(grad_lc);
        for (std::size_t i = 0; i < out.grad_logits.size(); ++i) {
            out.grad_logits[i] += cfg.theta * grad_gc[i] + cfg.lambda * grad_ad[i];
        }
        out.total = out.lc + cfg.theta * out.lgc + cfg.lambda * out.lad;
    } else {
        auto [lc, grad_lc] = softmax_ce(local_logits, labels);
        out.lc = lc;
        out.total = lc;
        out.grad_logits = std::move(grad_lc);
    }
    return out;
}

std::pair<double, ParamVector> prox_term(const ParamVector& w, const ParamVector& w_global,
                                         double mu) {
    if (mu < 0.0) throw std::invalid_argument("prox_term: mu must be nonnegative");
    if (!w.same_layout(w_global) || w.data.size() != w_global.data.size()) {
        throw std::invalid_argument("prox_term: layout mismatch");
    }
    ParamVector grad = w;
    double sq = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        const double d = w.data[i] - w_global.data[i];
        sq += d * d;
        grad.data[i] = mu * d;
    }
    return {0.5 * mu * sq, std::move(grad)};
}

}  // namespace fedlec
