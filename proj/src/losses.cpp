#include "ctfusion/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ctfusion {
namespace {

constexpr double kLogClamp = 1e-12;

double clamped_neg_log(double p) {
    return -std::log(std::clamp(p, kLogClamp, 1.0 - kLogClamp));
}

}  // namespace

void LossConfig::validate() const {
    if (sigma <= 0.0) throw std::invalid_argument("LossConfig: sigma must be positive");
    if (lambda <= 0.0) throw std::invalid_argument("LossConfig: lambda must be positive");
    if (n_cls <= 0.0 || n_reg <= 0.0) {
        throw std::invalid_argument("LossConfig: normalizers must be positive");
    }
}

double smooth_l1(double x, double sigma) {
    if (sigma <= 0.0) {
        throw std::invalid_argument("smooth_l1: sigma must be positive");
    }
    const double s2 = sigma * sigma;
    const double ax = std::fabs(x);
    if (ax < 1.0 / s2) return 0.5 * s2 * x * x;
    return ax - 0.5 / s2;
}

double binary_cross_entropy(double p, int p_star) {
    if (p_star != 0 && p_star != 1) {
        throw std::invalid_argument("binary_cross_entropy: label must be 0 or 1");
    }
    return clamped_neg_log(p_star == 1 ? p : 1.0 - p);
}

double multiclass_cross_entropy(std::span<const double> p, int class_index) {
    if (class_index < 0 || static_cast<std::size_t>(class_index) >= p.size()) {
        throw std::invalid_argument("multiclass_cross_entropy: class index " +
                                    std::to_string(class_index) +
                                    " out of range");
    }
    double sum = 0.0;
    for (double v : p) sum += v;
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument(
            "multiclass_cross_entropy: probabilities sum to " +
            std::to_string(sum) + ", expected 1");
    }
    return clamped_neg_log(p[static_cast<std::size_t>(class_index)]);
}

DetectionLoss detection_loss(std::span<const AnchorSample> samples,
                             const LossConfig& cfg, LossKind kind) {
    cfg.validate();
    double cls_sum = 0.0;
    double reg_sum = 0.0;
    for (const AnchorSample& s : samples) {
        if (s.p.empty()) {
            throw std::invalid_argument("detection_loss: sample has no prediction");
        }
        if (kind == LossKind::rpn) {
            cls_sum += binary_cross_entropy(s.p[0], s.label);
        } else {
            cls_sum += multiclass_cross_entropy(s.p, s.label);
        }
        if (s.is_positive) {
            for (int k = 0; k < 4; ++k) {
                reg_sum += smooth_l1(s.t[static_cast<std::size_t>(k)] -
                                         s.t_star[static_cast<std::size_t>(k)],
                                     cfg.sigma);
            }
        }
    }
    DetectionLoss out;
    out.cls_term = cls_sum / cfg.n_cls;
    out.reg_term = cfg.lambda * reg_sum / cfg.n_reg;
    out.total = out.cls_term + out.reg_term;
    return out;
}

double joint_loss(double rpn_total, double fast_rcnn_total) {
    if (rpn_total < 0.0 || fast_rcnn_total < 0.0) {
        throw std::invalid_argument("joint_loss: stage losses must be non-negative");
    }
    return rpn_total + fast_rcnn_total;
}

}  // namespace ctfusion
