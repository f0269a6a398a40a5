#pragma once

// Detection training objective: per-anchor classification cross-entropy
// plus smooth-L1 box regression gated on positive samples, combined as
// total = (1/n_cls) * sum L_cls + lambda * (1/n_reg) * sum p* L_reg,
// and the joint objective as the sum of the RPN and Fast R-CNN stages.
//
// Anchor generation, sampling and the box-regression parametrization are
// the caller's job; this module consumes ready-made samples.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace ctfusion {

// One classification/regression training example. For binary (RPN-style)
// use, `p` holds a single foreground probability and `label` is 0 or 1;
// for multi-class use, `p` is a probability vector over classes and
// `label` indexes into it. `is_positive` gates the regression term.
struct AnchorSample {
    std::vector<double> p;
    int label = 0;
    std::array<double, 4> t{};
    std::array<double, 4> t_star{};
    bool is_positive = false;
};

struct LossConfig {
    double sigma = 1.0;    // smooth-L1 transition parameter
    double lambda = 1.0;   // regression balance weight
    double n_cls = 1.0;    // classification normalizer
    double n_reg = 1.0;    // regression normalizer

    void validate() const;
};

enum class LossKind { rpn, fast_rcnn };

// 0.5 * sigma^2 * x^2 for |x| < 1/sigma^2, else |x| - 0.5/sigma^2.
// Continuous at the transition, even, non-negative.
double smooth_l1(double x, double sigma);

// -log(p_star * p + (1 - p_star) * (1 - p)), p clamped to
// [1e-12, 1 - 1e-12] before the log.
double binary_cross_entropy(double p, int p_star);

// -log(p[class_index]) with the same clamping; p must sum to 1 within 1e-9.
double multiclass_cross_entropy(std::span<const double> p, int class_index);

struct DetectionLoss {
    double total = 0.0;
    double cls_term = 0.0;
    double reg_term = 0.0;
};

// RPN kind uses binary cross-entropy on p[0]; fast_rcnn uses multi-class
// cross-entropy on the full vector. Only positive samples contribute to
// the regression sum. Empty input yields all zeros.
DetectionLoss detection_loss(std::span<const AnchorSample> samples,
                             const LossConfig& cfg, LossKind kind);

double joint_loss(double rpn_total, double fast_rcnn_total);

}  // namespace ctfusion
