#pragma once

// Central finite-difference verification of fusion_backward. The scalar
// objective is a fixed random projection of the fusion output; every
// learnable parameter and both inputs are perturbed element-wise and the
// analytic gradients compared group by group.

#include <cstdint>
#include <string>
#include <vector>

namespace ctfusion {

struct GradCheckGroup {
    std::string name;
    std::size_t size = 0;
    double max_rel_error = 0.0;
    double max_abs_analytic = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double worst_error = 0.0;
    std::string worst_group;

    bool passed(double tolerance) const { return worst_error < tolerance; }
};

struct GradCheckOptions {
    int width = 5;
    int height = 5;
    int channels = 4;
    int reduction_ratio = 4;
    std::uint64_t seed = 42;
    double step = 1e-4;
    // test hook: name of a gradient group to corrupt before comparison
    std::string corrupt_group;
};

GradCheckReport gradcheck_fusion(const GradCheckOptions& opts);

}  // namespace ctfusion
