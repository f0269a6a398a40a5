#include "ctfusion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ctfusion/fusion.hpp"

namespace ctfusion {
namespace {

double projection(const Tensor& out, const Tensor& weights) {
    double sum = 0.0;
    auto o = out.data();
    auto w = weights.data();
    for (std::size_t i = 0; i < o.size(); ++i) sum += o[i] * w[i];
    return sum;
}

}  // namespace

GradCheckReport gradcheck_fusion(const GradCheckOptions& opts) {
    FusionParams params = seeded_fusion_params(opts.channels,
                                               opts.reduction_ratio, opts.seed);
    Tensor f_color = seeded_tensor(opts.width, opts.height, opts.channels,
                                   opts.seed + 1);
    Tensor f_thermal = seeded_tensor(opts.width, opts.height, opts.channels,
                                     opts.seed + 2);
    const Tensor proj = seeded_tensor(opts.width, opts.height, opts.channels,
                                      opts.seed + 3);

    FusionGrads analytic = fusion_backward(f_color, f_thermal, params, proj);

    // perturbable views: all parameter groups plus the two inputs
    std::vector<ParamGroupView> theta = param_groups(params);
    theta.push_back({"input.color", f_color.data().data(), f_color.size()});
    theta.push_back({"input.thermal", f_thermal.data().data(), f_thermal.size()});

    std::vector<ParamGroupView> grads = param_groups(analytic);
    grads.push_back({"input.color", analytic.f_color.data().data(),
                     analytic.f_color.size()});
    grads.push_back({"input.thermal", analytic.f_thermal.data().data(),
                     analytic.f_thermal.size()});

    if (!opts.corrupt_group.empty()) {
        bool found = false;
        for (ParamGroupView& g : grads) {
            if (g.name == opts.corrupt_group) {
                g.data[0] += 1e-3;
                found = true;
            }
        }
        if (!found) {
            throw std::invalid_argument("gradcheck: unknown group '" +
                                        opts.corrupt_group + "'");
        }
    }

    GradCheckReport report;
    const double h = opts.step;
    for (std::size_t gi = 0; gi < theta.size(); ++gi) {
        const ParamGroupView& tg = theta[gi];
        const ParamGroupView& ag = grads[gi];
        double max_diff = 0.0;
        double max_abs = 0.0;
        for (std::size_t i = 0; i < tg.size; ++i) {
            const double saved = tg.data[i];
            tg.data[i] = saved + h;
            const double up = projection(fusion_forward(f_color, f_thermal, params), proj);
            tg.data[i] = saved - h;
            const double down = projection(fusion_forward(f_color, f_thermal, params), proj);
            tg.data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            max_diff = std::max(max_diff, std::fabs(ag.data[i] - numeric));
            max_abs = std::max({max_abs, std::fabs(ag.data[i]), std::fabs(numeric)});
        }
        const double rel = max_diff / std::max(max_abs, 1e-6);
        report.groups.push_back({tg.name, tg.size, rel, max_abs});
        if (rel > report.worst_error) {
            report.worst_error = rel;
            report.worst_group = tg.name;
        }
    }
    return report;
}

}  // namespace ctfusion
