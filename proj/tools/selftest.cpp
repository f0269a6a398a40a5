// Built-in invariant suite behind `ctfusion selftest`: quick closed-form
// and oracle checks over the tensor primitives, the losses, and the
// evaluation pipeline.

#include "selftest.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "ctfusion/eval.hpp"
#include "ctfusion/fusion.hpp"
#include "ctfusion/io.hpp"
#include "ctfusion/kernels.hpp"
#include "ctfusion/losses.hpp"
#include "ctfusion/tensor_ops.hpp"

namespace ctfusion::selftest {
namespace {

struct Harness {
    bool color;
    int passed = 0;
    int failed = 0;

    void check(const char* name, bool ok) {
        if (ok) {
            ++passed;
            std::printf("%s %s\n", color ? "\x1b[32m[ok]\x1b[0m" : "[ok]", name);
        } else {
            ++failed;
            std::printf("%s %s\n", color ? "\x1b[31m[FAIL]\x1b[0m" : "[FAIL]",
                        name);
        }
    }
};

bool near(double a, double b, double tol = 1e-12) {
    return std::fabs(a - b) <= tol;
}

void tensor_checks(Harness& h) {
    // 1x1 kernel with weight 2 doubles every value
    Tensor t = seeded_tensor(4, 3, 2, 7);
    ConvKernel twice(1, 2, 2);
    twice.weight(0, 0, 0, 0) = 2.0;
    twice.weight(0, 0, 1, 1) = 2.0;
    Tensor doubled = conv2d(t, twice, 0);
    bool ok = true;
    for (std::size_t i = 0; i < t.size(); ++i) {
        ok = ok && near(doubled.data()[i], 2.0 * t.data()[i]);
    }
    h.check("conv2d: 1x1 scaling kernel doubles values", ok);

    // centered 3x3 identity kernel reproduces the input
    ConvKernel ident(3, 2, 2);
    ident.weight(1, 1, 0, 0) = 1.0;
    ident.weight(1, 1, 1, 1) = 1.0;
    Tensor same = conv2d(t, ident, 1);
    ok = true;
    for (std::size_t i = 0; i < t.size(); ++i) {
        ok = ok && near(same.data()[i], t.data()[i]);
    }
    h.check("conv2d: identity kernel reproduces input", ok);

    // all-ones 3x3 kernel on a constant-1 4x4 input counts the window
    ConvKernel ones(3, 1, 1);
    for (double& w : ones.weights()) w = 1.0;
    Tensor flat = Tensor::full(4, 4, 1, 1.0);
    Tensor counts = conv2d(flat, ones, 1);
    ok = near(counts.at(0, 0, 0), 4.0) && near(counts.at(1, 0, 0), 6.0) &&
         near(counts.at(1, 1, 0), 9.0) && near(counts.at(3, 3, 0), 4.0);
    h.check("conv2d: zero-padded window sums", ok);

    // batch norm affine: gamma 2, beta 1, mean 3, var 4 maps 5 to 3
    BatchNormParams bn(1, 1e-300);
    bn.gamma[0] = 2.0;
    bn.beta[0] = 1.0;
    bn.running_mean[0] = 3.0;
    bn.running_var[0] = 4.0;
    Tensor five = Tensor::full(1, 1, 1, 5.0);
    h.check("batchnorm: affine hand value",
            near(batchnorm_infer(five, bn).at(0, 0, 0), 3.0, 1e-9));

    // activations
    Tensor acts(1, 1, 3, {-1.0, 0.0, 2.0});
    Tensor r = relu(acts);
    ok = near(r.at(0, 0, 0), 0.0) && near(r.at(0, 0, 1), 0.0) &&
         near(r.at(0, 0, 2), 2.0);
    h.check("relu: clamps negatives", ok);
    ChannelVector sv(2, {0.0, std::log(3.0)});
    ChannelVector sg = sigmoid(sv);
    h.check("sigmoid: closed forms at 0 and ln 3",
            near(sg[0], 0.5) && near(sg[1], 0.75));

    // pooling
    Tensor sq(2, 2, 1, {1.0, 2.0, 3.0, 4.0});
    h.check("global average pool: mean of 1..4",
            near(global_avg_pool(sq)[0], 2.5));
    Tensor two_ch(1, 1, 2, {1.0, 5.0});
    h.check("channel pool: avg and max across channels",
            near(channel_pool(two_ch, PoolKind::avg).at(0, 0), 3.0) &&
                near(channel_pool(two_ch, PoolKind::max).at(0, 0), 5.0));

    // pooling is invariant to multiplying by a ones vector
    ChannelVector ones_vec(2, {1.0, 1.0});
    Tensor scaled = broadcast_combine(t, ones_vec, CombineOp::mul);
    ChannelVector g1 = global_avg_pool(t);
    ChannelVector g2 = global_avg_pool(scaled);
    h.check("global average pool unchanged by ones-vector multiply",
            g1[0] == g2[0] && g1[1] == g2[1]);

    // broadcast arithmetic
    Tensor base(1, 1, 2, {3.0, 4.0});
    ChannelVector w(2, {2.0, 0.5});
    Tensor prod = broadcast_combine(base, w, CombineOp::mul);
    h.check("broadcast multiply by channel vector",
            near(prod.at(0, 0, 0), 6.0) && near(prod.at(0, 0, 1), 2.0));

    // conv backward against one-sided recomputation
    Tensor in = seeded_tensor(5, 5, 2, 11);
    FusionParams dummy = seeded_fusion_params(2, 2, 13);
    const ConvKernel& kern = dummy.ciem.conv3;
    Tensor go = seeded_tensor(5, 5, 2, 17);
    Conv2dGrads grads = conv2d_backward(in, kern, go, 1);
    auto objective = [&](const Tensor& input, const ConvKernel& kk) {
        Tensor out = conv2d(input, kk, 1);
        double sum = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            sum += out.data()[i] * go.data()[i];
        }
        return sum;
    };
    const double step = 1e-5;
    ok = true;
    for (std::size_t i = 0; i < 6; ++i) {
        Tensor nudged = in;
        nudged.data()[i * 7] += step;
        Tensor nudged_dn = in;
        nudged_dn.data()[i * 7] -= step;
        const double num =
            (objective(nudged, kern) - objective(nudged_dn, kern)) / (2 * step);
        ok = ok && near(grads.input.data()[i * 7], num, 1e-6);
    }
    h.check("conv2d backward matches finite differences", ok);
}

void loss_checks(Harness& h) {
    h.check("smooth L1: zero at zero", smooth_l1(0.0, 1.0) == 0.0);
    h.check("smooth L1: sigma 1 at x 2", near(smooth_l1(2.0, 1.0), 1.5));
    bool knot = true;
    for (double sigma : {1.0, 3.0}) {
        const double x = 1.0 / (sigma * sigma);
        const double quad = 0.5 * sigma * sigma * x * x;
        const double lin = x - 0.5 / (sigma * sigma);
        knot = knot && (quad - lin == 0.0);
    }
    h.check("smooth L1: branches agree exactly at the transition", knot);

    h.check("binary cross-entropy: ln 2 at p 0.5",
            near(binary_cross_entropy(0.5, 1), std::log(2.0)) &&
                near(binary_cross_entropy(0.5, 0), std::log(2.0)));
    h.check("binary cross-entropy: confident mistake",
            near(binary_cross_entropy(0.9, 0), -std::log(0.1), 1e-9));
    std::vector<double> uniform(4, 0.25);
    h.check("multiclass cross-entropy: uniform over 4 classes",
            near(multiclass_cross_entropy(uniform, 2), std::log(4.0)));

    AnchorSample pos;
    pos.p = {1.0};
    pos.label = 1;
    pos.is_positive = true;
    pos.t = {2.0, 0.0, 0.0, 0.0};
    pos.t_star = {0.0, 0.0, 0.0, 0.0};
    std::vector<AnchorSample> samples{pos};
    DetectionLoss dl = detection_loss(samples, LossConfig{1.0, 1.0, 1.0, 1.0},
                                      LossKind::rpn);
    h.check("detection loss: single positive regression fixture",
            near(dl.total, 1.5, 1e-9));
    h.check("joint loss adds stages", near(joint_loss(1.5, 2.5), 4.0));
}

void eval_checks(Harness& h) {
    h.check("iou: hand geometry",
            near(iou(0, 0, 2, 2, 1, 0, 2, 2), 1.0 / 3.0) &&
                near(iou(0, 0, 2, 2, 0, 0, 2, 2), 1.0) &&
                near(iou(0, 0, 2, 2, 10, 10, 2, 2), 0.0));

    std::vector<GroundTruthBox> gts{
        {"a", 0, 0, 20, 60, "person", Occlusion::none, false},
        {"a", 0, 0, 20, 54.9, "person", Occlusion::none, false},
        {"a", 0, 0, 20, 100, "person", Occlusion::heavy, false},
    };
    auto filtered = apply_reasonable_filter(gts, ReasonableFilter{});
    h.check("reasonable filter: height and occlusion rules",
            !filtered[0].ignore && filtered[1].ignore && filtered[2].ignore);

    std::vector<DetectionBox> dets{{"a", 0, 0, 10, 10, 0.9},
                                   {"a", 2, 0, 10, 10, 0.8}};
    std::vector<GroundTruthBox> one_gt{
        {"a", 0, 0, 10, 10, "person", Occlusion::none, false}};
    MatchCounts mc = match_detections(dets, one_gt, 0.5, 0.0);
    h.check("greedy matching: second detection on a taken box is FP",
            mc.tp == 1 && mc.fp == 1 && mc.fn == 0);

    // three-image fixture swept by hand
    std::vector<ImageEvalData> images(3);
    images[0].ground_truths = {
        {"im1", 10, 10, 20, 60, "person", Occlusion::none, false},
        {"im1", 100, 10, 20, 60, "person", Occlusion::none, false}};
    images[1].ground_truths = {
        {"im2", 50, 50, 25, 60, "person", Occlusion::none, false}};
    images[2].ground_truths = {
        {"im3", 30, 20, 20, 60, "cyclist", Occlusion::none, false}};
    images[0].detections = {{"im1", 10, 10, 20, 60, 0.9},
                            {"im1", 105, 10, 20, 60, 0.6}};
    images[1].detections = {{"im2", 58, 50, 25, 60, 0.8},
                            {"im2", 200, 200, 30, 60, 0.5}};
    images[2].detections = {{"im3", 45, 20, 20, 60, 0.7}};

    MissRateCurve curve = miss_rate_fppi_curve(images, 0.5);
    const std::vector<CurvePoint> expected{
        {0.0, 1.0},        {0.0, 0.75},       {0.0, 0.5},
        {1.0 / 3.0, 0.5},  {1.0 / 3.0, 0.25}, {2.0 / 3.0, 0.25}};
    bool ok = curve.points.size() == expected.size();
    for (std::size_t i = 0; ok && i < expected.size(); ++i) {
        ok = near(curve.points[i].fppi, expected[i].fppi, 1e-15) &&
             near(curve.points[i].miss_rate, expected[i].miss_rate, 1e-15);
    }
    h.check("miss rate curve: three-image fixture sweep", ok);
    h.check("log-average miss rate: fixture geometric mean",
            near(curve.log_average_mr,
                 std::exp(-(11.0 / 9.0) * std::log(2.0)), 1e-12));

    std::vector<CurvePoint> flat{{0.0, 0.1}, {1.0, 0.1}};
    h.check("log-average miss rate: constant curve",
            near(log_average_miss_rate(flat), 0.1));
}

void fusion_checks(Harness& h) {
    FusionParams p = seeded_fusion_params(4, 4, 42);
    Tensor f_c = seeded_tensor(5, 5, 4, 43);
    Tensor f_t = seeded_tensor(5, 5, 4, 44);

    Tensor fused = ciem_fuse(f_c, f_t, p.ciem);
    bool nonneg = true;
    for (double v : fused.data()) nonneg = nonneg && v >= 0.0;
    h.check("cascaded fusion output is non-negative", nonneg);

    ChannelVector w_ca = channel_attention(fused, p.ciem);
    SpatialMap w_pa = spatial_attention(fused, p.ciem);
    bool in_range = true;
    for (double v : w_ca.data()) in_range = in_range && v > 0.0 && v < 1.0;
    for (double v : w_pa.data()) in_range = in_range && v > 0.0 && v < 1.0;
    h.check("attention weights stay inside (0,1)", in_range);

    EnhancedPair same = ciem_enhance(f_c, f_c, p.ciem);
    bool identical = true;
    for (std::size_t i = 0; i < same.color.size(); ++i) {
        identical = identical && same.color.data()[i] == same.thermal.data()[i];
    }
    h.check("identical modalities enhance identically", identical);

    EnhancedPair enhanced = ciem_enhance(f_c, f_t, p.ciem);
    bool contractive = true;
    for (std::size_t i = 0; i < f_c.size(); ++i) {
        contractive = contractive && std::fabs(enhanced.color.data()[i]) <=
                                         std::fabs(f_c.data()[i]);
    }
    h.check("enhancement contracts magnitudes", contractive);

    // swapping inputs together with the t/c branches leaves the output alone
    CaffmParams swapped{p.caffm.conv_c, p.caffm.conv_t, p.caffm.conv_g};
    Tensor a = caffm_fuse(enhanced.color, enhanced.thermal, p.caffm);
    Tensor b = caffm_fuse(enhanced.thermal, enhanced.color, swapped);
    bool symmetric = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
        symmetric = symmetric && near(a.data()[i], b.data()[i]);
    }
    h.check("cross-modal fusion is symmetric under joint relabeling", symmetric);

    FusionTrace trace = fusion_forward_trace(f_c, f_t, p);
    Tensor composed = caffm_fuse(enhanced.color, enhanced.thermal, p.caffm);
    bool match = true;
    for (std::size_t i = 0; i < composed.size(); ++i) {
        match = match && trace.output.data()[i] == composed.data()[i];
    }
    h.check("traced forward equals composed public ops", match);
}

void io_checks(Harness& h) {
    namespace fs = std::filesystem;
    const fs::path dir =
        fs::temp_directory_path() / "ctfusion-selftest";
    fs::create_directories(dir);
    const std::string path = (dir / "params.txt").string();

    FusionParams p = seeded_fusion_params(4, 2, 7);
    save_params(p, path);
    FusionParams q = load_params(path);
    auto pv = param_groups(p);
    auto qv = param_groups(q);
    bool ok = pv.size() == qv.size();
    for (std::size_t g = 0; ok && g < pv.size(); ++g) {
        ok = pv[g].size == qv[g].size;
        for (std::size_t i = 0; ok && i < pv[g].size; ++i) {
            ok = pv[g].data[i] == qv[g].data[i];
        }
    }
    ok = ok && q.ciem.bn.running_mean == p.ciem.bn.running_mean &&
         q.ciem.bn.running_var == p.ciem.bn.running_var &&
         q.ciem.bn.epsilon == p.ciem.bn.epsilon;
    h.check("parameter file round-trips bit-exactly", ok);
    fs::remove_all(dir);
}

}  // namespace

int run(bool color) {
    std::printf("kernel backend: %s\n",
                kernels::backend_name(kernels::active_backend()));
    Harness h{color};
    tensor_checks(h);
    loss_checks(h);
    eval_checks(h);
    fusion_checks(h);
    io_checks(h);
    std::printf("selftest: %d passed, %d failed\n", h.passed, h.failed);
    return h.failed == 0 ? 0 : 1;
}

}  // namespace ctfusion::selftest
