#include "ctfusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ctfusion/kernels.hpp"

namespace ctfusion {
namespace {

using kernels::table;

// mt19937_64 mapped to [0,1) through the top 53 bits; identical streams on
// every platform.
class SeededUniform {
public:
    explicit SeededUniform(std::uint64_t seed) : eng_(seed) {}
    double unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double range(double lo, double hi) { return lo + (hi - lo) * unit(); }

private:
    std::mt19937_64 eng_;
};

void fill_uniform(std::span<double> dst, SeededUniform& rng, double scale) {
    for (double& v : dst) v = rng.range(-1.0, 1.0) * scale;
}

void add_into(Tensor& dst, const Tensor& src) {
    table().ew_add(dst.data().data(), src.data().data(), dst.data().data(),
                   dst.size());
}

void add_into(ChannelVector& dst, const ChannelVector& src) {
    table().ew_add(dst.data().data(), src.data().data(), dst.data().data(),
                   dst.data().size());
}

void add_into(SpatialMap& dst, const SpatialMap& src) {
    table().ew_add(dst.data().data(), src.data().data(), dst.data().data(),
                   dst.size());
}

ChannelVector ew_mul_vec(const ChannelVector& a, const ChannelVector& b) {
    ChannelVector out(a.channels());
    table().ew_mul(a.data().data(), b.data().data(), out.data().data(),
                   a.data().size());
    return out;
}

ChannelVector ew_add_vec(const ChannelVector& a, const ChannelVector& b) {
    ChannelVector out(a.channels());
    table().ew_add(a.data().data(), b.data().data(), out.data().data(),
                   a.data().size());
    return out;
}

// 1x1 convolution applied to a 1x1xC vector.
ChannelVector vec_conv1x1(const ChannelVector& v, const ConvKernel& k) {
    if (k.size() != 1) {
        throw std::invalid_argument("vec_conv1x1: kernel must be 1x1");
    }
    if (k.in_channels() != v.channels()) {
        throw std::invalid_argument("vec_conv1x1: channel mismatch");
    }
    ChannelVector out(k.out_channels());
    std::copy(k.bias().begin(), k.bias().end(), out.data().begin());
    table().fma_block(v.data().data(), k.weights().data(), out.data().data(),
                      static_cast<std::size_t>(k.in_channels()),
                      static_cast<std::size_t>(k.out_channels()));
    return out;
}

ChannelVector vec_conv1x1_backward(const ChannelVector& v, const ConvKernel& k,
                                   const ChannelVector& grad_out,
                                   ConvKernel& grad_kernel) {
    const std::size_t in_c = static_cast<std::size_t>(k.in_channels());
    const std::size_t out_c = static_cast<std::size_t>(k.out_channels());
    table().outer_acc(v.data().data(), grad_out.data().data(),
                      grad_kernel.weights().data(), in_c, out_c);
    table().ew_add(grad_kernel.bias().data(), grad_out.data().data(),
                   grad_kernel.bias().data(), out_c);
    // transpose for the input gradient: dv[i] = sum_o w(i,o) * g[o]
    std::vector<double> wt(in_c * out_c);
    for (std::size_t i = 0; i < in_c; ++i) {
        for (std::size_t o = 0; o < out_c; ++o) {
            wt[o * in_c + i] = k.weights()[i * out_c + o];
        }
    }
    ChannelVector dv(k.in_channels());
    table().fma_block(grad_out.data().data(), wt.data(), dv.data().data(),
                      out_c, in_c);
    return dv;
}

// Shared channel-attention MLP: C -> hidden (ReLU) -> C, no biases.
struct MlpResult {
    std::vector<double> pre;   // hidden pre-activation
    std::vector<double> hid;   // relu(pre)
    ChannelVector out;
};

MlpResult mlp_forward(const ChannelVector& d, const std::vector<double>& w1,
                      const std::vector<double>& w2, int channels, int hidden) {
    MlpResult r{std::vector<double>(static_cast<std::size_t>(hidden), 0.0),
                std::vector<double>(static_cast<std::size_t>(hidden), 0.0),
                ChannelVector(channels)};
    table().fma_block(d.data().data(), w1.data(), r.pre.data(),
                      static_cast<std::size_t>(channels),
                      static_cast<std::size_t>(hidden));
    table().relu(r.pre.data(), r.hid.data(), r.pre.size());
    table().fma_block(r.hid.data(), w2.data(), r.out.data().data(),
                      static_cast<std::size_t>(hidden),
                      static_cast<std::size_t>(channels));
    return r;
}

// Returns the descriptor gradient; accumulates weight gradients.
ChannelVector mlp_backward(const ChannelVector& d, const MlpResult& fwd,
                           const std::vector<double>& w1,
                           const std::vector<double>& w2, int channels,
                           int hidden, const ChannelVector& grad_out,
                           std::vector<double>& grad_w1,
                           std::vector<double>& grad_w2) {
    const std::size_t C = static_cast<std::size_t>(channels);
    const std::size_t H = static_cast<std::size_t>(hidden);
    table().outer_acc(fwd.hid.data(), grad_out.data().data(), grad_w2.data(),
                      H, C);
    std::vector<double> w2t(H * C);
    for (std::size_t j = 0; j < H; ++j) {
        for (std::size_t c = 0; c < C; ++c) w2t[c * H + j] = w2[j * C + c];
    }
    std::vector<double> dhid(H, 0.0);
    table().fma_block(grad_out.data().data(), w2t.data(), dhid.data(), C, H);
    std::vector<double> dpre(H);
    table().relu_grad(fwd.pre.data(), dhid.data(), dpre.data(), H);
    table().outer_acc(d.data().data(), dpre.data(), grad_w1.data(), C, H);
    std::vector<double> w1t(C * H);
    for (std::size_t i = 0; i < C; ++i) {
        for (std::size_t j = 0; j < H; ++j) w1t[j * C + i] = w1[i * H + j];
    }
    ChannelVector dd(channels);
    table().fma_block(dpre.data(), w1t.data(), dd.data().data(), H, C);
    return dd;
}

// sigmoid(relu(conv1x1(v))) with cached stages.
struct AttResult {
    ChannelVector pre;
    ChannelVector act;
    ChannelVector weight;
};

AttResult att_forward(const ChannelVector& v, const ConvKernel& conv) {
    AttResult r;
    r.pre = vec_conv1x1(v, conv);
    r.act = relu(r.pre);
    r.weight = sigmoid(r.act);
    return r;
}

ChannelVector att_backward(const ChannelVector& v, const ConvKernel& conv,
                           const AttResult& fwd, const ChannelVector& grad_w,
                           ConvKernel& grad_conv) {
    ChannelVector d_act = sigmoid_backward_from_output(fwd.weight, grad_w);
    ChannelVector d_pre(d_act.channels());
    table().relu_grad(fwd.pre.data().data(), d_act.data().data(),
                      d_pre.data().data(), d_act.data().size());
    return vec_conv1x1_backward(v, conv, d_pre, grad_conv);
}

}  // namespace

// --- parameter validation ---------------------------------------------------

void CiemParams::validate() const {
    const int C = conv3.out_channels();
    if (conv1.size() != 1 || conv1.in_channels() != 2 * C ||
        conv1.out_channels() != C) {
        throw std::invalid_argument("CiemParams: conv1 must map 2C -> C with a 1x1 kernel");
    }
    if (conv3.size() != 3 || conv3.in_channels() != C) {
        throw std::invalid_argument("CiemParams: conv3 must map C -> C with a 3x3 kernel");
    }
    bn.validate();
    if (bn.channels() != C) {
        throw std::invalid_argument("CiemParams: batch norm channel mismatch");
    }
    if (reduction_ratio <= 0 || C % reduction_ratio != 0) {
        throw std::invalid_argument("CiemParams: reduction ratio must divide C");
    }
    const std::size_t h = static_cast<std::size_t>(C / reduction_ratio);
    if (cam_w1.size() != static_cast<std::size_t>(C) * h ||
        cam_w2.size() != h * static_cast<std::size_t>(C)) {
        throw std::invalid_argument("CiemParams: attention MLP shape mismatch");
    }
    if (pam_conv.size() != 7 || pam_conv.in_channels() != 2 ||
        pam_conv.out_channels() != 1) {
        throw std::invalid_argument("CiemParams: spatial attention conv must be 7x7, 2 -> 1");
    }
}

void CaffmParams::validate() const {
    const int C = conv_g.out_channels();
    for (const ConvKernel* k : {&conv_t, &conv_c, &conv_g}) {
        if (k->size() != 1 || k->in_channels() != C || k->out_channels() != C) {
            throw std::invalid_argument("CaffmParams: branches must be 1x1, C -> C");
        }
    }
}

void FusionParams::validate() const {
    ciem.validate();
    caffm.validate();
    if (ciem.channels() != caffm.channels()) {
        throw std::invalid_argument("FusionParams: CIEM/CAFFM channel mismatch");
    }
}

FusionParams seeded_fusion_params(int channels, int reduction_ratio,
                                  std::uint64_t seed) {
    if (channels <= 0 || reduction_ratio <= 0 ||
        channels % reduction_ratio != 0) {
        throw std::invalid_argument(
            "seeded_fusion_params: reduction ratio must divide channels");
    }
    SeededUniform rng(seed);
    const int C = channels;
    const int h = C / reduction_ratio;

    FusionParams p{
        CiemParams{ConvKernel(1, 2 * C, C), ConvKernel(3, C, C),
                   BatchNormParams(C),
                   std::vector<double>(static_cast<std::size_t>(C) * h),
                   std::vector<double>(static_cast<std::size_t>(h) * C),
                   ConvKernel(7, 2, 1), reduction_ratio},
        CaffmParams{ConvKernel(1, C, C), ConvKernel(1, C, C),
                    ConvKernel(1, C, C)}};

    auto init_kernel = [&rng](ConvKernel& k) {
        const double scale =
            1.0 / std::sqrt(static_cast<double>(k.size()) * k.size() *
                            k.in_channels());
        fill_uniform(k.weights(), rng, scale);
        fill_uniform(k.bias(), rng, scale);
    };

    init_kernel(p.ciem.conv1);
    init_kernel(p.ciem.conv3);
    for (int c = 0; c < C; ++c) {
        p.ciem.bn.gamma[c] = 1.0 + 0.2 * rng.range(-1.0, 1.0);
        p.ciem.bn.beta[c] = 0.2 * rng.range(-1.0, 1.0);
        p.ciem.bn.running_mean[c] = 0.3 * rng.range(-1.0, 1.0);
        p.ciem.bn.running_var[c] = 1.0 + 0.5 * rng.unit();
    }
    // The pooled descriptors feeding the attention MLP are non-negative, so
    // positive first-layer weights keep the hidden units active.
    for (double& v : p.ciem.cam_w1) {
        v = rng.unit() / std::sqrt(static_cast<double>(C));
    }
    fill_uniform(p.ciem.cam_w2, rng, 1.0 / std::sqrt(static_cast<double>(h)));
    init_kernel(p.ciem.pam_conv);
    init_kernel(p.caffm.conv_t);
    init_kernel(p.caffm.conv_c);
    init_kernel(p.caffm.conv_g);
    p.validate();
    return p;
}

Tensor seeded_tensor(int width, int height, int channels, std::uint64_t seed,
                     double lo, double hi) {
    SeededUniform rng(seed);
    Tensor t(width, height, channels);
    for (double& v : t.data()) v = rng.range(lo, hi);
    return t;
}

// --- baseline fusion ----------------------------------------------------

Tensor baseline_fuse(const Tensor& f_color, const Tensor& f_thermal,
                     BaselineFusion mode, const ConvKernel* cascade_proj) {
    if (!f_color.same_shape(f_thermal)) {
        throw std::invalid_argument("baseline_fuse: input shapes differ");
    }
    switch (mode) {
        case BaselineFusion::add:
            return broadcast_combine(f_color, f_thermal, CombineOp::add);
        case BaselineFusion::mul:
            return broadcast_combine(f_color, f_thermal, CombineOp::mul);
        case BaselineFusion::cascade: {
            if (cascade_proj == nullptr) {
                throw std::invalid_argument(
                    "baseline_fuse: cascade mode requires a projection kernel");
            }
            if (cascade_proj->size() != 1 ||
                cascade_proj->in_channels() != 2 * f_color.channels() ||
                cascade_proj->out_channels() != f_color.channels()) {
                throw std::invalid_argument(
                    "baseline_fuse: projection kernel must be 1x1, 2C -> C");
            }
            return conv2d(concat_channels(f_color, f_thermal), *cascade_proj, 0);
        }
    }
    throw std::invalid_argument("baseline_fuse: unknown mode");
}

// --- CIEM ------------------------------------------------------------------

Tensor ciem_fuse(const Tensor& f_color, const Tensor& f_thermal,
                 const CiemParams& p) {
    if (!f_color.same_shape(f_thermal)) {
        throw std::invalid_argument("ciem_fuse: input shapes differ");
    }
    if (f_color.channels() != p.channels()) {
        throw std::invalid_argument("ciem_fuse: channel count does not match parameters");
    }
    Tensor cat = concat_channels(f_color, f_thermal);
    Tensor z1 = conv2d(cat, p.conv1, 0);
    Tensor z2 = conv2d(z1, p.conv3, p.conv3.same_padding());
    Tensor z3 = batchnorm_infer(z2, p.bn);
    return relu(z3);
}

ChannelVector channel_attention(const Tensor& f, const CiemParams& p) {
    if (f.channels() != p.channels()) {
        throw std::invalid_argument("channel_attention: channel mismatch");
    }
    MlpResult avg =
        mlp_forward(global_avg_pool(f), p.cam_w1, p.cam_w2, p.channels(), p.hidden());
    MlpResult mx =
        mlp_forward(global_max_pool(f), p.cam_w1, p.cam_w2, p.channels(), p.hidden());
    return sigmoid(ew_add_vec(avg.out, mx.out));
}

SpatialMap spatial_attention(const Tensor& f, const CiemParams& p) {
    Tensor cat = stack_maps(channel_pool(f, PoolKind::avg),
                            channel_pool(f, PoolKind::max));
    Tensor pre = conv2d(cat, p.pam_conv, p.pam_conv.same_padding());
    return sigmoid(as_spatial_map(pre));
}

EnhancedPair ciem_enhance(const Tensor& f_color, const Tensor& f_thermal,
                          const CiemParams& p) {
    Tensor fused = ciem_fuse(f_color, f_thermal, p);
    ChannelVector w_ca = channel_attention(fused, p);
    Tensor fused_weighted = broadcast_combine(fused, w_ca, CombineOp::mul);
    SpatialMap w_pa = spatial_attention(fused_weighted, p);
    Tensor color = broadcast_combine(
        broadcast_combine(f_color, w_ca, CombineOp::mul), w_pa, CombineOp::mul);
    Tensor thermal = broadcast_combine(
        broadcast_combine(f_thermal, w_ca, CombineOp::mul), w_pa, CombineOp::mul);
    return {std::move(color), std::move(thermal)};
}

// --- CAFFM -------------------------------------------------------------

ChannelVector caffm_cross_weights(const Tensor& f_enhanced,
                                  const ConvKernel& conv) {
    if (conv.in_channels() != f_enhanced.channels()) {
        throw std::invalid_argument("caffm_cross_weights: channel mismatch");
    }
    return att_forward(global_avg_pool(f_enhanced), conv).weight;
}

ChannelVector caffm_complement(const Tensor& f_local,
                               const ChannelVector& w_other) {
    if (w_other.channels() != f_local.channels()) {
        throw std::invalid_argument("caffm_complement: channel mismatch");
    }
    return ew_mul_vec(w_other, global_avg_pool(f_local));
}

ChannelVector global_fusion_weight(const ChannelVector& v,
                                   const ConvKernel& conv) {
    return att_forward(v, conv).weight;
}

Tensor caffm_fuse(const Tensor& f_color_enh, const Tensor& f_thermal_enh,
                  const CaffmParams& p) {
    if (!f_color_enh.same_shape(f_thermal_enh)) {
        throw std::invalid_argument("caffm_fuse: input shapes differ");
    }
    if (f_color_enh.channels() != p.channels()) {
        throw std::invalid_argument("caffm_fuse: channel count does not match parameters");
    }
    ChannelVector w_t = caffm_cross_weights(f_thermal_enh, p.conv_t);
    ChannelVector w_c = caffm_cross_weights(f_color_enh, p.conv_c);
    ChannelVector comp_ct = caffm_complement(f_color_enh, w_t);
    ChannelVector comp_tc = caffm_complement(f_thermal_enh, w_c);
    ChannelVector w_ct =
        global_fusion_weight(ew_add_vec(comp_ct, comp_tc), p.conv_g);
    Tensor modal_sum =
        broadcast_combine(f_thermal_enh, f_color_enh, CombineOp::add);
    return broadcast_combine(modal_sum, w_ct, CombineOp::mul);
}

// --- full pipeline ------------------------------------------------------

FusionTrace fusion_forward_trace(const Tensor& f_color, const Tensor& f_thermal,
                                 const FusionParams& p) {
    p.validate();
    if (!f_color.same_shape(f_thermal)) {
        throw std::invalid_argument("fusion_forward: input shapes differ");
    }
    if (f_color.channels() != p.channels()) {
        throw std::invalid_argument("fusion_forward: channel count does not match parameters");
    }

    FusionTrace t;
    t.input_color = f_color;
    t.input_thermal = f_thermal;

    // CIEM cascade
    t.cat0 = concat_channels(f_color, f_thermal);
    t.z1 = conv2d(t.cat0, p.ciem.conv1, 0);
    t.z2 = conv2d(t.z1, p.ciem.conv3, p.ciem.conv3.same_padding());
    t.z3 = batchnorm_infer(t.z2, p.ciem.bn);
    t.fused = relu(t.z3);

    // channel attention
    const int C = p.channels();
    const int h = p.ciem.hidden();
    t.cam_avg_in = global_avg_pool(t.fused);
    t.cam_max_in = global_max_pool(t.fused);
    MlpResult avg = mlp_forward(t.cam_avg_in, p.ciem.cam_w1, p.ciem.cam_w2, C, h);
    MlpResult mx = mlp_forward(t.cam_max_in, p.ciem.cam_w1, p.ciem.cam_w2, C, h);
    t.cam_avg_pre = avg.pre;
    t.cam_avg_hid = avg.hid;
    t.cam_max_pre = mx.pre;
    t.cam_max_hid = mx.hid;
    t.cam_sum = ew_add_vec(avg.out, mx.out);
    t.w_ca = sigmoid(t.cam_sum);

    // spatial attention on the channel-weighted fused map
    t.fused_weighted = broadcast_combine(t.fused, t.w_ca, CombineOp::mul);
    t.pam_avg = channel_pool(t.fused_weighted, PoolKind::avg);
    t.pam_max = channel_pool(t.fused_weighted, PoolKind::max);
    t.pam_cat = stack_maps(t.pam_avg, t.pam_max);
    t.pam_pre = conv2d(t.pam_cat, p.ciem.pam_conv, p.ciem.pam_conv.same_padding());
    t.w_pa = sigmoid(as_spatial_map(t.pam_pre));

    // modality enhancement
    t.color_cw = broadcast_combine(f_color, t.w_ca, CombineOp::mul);
    t.thermal_cw = broadcast_combine(f_thermal, t.w_ca, CombineOp::mul);
    t.color_enh = broadcast_combine(t.color_cw, t.w_pa, CombineOp::mul);
    t.thermal_enh = broadcast_combine(t.thermal_cw, t.w_pa, CombineOp::mul);

    // CAFFM
    t.v_color = global_avg_pool(t.color_enh);
    t.v_thermal = global_avg_pool(t.thermal_enh);
    AttResult att_t = att_forward(t.v_thermal, p.caffm.conv_t);
    t.att_t_pre = att_t.pre;
    t.att_t_relu = att_t.act;
    t.w_t = att_t.weight;
    AttResult att_c = att_forward(t.v_color, p.caffm.conv_c);
    t.att_c_pre = att_c.pre;
    t.att_c_relu = att_c.act;
    t.w_c = att_c.weight;
    t.comp_ct = ew_mul_vec(t.w_t, t.v_color);
    t.comp_tc = ew_mul_vec(t.w_c, t.v_thermal);
    t.global_sum = ew_add_vec(t.comp_ct, t.comp_tc);
    AttResult att_g = att_forward(t.global_sum, p.caffm.conv_g);
    t.g_pre = att_g.pre;
    t.g_relu = att_g.act;
    t.w_ct = att_g.weight;
    t.modal_sum = broadcast_combine(t.thermal_enh, t.color_enh, CombineOp::add);
    t.output = broadcast_combine(t.modal_sum, t.w_ct, CombineOp::mul);
    return t;
}

Tensor fusion_forward(const Tensor& f_color, const Tensor& f_thermal,
                      const FusionParams& p) {
    EnhancedPair enhanced = ciem_enhance(f_color, f_thermal, p.ciem);
    return caffm_fuse(enhanced.color, enhanced.thermal, p.caffm);
}

FusionGrads fusion_backward(const Tensor& f_color, const Tensor& f_thermal,
                            const FusionParams& p, const Tensor& grad_out) {
    return fusion_backward(fusion_forward_trace(f_color, f_thermal, p), p,
                           grad_out);
}

FusionGrads fusion_backward(const FusionTrace& t, const FusionParams& p,
                            const Tensor& grad_out) {
    if (!grad_out.same_shape(t.output)) {
        throw std::invalid_argument("fusion_backward: grad_out shape mismatch");
    }
    const int C = p.channels();
    const int h = p.ciem.hidden();

    FusionGrads g{
        Tensor(t.input_color.width(), t.input_color.height(), C),
        Tensor(t.input_color.width(), t.input_color.height(), C),
        CiemGrads{ConvKernel(1, 2 * C, C), ConvKernel(3, C, C),
                  std::vector<double>(static_cast<std::size_t>(C), 0.0),
                  std::vector<double>(static_cast<std::size_t>(C), 0.0),
                  std::vector<double>(p.ciem.cam_w1.size(), 0.0),
                  std::vector<double>(p.ciem.cam_w2.size(), 0.0),
                  ConvKernel(7, 2, 1)},
        CaffmGrads{ConvKernel(1, C, C), ConvKernel(1, C, C),
                   ConvKernel(1, C, C)}};

    // output = modal_sum * w_ct
    Tensor d_modal_sum = broadcast_combine(grad_out, t.w_ct, CombineOp::mul);
    ChannelVector d_w_ct = reduce_mul_to_channels(grad_out, t.modal_sum);
    Tensor d_color_enh = d_modal_sum;
    Tensor d_thermal_enh = d_modal_sum;

    // w_ct = sigmoid(relu(conv_g(global_sum)))
    AttResult att_g{t.g_pre, t.g_relu, t.w_ct};
    ChannelVector d_global_sum = att_backward(t.global_sum, p.caffm.conv_g,
                                              att_g, d_w_ct, g.caffm.conv_g);

    // global_sum = comp_ct + comp_tc; comp_ct = w_t * v_color; comp_tc = w_c * v_thermal
    ChannelVector d_w_t = ew_mul_vec(d_global_sum, t.v_color);
    ChannelVector d_v_color = ew_mul_vec(d_global_sum, t.w_t);
    ChannelVector d_w_c = ew_mul_vec(d_global_sum, t.v_thermal);
    ChannelVector d_v_thermal = ew_mul_vec(d_global_sum, t.w_c);

    // w_t from v_thermal, w_c from v_color
    AttResult att_t{t.att_t_pre, t.att_t_relu, t.w_t};
    add_into(d_v_thermal, att_backward(t.v_thermal, p.caffm.conv_t, att_t,
                                       d_w_t, g.caffm.conv_t));
    AttResult att_c{t.att_c_pre, t.att_c_relu, t.w_c};
    add_into(d_v_color, att_backward(t.v_color, p.caffm.conv_c, att_c, d_w_c,
                                     g.caffm.conv_c));

    // v_* = global_avg_pool(*_enh)
    add_into(d_color_enh, global_avg_pool_backward(t.color_enh, d_v_color));
    add_into(d_thermal_enh, global_avg_pool_backward(t.thermal_enh, d_v_thermal));

    // *_enh = *_cw * w_pa
    Tensor d_color_cw = broadcast_combine(d_color_enh, t.w_pa, CombineOp::mul);
    Tensor d_thermal_cw = broadcast_combine(d_thermal_enh, t.w_pa, CombineOp::mul);
    SpatialMap d_w_pa = reduce_mul_to_positions(d_color_enh, t.color_cw);
    add_into(d_w_pa, reduce_mul_to_positions(d_thermal_enh, t.thermal_cw));

    // *_cw = input_* * w_ca
    g.f_color = broadcast_combine(d_color_cw, t.w_ca, CombineOp::mul);
    g.f_thermal = broadcast_combine(d_thermal_cw, t.w_ca, CombineOp::mul);
    ChannelVector d_w_ca = reduce_mul_to_channels(d_color_cw, t.input_color);
    add_into(d_w_ca, reduce_mul_to_channels(d_thermal_cw, t.input_thermal));

    // w_pa = sigmoid(pam_pre); pam_pre = conv7(pam_cat)
    SpatialMap d_pam_pre_map = sigmoid_backward_from_output(t.w_pa, d_w_pa);
    Conv2dGrads pam_grads =
        conv2d_backward(t.pam_cat, p.ciem.pam_conv, as_tensor(d_pam_pre_map),
                        p.ciem.pam_conv.same_padding());
    g.ciem.pam_conv = std::move(pam_grads.kernel);
    auto [d_pam_avg, d_pam_max] = unstack_maps(pam_grads.input);
    Tensor d_fused_weighted =
        channel_pool_backward(t.fused_weighted, PoolKind::avg, d_pam_avg);
    add_into(d_fused_weighted,
             channel_pool_backward(t.fused_weighted, PoolKind::max, d_pam_max));

    // fused_weighted = fused * w_ca
    Tensor d_fused = broadcast_combine(d_fused_weighted, t.w_ca, CombineOp::mul);
    add_into(d_w_ca, reduce_mul_to_channels(d_fused_weighted, t.fused));

    // w_ca = sigmoid(mlp(avg) + mlp(max))
    ChannelVector d_cam_sum = sigmoid_backward_from_output(t.w_ca, d_w_ca);
    MlpResult avg{t.cam_avg_pre, t.cam_avg_hid, ChannelVector(C)};
    MlpResult mx{t.cam_max_pre, t.cam_max_hid, ChannelVector(C)};
    ChannelVector d_avg_in =
        mlp_backward(t.cam_avg_in, avg, p.ciem.cam_w1, p.ciem.cam_w2, C, h,
                     d_cam_sum, g.ciem.cam_w1, g.ciem.cam_w2);
    ChannelVector d_max_in =
        mlp_backward(t.cam_max_in, mx, p.ciem.cam_w1, p.ciem.cam_w2, C, h,
                     d_cam_sum, g.ciem.cam_w1, g.ciem.cam_w2);
    add_into(d_fused, global_avg_pool_backward(t.fused, d_avg_in));
    add_into(d_fused, global_max_pool_backward(t.fused, d_max_in));

    // fused = relu(z3); z3 = bn(z2); z2 = conv3(z1); z1 = conv1(cat0)
    Tensor d_z3 = relu_backward(t.z3, d_fused);
    BatchNormGrads bn_grads = batchnorm_infer_backward(t.z2, p.ciem.bn, d_z3);
    g.ciem.bn_gamma = std::move(bn_grads.gamma);
    g.ciem.bn_beta = std::move(bn_grads.beta);
    Conv2dGrads conv3_grads = conv2d_backward(t.z1, p.ciem.conv3, bn_grads.input,
                                              p.ciem.conv3.same_padding());
    g.ciem.conv3 = std::move(conv3_grads.kernel);
    Conv2dGrads conv1_grads =
        conv2d_backward(t.cat0, p.ciem.conv1, conv3_grads.input, 0);
    g.ciem.conv1 = std::move(conv1_grads.kernel);
    auto [d_cat_color, d_cat_thermal] = split_channels(conv1_grads.input, C);
    add_into(g.f_color, d_cat_color);
    add_into(g.f_thermal, d_cat_thermal);
    return g;
}

// --- parameter enumeration ----------------------------------------------

std::vector<ParamGroupView> param_groups(FusionParams& p) {
    auto span_of = [](std::span<double> s) { return s; };
    return {
        {"ciem.conv1.weight", span_of(p.ciem.conv1.weights()).data(), p.ciem.conv1.weights().size()},
        {"ciem.conv1.bias", span_of(p.ciem.conv1.bias()).data(), p.ciem.conv1.bias().size()},
        {"ciem.conv3.weight", span_of(p.ciem.conv3.weights()).data(), p.ciem.conv3.weights().size()},
        {"ciem.conv3.bias", span_of(p.ciem.conv3.bias()).data(), p.ciem.conv3.bias().size()},
        {"ciem.bn.gamma", p.ciem.bn.gamma.data(), p.ciem.bn.gamma.size()},
        {"ciem.bn.beta", p.ciem.bn.beta.data(), p.ciem.bn.beta.size()},
        {"ciem.cam.w1", p.ciem.cam_w1.data(), p.ciem.cam_w1.size()},
        {"ciem.cam.w2", p.ciem.cam_w2.data(), p.ciem.cam_w2.size()},
        {"ciem.pam.weight", span_of(p.ciem.pam_conv.weights()).data(), p.ciem.pam_conv.weights().size()},
        {"ciem.pam.bias", span_of(p.ciem.pam_conv.bias()).data(), p.ciem.pam_conv.bias().size()},
        {"caffm.conv_t.weight", span_of(p.caffm.conv_t.weights()).data(), p.caffm.conv_t.weights().size()},
        {"caffm.conv_t.bias", span_of(p.caffm.conv_t.bias()).data(), p.caffm.conv_t.bias().size()},
        {"caffm.conv_c.weight", span_of(p.caffm.conv_c.weights()).data(), p.caffm.conv_c.weights().size()},
        {"caffm.conv_c.bias", span_of(p.caffm.conv_c.bias()).data(), p.caffm.conv_c.bias().size()},
        {"caffm.conv_g.weight", span_of(p.caffm.conv_g.weights()).data(), p.caffm.conv_g.weights().size()},
        {"caffm.conv_g.bias", span_of(p.caffm.conv_g.bias()).data(), p.caffm.conv_g.bias().size()},
    };
}

std::vector<ParamGroupView> param_groups(FusionGrads& g) {
    auto span_of = [](std::span<double> s) { return s; };
    return {
        {"ciem.conv1.weight", span_of(g.ciem.conv1.weights()).data(), g.ciem.conv1.weights().size()},
        {"ciem.conv1.bias", span_of(g.ciem.conv1.bias()).data(), g.ciem.conv1.bias().size()},
        {"ciem.conv3.weight", span_of(g.ciem.conv3.weights()).data(), g.ciem.conv3.weights().size()},
        {"ciem.conv3.bias", span_of(g.ciem.conv3.bias()).data(), g.ciem.conv3.bias().size()},
        {"ciem.bn.gamma", g.ciem.bn_gamma.data(), g.ciem.bn_gamma.size()},
        {"ciem.bn.beta", g.ciem.bn_beta.data(), g.ciem.bn_beta.size()},
        {"ciem.cam.w1", g.ciem.cam_w1.data(), g.ciem.cam_w1.size()},
        {"ciem.cam.w2", g.ciem.cam_w2.data(), g.ciem.cam_w2.size()},
        {"ciem.pam.weight", span_of(g.ciem.pam_conv.weights()).data(), g.ciem.pam_conv.weights().size()},
        {"ciem.pam.bias", span_of(g.ciem.pam_conv.bias()).data(), g.ciem.pam_conv.bias().size()},
        {"caffm.conv_t.weight", span_of(g.caffm.conv_t.weights()).data(), g.caffm.conv_t.weights().size()},
        {"caffm.conv_t.bias", span_of(g.caffm.conv_t.bias()).data(), g.caffm.conv_t.bias().size()},
        {"caffm.conv_c.weight", span_of(g.caffm.conv_c.weights()).data(), g.caffm.conv_c.weights().size()},
        {"caffm.conv_c.bias", span_of(g.caffm.conv_c.bias()).data(), g.caffm.conv_c.bias().size()},
        {"caffm.conv_g.weight", span_of(g.caffm.conv_g.weights()).data(), g.caffm.conv_g.weights().size()},
        {"caffm.conv_g.bias", span_of(g.caffm.conv_g.bias()).data(), g.caffm.conv_g.bias().size()},
    };
}

}  // namespace ctfusion
