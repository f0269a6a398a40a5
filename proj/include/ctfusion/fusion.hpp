#pragma once

// Color/thermal feature fusion blocks.
//
// CIEM fuses the two modal feature maps through a cascaded block
// (concat -> 1x1 conv -> 3x3 conv -> BN -> ReLU), derives a channel
// attention weight and a spatial attention weight from the fused map,
// and re-weights each modality with both.
//
// CAFFM pools each enhanced modality to a channel vector, learns one
// attention vector per modality, crosses them (color features weighted
// by the thermal attention and vice versa), and fuses the two modalities
// under a global attention vector built from the crossed features.
//
// Every stage has an exact analytic backward, verified against central
// finite differences by the gradcheck machinery.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctfusion/tensor.hpp"
#include "ctfusion/tensor_ops.hpp"

namespace ctfusion {

// Parameters of the cascaded enhancement block for C-channel inputs.
// The channel-attention MLP is shared between the average- and max-pooled
// descriptors: C -> C/r (ReLU) -> C, no biases.
struct CiemParams {
    ConvKernel conv1;            // 1x1, 2C -> C
    ConvKernel conv3;            // 3x3, C -> C
    BatchNormParams bn;          // C
    std::vector<double> cam_w1;  // C x (C/r), row-major
    std::vector<double> cam_w2;  // (C/r) x C, row-major
    ConvKernel pam_conv;         // 7x7, 2 -> 1
    int reduction_ratio = 4;

    int channels() const { return conv3.out_channels(); }
    int hidden() const { return channels() / reduction_ratio; }
    void validate() const;
};

// The three 1x1 convolutions of the cross-modal block, each C -> C,
// applied to 1x1xC vectors. Independent weights per branch.
struct CaffmParams {
    ConvKernel conv_t;  // thermal attention branch
    ConvKernel conv_c;  // color attention branch
    ConvKernel conv_g;  // global fusion weight branch

    int channels() const { return conv_g.out_channels(); }
    void validate() const;
};

struct FusionParams {
    CiemParams ciem;
    CaffmParams caffm;

    int channels() const { return ciem.channels(); }
    void validate() const;
};

// Deterministic parameter bundle: uniform values scaled by 1/sqrt(fan-in),
// BN statistics perturbed away from the identity so every branch is
// exercised. Same seed, same bundle.
FusionParams seeded_fusion_params(int channels, int reduction_ratio,
                                  std::uint64_t seed);
Tensor seeded_tensor(int width, int height, int channels, std::uint64_t seed,
                     double lo = -1.0, double hi = 1.0);

// --- baseline fusion --------------------------------------------------

enum class BaselineFusion { cascade, add, mul };

// Plain fusion of two same-shape maps. Cascade mode concatenates along
// channels and projects back to C with the supplied 1x1 kernel (2C -> C).
Tensor baseline_fuse(const Tensor& f_color, const Tensor& f_thermal,
                     BaselineFusion mode,
                     const ConvKernel* cascade_proj = nullptr);

// --- CIEM ------------------------------------------------------------

// ReLU(BN(Conv3(Conv1[concat(f_color, f_thermal)])))
Tensor ciem_fuse(const Tensor& f_color, const Tensor& f_thermal,
                 const CiemParams& p);

// sigmoid(MLP(global_avg_pool(f)) + MLP(global_max_pool(f)))
ChannelVector channel_attention(const Tensor& f, const CiemParams& p);

// sigmoid(Conv7(stack(channel avg pool, channel max pool)))
SpatialMap spatial_attention(const Tensor& f, const CiemParams& p);

struct EnhancedPair {
    Tensor color;
    Tensor thermal;
};

// Full CIEM: both modalities multiplied by the shared channel weight and
// by the spatial weight computed from the channel-weighted fused map.
EnhancedPair ciem_enhance(const Tensor& f_color, const Tensor& f_thermal,
                          const CiemParams& p);

// --- CAFFM ------------------------------------------------------------

// sigmoid(relu(Conv1(global_avg_pool(f))))
ChannelVector caffm_cross_weights(const Tensor& f_enhanced,
                                  const ConvKernel& conv);

// w_other * global_avg_pool(f_local), element-wise over channels.
ChannelVector caffm_complement(const Tensor& f_local,
                               const ChannelVector& w_other);

// sigmoid(relu(Conv1(v))) on a channel vector; the global fusion weight.
ChannelVector global_fusion_weight(const ChannelVector& v,
                                   const ConvKernel& conv);

// Full CAFFM: crossed complements, global weight, weighted sum of the
// two enhanced modalities.
Tensor caffm_fuse(const Tensor& f_color_enh, const Tensor& f_thermal_enh,
                  const CaffmParams& p);

// --- full pipeline -----------------------------------------------------

// Every intermediate of one forward pass; feeds the demo output and the
// analytic backward.
struct FusionTrace {
    Tensor input_color;
    Tensor input_thermal;
    // CIEM
    Tensor cat0;            // [f_color, f_thermal], 2C
    Tensor z1;              // conv1(cat0)
    Tensor z2;              // conv3(z1)
    Tensor z3;              // bn(z2)
    Tensor fused;           // relu(z3) = F_ct
    ChannelVector cam_avg_in, cam_max_in;      // pooled descriptors
    std::vector<double> cam_avg_pre, cam_max_pre;  // MLP hidden pre-activations
    std::vector<double> cam_avg_hid, cam_max_hid;  // MLP hidden activations
    ChannelVector cam_sum;  // MLP(avg) + MLP(max), pre-sigmoid
    ChannelVector w_ca;     // channel attention
    Tensor fused_weighted;  // F_ct * w_ca
    SpatialMap pam_avg, pam_max;
    Tensor pam_cat;         // stacked pooled maps, 2 channels
    Tensor pam_pre;         // conv7 output, 1 channel
    SpatialMap w_pa;        // spatial attention
    Tensor color_cw, thermal_cw;    // f * w_ca
    Tensor color_enh, thermal_enh;  // (f * w_ca) * w_pa
    // CAFFM
    ChannelVector v_color, v_thermal;       // pooled enhanced modalities
    ChannelVector att_t_pre, att_t_relu, w_t;
    ChannelVector att_c_pre, att_c_relu, w_c;
    ChannelVector comp_ct;  // w_t * v_color
    ChannelVector comp_tc;  // w_c * v_thermal
    ChannelVector global_sum;   // comp_ct + comp_tc
    ChannelVector g_pre, g_relu, w_ct;
    Tensor modal_sum;       // thermal_enh + color_enh
    Tensor output;          // modal_sum * w_ct
};

FusionTrace fusion_forward_trace(const Tensor& f_color, const Tensor& f_thermal,
                                 const FusionParams& p);

// CAFFM applied to the CIEM-enhanced modalities.
Tensor fusion_forward(const Tensor& f_color, const Tensor& f_thermal,
                      const FusionParams& p);

struct CiemGrads {
    ConvKernel conv1;
    ConvKernel conv3;
    std::vector<double> bn_gamma;
    std::vector<double> bn_beta;
    std::vector<double> cam_w1;
    std::vector<double> cam_w2;
    ConvKernel pam_conv;
};

struct CaffmGrads {
    ConvKernel conv_t;
    ConvKernel conv_c;
    ConvKernel conv_g;
};

struct FusionGrads {
    Tensor f_color;
    Tensor f_thermal;
    CiemGrads ciem;
    CaffmGrads caffm;
};

// Exact gradients of fusion_forward with respect to both inputs and all
// learnable parameters (BN running statistics are fixed and excluded).
FusionGrads fusion_backward(const Tensor& f_color, const Tensor& f_thermal,
                            const FusionParams& p, const Tensor& grad_out);
FusionGrads fusion_backward(const FusionTrace& trace, const FusionParams& p,
                            const Tensor& grad_out);

// --- parameter enumeration ---------------------------------------------

// Named view over every learnable array, in a fixed order shared between
// FusionParams and FusionGrads. Powers gradcheck and the parameter file.
struct ParamGroupView {
    std::string name;
    double* data;
    std::size_t size;
};

std::vector<ParamGroupView> param_groups(FusionParams& p);
std::vector<ParamGroupView> param_groups(FusionGrads& g);

}  // namespace ctfusion
