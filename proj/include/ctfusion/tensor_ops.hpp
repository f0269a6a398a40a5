#pragma once

// Forward and analytic backward passes for every primitive the fusion
// blocks compose: cross-correlation convolution (stride 1, zero "same"
// padding), inference-mode batch norm, activations, poolings, channel
// concatenation, and broadcast arithmetic.
//
// All functions are pure; inputs are never modified. Every forward op is
// deterministic and, for finite inputs, produces finite outputs.

#include <utility>
#include <vector>

#include "ctfusion/tensor.hpp"

namespace ctfusion {

enum class CombineOp { mul, add };
enum class PoolKind { avg, max };

// --- convolution ------------------------------------------------------

// output(x,y,o) = bias[o] + sum over (dy,dx,i) of
//     input(x + dx - padding, y + dy - padding, i) * weight(dy,dx,i,o)
// with zero padding outside the input. Output spatial size equals input
// spatial size (callers pass padding = kernel.same_padding()).
Tensor conv2d(const Tensor& input, const ConvKernel& kernel, int padding);

struct Conv2dGrads {
    Tensor input;        // dL/d input
    ConvKernel kernel;   // dL/d weights and dL/d bias, kernel-shaped
};

// Exact analytic gradients of conv2d for upstream gradient grad_out.
Conv2dGrads conv2d_backward(const Tensor& input, const ConvKernel& kernel,
                            const Tensor& grad_out, int padding);

// --- batch normalization ----------------------------------------------

// Per channel c: y = gamma[c] * (x - mean[c]) / sqrt(var[c] + eps) + beta[c].
Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& params);

struct BatchNormGrads {
    Tensor input;
    std::vector<double> gamma;
    std::vector<double> beta;
};

BatchNormGrads batchnorm_infer_backward(const Tensor& input,
                                        const BatchNormParams& params,
                                        const Tensor& grad_out);

// --- activations --------------------------------------------------------

Tensor relu(const Tensor& x);
ChannelVector relu(const ChannelVector& x);
SpatialMap relu(const SpatialMap& x);

Tensor sigmoid(const Tensor& x);
ChannelVector sigmoid(const ChannelVector& x);
SpatialMap sigmoid(const SpatialMap& x);

// Gradient through relu at pre-activation x (derivative at 0 taken as 0).
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

// Gradient through sigmoid given its output y: g * y * (1 - y).
ChannelVector sigmoid_backward_from_output(const ChannelVector& y,
                                           const ChannelVector& grad_out);
SpatialMap sigmoid_backward_from_output(const SpatialMap& y,
                                        const SpatialMap& grad_out);

// --- poolings ------------------------------------------------------------

// Mean over all W*H positions, per channel.
ChannelVector global_avg_pool(const Tensor& input);
// Maximum over all W*H positions, per channel (first position in memory
// order wins ties, which fixes the backward routing).
ChannelVector global_max_pool(const Tensor& input);

Tensor global_avg_pool_backward(const Tensor& input,
                                const ChannelVector& grad_out);
Tensor global_max_pool_backward(const Tensor& input,
                                const ChannelVector& grad_out);

// Mean or max across channels, per spatial position (ties: lowest channel).
SpatialMap channel_pool(const Tensor& input, PoolKind kind);
Tensor channel_pool_backward(const Tensor& input, PoolKind kind,
                             const SpatialMap& grad_out);

// --- shape plumbing ------------------------------------------------------

// Channel concatenation [a, b]: a's channels first.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Inverse split of a gradient flowing into concat_channels(a, b).
std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_channels);

// Two spatial maps stacked as a W x H x 2 tensor (a -> channel 0).
Tensor stack_maps(const SpatialMap& a, const SpatialMap& b);
std::pair<SpatialMap, SpatialMap> unstack_maps(const Tensor& x);

// Single-channel tensor viewed as a spatial map, and back.
SpatialMap as_spatial_map(const Tensor& x);
Tensor as_tensor(const SpatialMap& m);

// --- broadcast arithmetic -------------------------------------------------

// Element-wise combine; b broadcasts over W*H (ChannelVector) or over
// channels (SpatialMap).
Tensor broadcast_combine(const Tensor& a, const Tensor& b, CombineOp op);
Tensor broadcast_combine(const Tensor& a, const ChannelVector& b, CombineOp op);
Tensor broadcast_combine(const Tensor& a, const SpatialMap& b, CombineOp op);

// Gradient helpers for the broadcast multiplies: reductions of g * other
// onto the broadcast operand.
ChannelVector reduce_mul_to_channels(const Tensor& g, const Tensor& other);
SpatialMap reduce_mul_to_positions(const Tensor& g, const Tensor& other);

}  // namespace ctfusion
