#include "ctfusion/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ctfusion/kernels.hpp"

namespace ctfusion {
namespace {

using kernels::table;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": tensor shapes differ");
    }
}

// Stable logistic; clamped so the result stays strictly inside (0,1) even
// for saturating inputs.
double stable_sigmoid(double x) {
    double y;
    if (x >= 0.0) {
        y = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        y = e / (1.0 + e);
    }
    if (y <= 0.0) return std::numeric_limits<double>::denorm_min();
    if (y >= 1.0) return std::nextafter(1.0, 0.0);
    return y;
}

}  // namespace

// --- convolution ----------------------------------------------------------

Tensor conv2d(const Tensor& input, const ConvKernel& kernel, int padding) {
    if (kernel.in_channels() != input.channels()) {
        throw std::invalid_argument(
            "conv2d: kernel expects " + std::to_string(kernel.in_channels()) +
            " input channels, tensor has " + std::to_string(input.channels()));
    }
    if (padding != kernel.same_padding()) {
        throw std::invalid_argument(
            "conv2d: padding " + std::to_string(padding) +
            " does not preserve the spatial size; a " +
            std::to_string(kernel.size()) + "x" + std::to_string(kernel.size()) +
            " kernel needs padding " + std::to_string(kernel.same_padding()));
    }

    const int W = input.width();
    const int H = input.height();
    const int in_c = input.channels();
    const int out_c = kernel.out_channels();
    const int size = kernel.size();

    Tensor out(W, H, out_c);
    const double* in = input.data().data();
    const double* w = kernel.weights().data();
    double* o = out.data().data();
    const auto& k = table();

    std::vector<double> acc(static_cast<std::size_t>(out_c));
    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int dy = 0; dy < size; ++dy) {
                const int iy = y + dy - padding;
                if (iy < 0 || iy >= H) continue;
                for (int dx = 0; dx < size; ++dx) {
                    const int ix = x + dx - padding;
                    if (ix < 0 || ix >= W) continue;
                    const double* in_slice =
                        in + (static_cast<std::size_t>(ix) * H + iy) * in_c;
                    const double* w_slice =
                        w + (static_cast<std::size_t>(dy) * size + dx) *
                                in_c * out_c;
                    k.fma_block(in_slice, w_slice, acc.data(), in_c, out_c);
                }
            }
            double* out_slice = o + (static_cast<std::size_t>(x) * H + y) * out_c;
            k.ew_add(acc.data(), kernel.bias().data(), out_slice, out_c);
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const ConvKernel& kernel,
                            const Tensor& grad_out, int padding) {
    if (kernel.in_channels() != input.channels()) {
        throw std::invalid_argument("conv2d_backward: channel mismatch");
    }
    if (grad_out.width() != input.width() ||
        grad_out.height() != input.height() ||
        grad_out.channels() != kernel.out_channels()) {
        throw std::invalid_argument("conv2d_backward: grad_out shape mismatch");
    }
    if (padding != kernel.same_padding()) {
        throw std::invalid_argument(
            "conv2d_backward: padding does not match the kernel size");
    }

    const int W = input.width();
    const int H = input.height();
    const int in_c = input.channels();
    const int out_c = kernel.out_channels();
    const int size = kernel.size();

    Conv2dGrads grads{Tensor(W, H, in_c), ConvKernel(size, in_c, out_c)};
    const double* in = input.data().data();
    const double* go = grad_out.data().data();
    double* gi = grads.input.data().data();
    double* gw = grads.kernel.weights().data();
    const auto& k = table();

    // d bias[o] = sum over positions of grad_out(., o)
    k.sum_channels(go, grads.kernel.bias().data(), input.positions(), out_c);

    // Weight taps transposed to (dy, dx, o, i) so the input-gradient pass
    // can vectorize over contiguous input channels.
    std::vector<double> wt(kernel.weights().size());
    for (int dy = 0; dy < size; ++dy) {
        for (int dx = 0; dx < size; ++dx) {
            const std::size_t tap =
                (static_cast<std::size_t>(dy) * size + dx) * in_c * out_c;
            for (int i = 0; i < in_c; ++i) {
                for (int o = 0; o < out_c; ++o) {
                    wt[tap + static_cast<std::size_t>(o) * in_c + i] =
                        kernel.weights()[tap + static_cast<std::size_t>(i) *
                                                   out_c + o];
                }
            }
        }
    }

    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) {
            const double* go_slice =
                go + (static_cast<std::size_t>(x) * H + y) * out_c;
            for (int dy = 0; dy < size; ++dy) {
                const int iy = y + dy - padding;
                if (iy < 0 || iy >= H) continue;
                for (int dx = 0; dx < size; ++dx) {
                    const int ix = x + dx - padding;
                    if (ix < 0 || ix >= W) continue;
                    const std::size_t in_off =
                        (static_cast<std::size_t>(ix) * H + iy) * in_c;
                    const std::size_t tap =
                        (static_cast<std::size_t>(dy) * size + dx) * in_c * out_c;
                    k.outer_acc(in + in_off, go_slice, gw + tap, in_c, out_c);
                    k.fma_block(go_slice, wt.data() + tap, gi + in_off, out_c,
                                in_c);
                }
            }
        }
    }
    return grads;
}

// --- batch normalization ----------------------------------------------------

Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& params) {
    params.validate();
    if (params.channels() != input.channels()) {
        throw std::invalid_argument("batchnorm_infer: channel count mismatch");
    }

    const std::size_t c = static_cast<std::size_t>(input.channels());
    std::vector<double> neg_mean(c), scale(c);
    for (std::size_t i = 0; i < c; ++i) {
        neg_mean[i] = -params.running_mean[i];
        scale[i] = params.gamma[i] /
                   std::sqrt(params.running_var[i] + params.epsilon);
    }

    Tensor out(input.width(), input.height(), input.channels());
    const auto& k = table();
    const std::size_t n_pos = input.positions();
    k.add_channels(input.data().data(), neg_mean.data(), out.data().data(),
                   n_pos, c);
    k.mul_channels(out.data().data(), scale.data(), out.data().data(), n_pos, c);
    k.add_channels(out.data().data(), params.beta.data(), out.data().data(),
                   n_pos, c);
    return out;
}

BatchNormGrads batchnorm_infer_backward(const Tensor& input,
                                        const BatchNormParams& params,
                                        const Tensor& grad_out) {
    params.validate();
    if (params.channels() != input.channels()) {
        throw std::invalid_argument("batchnorm_infer_backward: channel mismatch");
    }
    check_same_shape(input, grad_out, "batchnorm_infer_backward");

    const std::size_t c = static_cast<std::size_t>(input.channels());
    std::vector<double> neg_mean(c), inv_std(c), scale(c);
    for (std::size_t i = 0; i < c; ++i) {
        neg_mean[i] = -params.running_mean[i];
        inv_std[i] = 1.0 / std::sqrt(params.running_var[i] + params.epsilon);
        scale[i] = params.gamma[i] * inv_std[i];
    }

    const auto& k = table();
    const std::size_t n_pos = input.positions();

    BatchNormGrads grads{Tensor(input.width(), input.height(), input.channels()),
                         std::vector<double>(c, 0.0),
                         std::vector<double>(c, 0.0)};
    // d input = g * gamma / sqrt(var + eps)
    k.mul_channels(grad_out.data().data(), scale.data(),
                   grads.input.data().data(), n_pos, c);
    // d beta[c] = sum g; d gamma[c] = sum g * (x - mean) / sqrt(var + eps)
    k.sum_channels(grad_out.data().data(), grads.beta.data(), n_pos, c);
    Tensor xhat(input.width(), input.height(), input.channels());
    k.add_channels(input.data().data(), neg_mean.data(), xhat.data().data(),
                   n_pos, c);
    k.mul_channels(xhat.data().data(), inv_std.data(), xhat.data().data(),
                   n_pos, c);
    k.ew_mul(xhat.data().data(), grad_out.data().data(), xhat.data().data(),
             xhat.size());
    k.sum_channels(xhat.data().data(), grads.gamma.data(), n_pos, c);
    return grads;
}

// --- activations --------------------------------------------------------

Tensor relu(const Tensor& x) {
    Tensor out(x.width(), x.height(), x.channels());
    table().relu(x.data().data(), out.data().data(), x.size());
    return out;
}

ChannelVector relu(const ChannelVector& x) {
    ChannelVector out(x.channels());
    table().relu(x.data().data(), out.data().data(), x.data().size());
    return out;
}

SpatialMap relu(const SpatialMap& x) {
    SpatialMap out(x.width(), x.height());
    table().relu(x.data().data(), out.data().data(), x.size());
    return out;
}

namespace {
template <typename T>
T sigmoid_impl(const T& x, T out) {
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = stable_sigmoid(src[i]);
    return out;
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
    return sigmoid_impl(x, Tensor(x.width(), x.height(), x.channels()));
}
ChannelVector sigmoid(const ChannelVector& x) {
    return sigmoid_impl(x, ChannelVector(x.channels()));
}
SpatialMap sigmoid(const SpatialMap& x) {
    return sigmoid_impl(x, SpatialMap(x.width(), x.height()));
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
    check_same_shape(x, grad_out, "relu_backward");
    Tensor out(x.width(), x.height(), x.channels());
    table().relu_grad(x.data().data(), grad_out.data().data(),
                      out.data().data(), x.size());
    return out;
}

namespace {
template <typename T>
T sigmoid_backward_impl(const T& y, const T& g, T out) {
    auto yv = y.data();
    auto gv = g.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        dst[i] = gv[i] * yv[i] * (1.0 - yv[i]);
    }
    return out;
}
}  // namespace

ChannelVector sigmoid_backward_from_output(const ChannelVector& y,
                                           const ChannelVector& grad_out) {
    if (y.channels() != grad_out.channels()) {
        throw std::invalid_argument("sigmoid_backward: length mismatch");
    }
    return sigmoid_backward_impl(y, grad_out, ChannelVector(y.channels()));
}

SpatialMap sigmoid_backward_from_output(const SpatialMap& y,
                                        const SpatialMap& grad_out) {
    if (y.width() != grad_out.width() || y.height() != grad_out.height()) {
        throw std::invalid_argument("sigmoid_backward: shape mismatch");
    }
    return sigmoid_backward_impl(y, grad_out, SpatialMap(y.width(), y.height()));
}

// --- poolings ------------------------------------------------------------

ChannelVector global_avg_pool(const Tensor& input) {
    ChannelVector out(input.channels());
    table().sum_channels(input.data().data(), out.data().data(),
                         input.positions(),
                         static_cast<std::size_t>(input.channels()));
    const double inv = 1.0 / static_cast<double>(input.positions());
    for (double& v : out.data()) v *= inv;
    return out;
}

ChannelVector global_max_pool(const Tensor& input) {
    const std::size_t c = static_cast<std::size_t>(input.channels());
    ChannelVector out(input.channels());
    const double* in = input.data().data();
    for (std::size_t k = 0; k < c; ++k) out.data()[k] = in[k];
    for (std::size_t p = 1; p < input.positions(); ++p) {
        const double* slice = in + p * c;
        for (std::size_t k = 0; k < c; ++k) {
            if (slice[k] > out.data()[k]) out.data()[k] = slice[k];
        }
    }
    return out;
}

Tensor global_avg_pool_backward(const Tensor& input,
                                const ChannelVector& grad_out) {
    if (grad_out.channels() != input.channels()) {
        throw std::invalid_argument("global_avg_pool_backward: channel mismatch");
    }
    const std::size_t c = static_cast<std::size_t>(input.channels());
    const double inv = 1.0 / static_cast<double>(input.positions());
    Tensor out(input.width(), input.height(), input.channels());
    double* o = out.data().data();
    for (std::size_t p = 0; p < input.positions(); ++p) {
        for (std::size_t k = 0; k < c; ++k) o[p * c + k] = grad_out[static_cast<int>(k)] * inv;
    }
    return out;
}

Tensor global_max_pool_backward(const Tensor& input,
                                const ChannelVector& grad_out) {
    if (grad_out.channels() != input.channels()) {
        throw std::invalid_argument("global_max_pool_backward: channel mismatch");
    }
    const std::size_t c = static_cast<std::size_t>(input.channels());
    const double* in = input.data().data();
    std::vector<std::size_t> argmax(c, 0);
    for (std::size_t p = 1; p < input.positions(); ++p) {
        const double* slice = in + p * c;
        for (std::size_t k = 0; k < c; ++k) {
            if (slice[k] > in[argmax[k] * c + k]) argmax[k] = p;
        }
    }
    Tensor out(input.width(), input.height(), input.channels());
    for (std::size_t k = 0; k < c; ++k) {
        out.data()[argmax[k] * c + k] = grad_out[static_cast<int>(k)];
    }
    return out;
}

SpatialMap channel_pool(const Tensor& input, PoolKind kind) {
    const std::size_t c = static_cast<std::size_t>(input.channels());
    SpatialMap out(input.width(), input.height());
    const double* in = input.data().data();
    double* o = out.data().data();
    if (kind == PoolKind::avg) {
        const double inv = 1.0 / static_cast<double>(c);
        for (std::size_t p = 0; p < out.size(); ++p) {
            double s = 0.0;
            for (std::size_t k = 0; k < c; ++k) s += in[p * c + k];
            o[p] = s * inv;
        }
    } else {
        for (std::size_t p = 0; p < out.size(); ++p) {
            double m = in[p * c];
            for (std::size_t k = 1; k < c; ++k) m = std::max(m, in[p * c + k]);
            o[p] = m;
        }
    }
    return out;
}

Tensor channel_pool_backward(const Tensor& input, PoolKind kind,
                             const SpatialMap& grad_out) {
    if (grad_out.width() != input.width() ||
        grad_out.height() != input.height()) {
        throw std::invalid_argument("channel_pool_backward: shape mismatch");
    }
    const std::size_t c = static_cast<std::size_t>(input.channels());
    const double* in = input.data().data();
    const double* g = grad_out.data().data();
    Tensor out(input.width(), input.height(), input.channels());
    double* o = out.data().data();
    if (kind == PoolKind::avg) {
        const double inv = 1.0 / static_cast<double>(c);
        for (std::size_t p = 0; p < grad_out.size(); ++p) {
            const double gp = g[p] * inv;
            for (std::size_t k = 0; k < c; ++k) o[p * c + k] = gp;
        }
    } else {
        for (std::size_t p = 0; p < grad_out.size(); ++p) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < c; ++k) {
                if (in[p * c + k] > in[p * c + best]) best = k;
            }
            o[p * c + best] = g[p];
        }
    }
    return out;
}

// --- shape plumbing ------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw std::invalid_argument("concat_channels: spatial shapes differ");
    }
    const std::size_t ca = static_cast<std::size_t>(a.channels());
    const std::size_t cb = static_cast<std::size_t>(b.channels());
    Tensor out(a.width(), a.height(), a.channels() + b.channels());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* o = out.data().data();
    for (std::size_t p = 0; p < a.positions(); ++p) {
        std::copy(pa + p * ca, pa + (p + 1) * ca, o + p * (ca + cb));
        std::copy(pb + p * cb, pb + (p + 1) * cb, o + p * (ca + cb) + ca);
    }
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_channels) {
    if (first_channels <= 0 || first_channels >= x.channels()) {
        throw std::invalid_argument("split_channels: invalid split point");
    }
    const std::size_t ca = static_cast<std::size_t>(first_channels);
    const std::size_t cb = static_cast<std::size_t>(x.channels()) - ca;
    Tensor a(x.width(), x.height(), static_cast<int>(ca));
    Tensor b(x.width(), x.height(), static_cast<int>(cb));
    const double* in = x.data().data();
    for (std::size_t p = 0; p < x.positions(); ++p) {
        std::copy(in + p * (ca + cb), in + p * (ca + cb) + ca,
                  a.data().data() + p * ca);
        std::copy(in + p * (ca + cb) + ca, in + (p + 1) * (ca + cb),
                  b.data().data() + p * cb);
    }
    return {std::move(a), std::move(b)};
}

Tensor stack_maps(const SpatialMap& a, const SpatialMap& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw std::invalid_argument("stack_maps: shapes differ");
    }
    Tensor out(a.width(), a.height(), 2);
    for (std::size_t p = 0; p < a.size(); ++p) {
        out.data()[p * 2] = a.data()[p];
        out.data()[p * 2 + 1] = b.data()[p];
    }
    return out;
}

std::pair<SpatialMap, SpatialMap> unstack_maps(const Tensor& x) {
    if (x.channels() != 2) {
        throw std::invalid_argument("unstack_maps: tensor must have 2 channels");
    }
    SpatialMap a(x.width(), x.height());
    SpatialMap b(x.width(), x.height());
    for (std::size_t p = 0; p < a.size(); ++p) {
        a.data()[p] = x.data()[p * 2];
        b.data()[p] = x.data()[p * 2 + 1];
    }
    return {std::move(a), std::move(b)};
}

SpatialMap as_spatial_map(const Tensor& x) {
    if (x.channels() != 1) {
        throw std::invalid_argument("as_spatial_map: tensor must have 1 channel");
    }
    return SpatialMap(x.width(), x.height(),
                      std::vector<double>(x.data().begin(), x.data().end()));
}

Tensor as_tensor(const SpatialMap& m) {
    return Tensor(m.width(), m.height(), 1,
                  std::vector<double>(m.data().begin(), m.data().end()));
}

// --- broadcast arithmetic ---------------------------------------------------

Tensor broadcast_combine(const Tensor& a, const Tensor& b, CombineOp op) {
    check_same_shape(a, b, "broadcast_combine");
    Tensor out(a.width(), a.height(), a.channels());
    const auto& k = table();
    if (op == CombineOp::mul) {
        k.ew_mul(a.data().data(), b.data().data(), out.data().data(), a.size());
    } else {
        k.ew_add(a.data().data(), b.data().data(), out.data().data(), a.size());
    }
    return out;
}

Tensor broadcast_combine(const Tensor& a, const ChannelVector& b, CombineOp op) {
    if (b.channels() != a.channels()) {
        throw std::invalid_argument("broadcast_combine: channel count mismatch");
    }
    Tensor out(a.width(), a.height(), a.channels());
    const auto& k = table();
    const std::size_t c = static_cast<std::size_t>(a.channels());
    if (op == CombineOp::mul) {
        k.mul_channels(a.data().data(), b.data().data(), out.data().data(),
                       a.positions(), c);
    } else {
        k.add_channels(a.data().data(), b.data().data(), out.data().data(),
                       a.positions(), c);
    }
    return out;
}

Tensor broadcast_combine(const Tensor& a, const SpatialMap& b, CombineOp op) {
    if (b.width() != a.width() || b.height() != a.height()) {
        throw std::invalid_argument("broadcast_combine: spatial shape mismatch");
    }
    Tensor out(a.width(), a.height(), a.channels());
    const auto& k = table();
    const std::size_t c = static_cast<std::size_t>(a.channels());
    if (op == CombineOp::mul) {
        k.mul_positions(a.data().data(), b.data().data(), out.data().data(),
                        a.positions(), c);
    } else {
        k.add_positions(a.data().data(), b.data().data(), out.data().data(),
                        a.positions(), c);
    }
    return out;
}

ChannelVector reduce_mul_to_channels(const Tensor& g, const Tensor& other) {
    check_same_shape(g, other, "reduce_mul_to_channels");
    Tensor prod = broadcast_combine(g, other, CombineOp::mul);
    ChannelVector out(g.channels());
    table().sum_channels(prod.data().data(), out.data().data(), g.positions(),
                         static_cast<std::size_t>(g.channels()));
    return out;
}

SpatialMap reduce_mul_to_positions(const Tensor& g, const Tensor& other) {
    check_same_shape(g, other, "reduce_mul_to_positions");
    const std::size_t c = static_cast<std::size_t>(g.channels());
    SpatialMap out(g.width(), g.height());
    const double* pg = g.data().data();
    const double* po = other.data().data();
    for (std::size_t p = 0; p < out.size(); ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += pg[p * c + k] * po[p * c + k];
        out.data()[p] = s;
    }
    return out;
}

}  // namespace ctfusion
