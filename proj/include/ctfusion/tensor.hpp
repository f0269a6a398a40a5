#pragma once

// Dense double-precision containers for W x H x C feature maps and the
// parameter blobs consumed by the fusion blocks.
//
// Memory layout:
//   Tensor      index(x, y, c) = (x * height + y) * channels + c
//   SpatialMap  index(x, y)    = x * height + y
//   ConvKernel  weight(dy, dx, i, o) = ((dy * size + dx) * in_channels + i)
//                                        * out_channels + o
// Channels are the fastest-varying axis, which is what the SIMD kernel
// lanes vectorize over.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfusion {

class Tensor {
public:
    Tensor() = default;

    Tensor(int width, int height, int channels)
        : width_(width), height_(height), channels_(channels),
          data_(check_dims(width, height, channels), 0.0) {}

    Tensor(int width, int height, int channels, std::vector<double> data)
        : width_(width), height_(height), channels_(channels),
          data_(std::move(data)) {
        if (data_.size() != check_dims(width, height, channels)) {
            throw std::invalid_argument(
                "Tensor: data length " + std::to_string(data_.size()) +
                " does not match " + std::to_string(width) + "x" +
                std::to_string(height) + "x" + std::to_string(channels));
        }
    }

    static Tensor full(int width, int height, int channels, double value) {
        Tensor t(width, height, channels);
        for (double& v : t.data_) v = value;
        return t;
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    std::size_t positions() const {
        return static_cast<std::size_t>(width_) * height_;
    }

    bool same_shape(const Tensor& o) const {
        return width_ == o.width_ && height_ == o.height_ &&
               channels_ == o.channels_;
    }

    double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
    double at(int x, int y, int c) const { return data_[index(x, y, c)]; }

    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(x) * height_ + y) * channels_ + c;
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

private:
    static std::size_t check_dims(int w, int h, int c) {
        if (w <= 0 || h <= 0 || c <= 0) {
            throw std::invalid_argument("Tensor: dimensions must be positive");
        }
        return static_cast<std::size_t>(w) * h * c;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

class ChannelVector {
public:
    ChannelVector() = default;

    explicit ChannelVector(int channels)
        : data_(check_positive(channels, "ChannelVector"), 0.0) {}

    ChannelVector(int channels, std::vector<double> data)
        : data_(std::move(data)) {
        if (data_.size() != check_positive(channels, "ChannelVector")) {
            throw std::invalid_argument("ChannelVector: data length mismatch");
        }
    }

    int channels() const { return static_cast<int>(data_.size()); }
    double& operator[](int c) { return data_[static_cast<std::size_t>(c)]; }
    double operator[](int c) const { return data_[static_cast<std::size_t>(c)]; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

private:
    static std::size_t check_positive(int n, const char* what) {
        if (n <= 0) {
            throw std::invalid_argument(std::string(what) +
                                        ": size must be positive");
        }
        return static_cast<std::size_t>(n);
    }

    std::vector<double> data_;
};

class SpatialMap {
public:
    SpatialMap() = default;

    SpatialMap(int width, int height)
        : width_(width), height_(height),
          data_(check_dims(width, height), 0.0) {}

    SpatialMap(int width, int height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (data_.size() != check_dims(width, height)) {
            throw std::invalid_argument("SpatialMap: data length mismatch");
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }

    double& at(int x, int y) { return data_[index(x, y)]; }
    double at(int x, int y) const { return data_[index(x, y)]; }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(x) * height_ + y;
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

private:
    static std::size_t check_dims(int w, int h) {
        if (w <= 0 || h <= 0) {
            throw std::invalid_argument("SpatialMap: dimensions must be positive");
        }
        return static_cast<std::size_t>(w) * h;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

// Square odd-sized cross-correlation kernel with per-output-channel bias.
class ConvKernel {
public:
    ConvKernel() = default;

    ConvKernel(int size, int in_channels, int out_channels)
        : size_(size), in_channels_(in_channels), out_channels_(out_channels),
          weights_(check_dims(size, in_channels, out_channels), 0.0),
          bias_(static_cast<std::size_t>(out_channels), 0.0) {}

    ConvKernel(int size, int in_channels, int out_channels,
               std::vector<double> weights, std::vector<double> bias)
        : size_(size), in_channels_(in_channels), out_channels_(out_channels),
          weights_(std::move(weights)), bias_(std::move(bias)) {
        if (weights_.size() != check_dims(size, in_channels, out_channels)) {
            throw std::invalid_argument("ConvKernel: weight count mismatch");
        }
        if (bias_.size() != static_cast<std::size_t>(out_channels)) {
            throw std::invalid_argument("ConvKernel: bias count mismatch");
        }
    }

    int size() const { return size_; }
    int in_channels() const { return in_channels_; }
    int out_channels() const { return out_channels_; }
    int same_padding() const { return (size_ - 1) / 2; }

    double& weight(int dy, int dx, int i, int o) {
        return weights_[weight_index(dy, dx, i, o)];
    }
    double weight(int dy, int dx, int i, int o) const {
        return weights_[weight_index(dy, dx, i, o)];
    }

    std::size_t weight_index(int dy, int dx, int i, int o) const {
        return ((static_cast<std::size_t>(dy) * size_ + dx) * in_channels_ + i)
                   * out_channels_ + o;
    }

    std::span<double> weights() { return weights_; }
    std::span<const double> weights() const { return weights_; }
    std::span<double> bias() { return bias_; }
    std::span<const double> bias() const { return bias_; }

private:
    static std::size_t check_dims(int size, int in_c, int out_c) {
        if (size <= 0 || size % 2 == 0) {
            throw std::invalid_argument(
                "ConvKernel: kernel size must be odd, got " +
                std::to_string(size));
        }
        if (in_c <= 0 || out_c <= 0) {
            throw std::invalid_argument("ConvKernel: channels must be positive");
        }
        return static_cast<std::size_t>(size) * size * in_c * out_c;
    }

    int size_ = 0;
    int in_channels_ = 0;
    int out_channels_ = 0;
    std::vector<double> weights_;
    std::vector<double> bias_;
};

// Inference-mode batch normalization: fixed running statistics, learnable
// per-channel affine.
struct BatchNormParams {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double epsilon = 1e-5;

    BatchNormParams() = default;

    explicit BatchNormParams(int channels, double eps = 1e-5)
        : gamma(static_cast<std::size_t>(channels), 1.0),
          beta(static_cast<std::size_t>(channels), 0.0),
          running_mean(static_cast<std::size_t>(channels), 0.0),
          running_var(static_cast<std::size_t>(channels), 1.0),
          epsilon(eps) {
        if (channels <= 0) {
            throw std::invalid_argument("BatchNormParams: channels must be positive");
        }
        validate();
    }

    int channels() const { return static_cast<int>(gamma.size()); }

    void validate() const {
        const std::size_t n = gamma.size();
        if (n == 0 || beta.size() != n || running_mean.size() != n ||
            running_var.size() != n) {
            throw std::invalid_argument("BatchNormParams: vector length mismatch");
        }
        if (epsilon <= 0.0) {
            throw std::invalid_argument("BatchNormParams: epsilon must be positive");
        }
        for (double v : running_var) {
            if (v < 0.0) {
                throw std::invalid_argument(
                    "BatchNormParams: running variance must be non-negative");
            }
        }
    }
};

}  // namespace ctfusion
