#pragma once

#include <torch/nn/module.h>
#include <torch/types.h>

namespace pomo3d::nn {

/// Fully connected layer with equalized learning rate: weights are stored at unit
/// scale and multiplied by lr_mul / sqrt(fan_in) on every forward.
class EqualLinearImpl : public torch::nn::Module {
public:
    EqualLinearImpl(int in_features, int out_features, double bias_init = 0.0, double lr_mul = 1.0);
    torch::Tensor forward(const torch::Tensor& x);

    int in_features() const { return in_; }
    int out_features() const { return out_; }

private:
    int in_;
    int out_;
    double weight_gain_;
    double lr_mul_;
    torch::Tensor weight_;
    torch::Tensor bias_;
};
TORCH_MODULE(EqualLinear);

/// Equalized-learning-rate 2D convolution with "same" padding.
class EqualConv2dImpl : public torch::nn::Module {
public:
    EqualConv2dImpl(int in_channels, int out_channels, int kernel, int stride = 1, bool bias = true);
    torch::Tensor forward(const torch::Tensor& x);

private:
    int stride_;
    int padding_;
    double weight_gain_;
    torch::Tensor weight_;
    torch::Tensor bias_;
};
TORCH_MODULE(EqualConv2d);

/// Style-modulated convolution (weight modulation + demodulation). The same
/// kernel can be evaluated under several styles; each call takes the style vector.
class ModulatedConv2dImpl : public torch::nn::Module {
public:
    ModulatedConv2dImpl(int in_channels, int out_channels, int kernel, int style_dim, bool demodulate = true);

    /// x: [B, in, H, W]; w: [B, style_dim]. Returns [B, out, H, W] (bias added, no activation).
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

    int kernel() const { return kernel_; }

private:
    int in_;
    int out_;
    int kernel_;
    bool demodulate_;
    double weight_gain_;
    EqualLinear affine_{nullptr};
    torch::Tensor weight_;
    torch::Tensor bias_;
};
TORCH_MODULE(ModulatedConv2d);

/// Normalizes each pixel's feature vector to unit RMS over channels.
torch::Tensor pixel_norm(const torch::Tensor& x, double eps = 1e-8);

/// Leaky ReLU with slope 0.2 scaled by sqrt(2).
torch::Tensor lrelu(const torch::Tensor& x);

/// Number of scalar parameters of a module (recursively).
std::int64_t parameter_count(const torch::nn::Module& module);

}  // namespace pomo3d::nn
