#include "pomo3d/layers.hpp"

#include <cmath>

#include <torch/torch.h>

namespace pomo3d::nn {

EqualLinearImpl::EqualLinearImpl(int in_features, int out_features, double bias_init, double lr_mul)
    : in_(in_features), out_(out_features), weight_gain_(lr_mul / std::sqrt(static_cast<double>(in_features))),
      lr_mul_(lr_mul) {
    weight_ = register_parameter("weight", torch::randn({out_features, in_features}) / lr_mul);
    bias_ = register_parameter("bias", torch::full({out_features}, bias_init / lr_mul));
}

torch::Tensor EqualLinearImpl::forward(const torch::Tensor& x) {
    return torch::addmm(bias_ * lr_mul_, x, (weight_ * weight_gain_).t());
}

EqualConv2dImpl::EqualConv2dImpl(int in_channels, int out_channels, int kernel, int stride, bool bias)
    : stride_(stride), padding_(kernel / 2),
      weight_gain_(1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel))) {
    weight_ = register_parameter("weight", torch::randn({out_channels, in_channels, kernel, kernel}));
    if (bias) bias_ = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor EqualConv2dImpl::forward(const torch::Tensor& x) {
    return torch::conv2d(x, weight_ * weight_gain_, bias_, stride_, padding_);
}

ModulatedConv2dImpl::ModulatedConv2dImpl(int in_channels, int out_channels, int kernel, int style_dim,
                                         bool demodulate)
    : in_(in_channels), out_(out_channels), kernel_(kernel), demodulate_(demodulate),
      weight_gain_(1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel))) {
    affine_ = register_module("affine", EqualLinear(style_dim, in_channels, 1.0));
    weight_ = register_parameter("weight", torch::randn({out_channels, in_channels, kernel, kernel}));
    bias_ = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor ModulatedConv2dImpl::forward(const torch::Tensor& x, const torch::Tensor& w) {
    const auto batch = x.size(0);
    const auto height = x.size(2);
    const auto width = x.size(3);
    auto styles = affine_->forward(w);  // [B, in]
    auto weight = (weight_ * weight_gain_).unsqueeze(0) * styles.view({batch, 1, in_, 1, 1});
    if (demodulate_) {
        auto dcoefs = torch::rsqrt(weight.pow(2).sum({2, 3, 4}) + 1e-8);
        weight = weight * dcoefs.view({batch, out_, 1, 1, 1});
    }
    auto out = torch::conv2d(x.reshape({1, batch * in_, height, width}),
                             weight.reshape({batch * out_, in_, kernel_, kernel_}), {}, 1, kernel_ / 2, 1, batch);
    return out.view({batch, out_, height, width}) + bias_.view({1, out_, 1, 1});
}

torch::Tensor pixel_norm(const torch::Tensor& x, double eps) {
    return x * torch::rsqrt(x.pow(2).mean(1, true) + eps);
}

torch::Tensor lrelu(const torch::Tensor& x) {
    return torch::leaky_relu(x, 0.2) * std::sqrt(2.0);
}

std::int64_t parameter_count(const torch::nn::Module& module) {
    std::int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

}  // namespace pomo3d::nn
