#include "pomo3d/discriminator.hpp"

#include <cmath>

#include <torch/torch.h>

#include "pomo3d/errors.hpp"

namespace pomo3d {

DiscriminatorImpl::DiscriminatorImpl(int in_channels, int resolution, int channels, int cond_dim, int cmap_dim)
    : in_channels_(in_channels), resolution_(resolution), channels_(channels), cmap_dim_(cmap_dim) {
    if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
        throw ConfigError("discriminator resolution must be a power of two >= 8");
    }
    from_input_ = register_module("from_input", nn::EqualConv2d(in_channels, channels, 1));
    conv_a_ = register_module("conv_a", torch::nn::ModuleList());
    conv_b_ = register_module("conv_b", torch::nn::ModuleList());
    skip_ = register_module("skip", torch::nn::ModuleList());
    for (int r = resolution; r > 4; r /= 2) {
        conv_a_->push_back(nn::EqualConv2d(channels, channels, 3));
        conv_b_->push_back(nn::EqualConv2d(channels, channels, 3));
        skip_->push_back(nn::EqualConv2d(channels, channels, 1, 1, false));
    }
    epilogue_conv_ = register_module("epilogue_conv", nn::EqualConv2d(channels + 1, channels, 3));
    epilogue_fc_ = register_module("epilogue_fc", nn::EqualLinear(channels * 16, channels));
    out_ = register_module("out", nn::EqualLinear(channels, cmap_dim));
    map_a_ = register_module("map_a", nn::EqualLinear(cond_dim, cmap_dim));
    map_b_ = register_module("map_b", nn::EqualLinear(cmap_dim, cmap_dim));
}

torch::Tensor DiscriminatorImpl::block_forward(size_t index, const torch::Tensor& x) {
    namespace F = torch::nn::functional;
    auto pool = [](const torch::Tensor& t) { return F::avg_pool2d(t, F::AvgPool2dFuncOptions(2)); };
    auto skip = skip_[index]->as<nn::EqualConv2d>()->forward(pool(x));
    auto h = nn::lrelu(conv_a_[index]->as<nn::EqualConv2d>()->forward(x));
    h = pool(nn::lrelu(conv_b_[index]->as<nn::EqualConv2d>()->forward(h)));
    return (h + skip) * M_SQRT1_2;
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
    if (x.dim() != 4 || x.size(1) != in_channels_ || x.size(2) != resolution_ || x.size(3) != resolution_) {
        throw InvalidInput("discriminator input has the wrong shape");
    }
    auto h = nn::lrelu(from_input_->forward(x));
    for (size_t i = 0; i < conv_a_->size(); ++i) h = block_forward(i, h);
    h = minibatch_stddev(h);
    h = nn::lrelu(epilogue_conv_->forward(h));
    h = nn::lrelu(epilogue_fc_->forward(h.flatten(1)));
    auto projected = out_->forward(h);
    auto cmap = map_b_->forward(nn::lrelu(map_a_->forward(cond.to(x.dtype()))));
    return (projected * cmap).sum(1) / std::sqrt(static_cast<double>(cmap_dim_));
}

torch::Tensor DiscriminatorImpl::early_features(const torch::Tensor& x) {
    namespace F = torch::nn::functional;
    auto h = block_forward(0, nn::lrelu(from_input_->forward(x)));
    return F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions({2, 2})).flatten(1);
}

torch::Tensor minibatch_stddev(const torch::Tensor& x, int group_size) {
    const auto b = x.size(0);
    const auto g = std::min<std::int64_t>(group_size, b);
    if (b % g != 0) throw InvalidInput("batch size must be divisible by the stddev group size");
    const auto c = x.size(1), h = x.size(2), w = x.size(3);
    auto y = x.reshape({g, b / g, c, h, w});
    y = y - y.mean(0);
    y = (y.square().mean(0) + 1e-8).sqrt();  // [b/g, c, h, w]
    y = y.mean({1, 2, 3}).reshape({b / g, 1, 1, 1});
    y = y.repeat({g, 1, h, w});
    return torch::cat({x, y}, 1);
}

}  // namespace pomo3d
