#pragma once

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/types.h>

#include "pomo3d/layers.hpp"

namespace pomo3d {

/// Residual convolutional discriminator with pose-projection conditioning. The
/// three branch discriminators share this topology and differ in input channels.
class DiscriminatorImpl : public torch::nn::Module {
public:
    DiscriminatorImpl(int in_channels, int resolution, int channels, int cond_dim = 25, int cmap_dim = 32);

    /// x: [B, C_in, R, R]; cond: [B, 25]. Returns logits [B].
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

    /// Output of the input layer and first residual block, average-pooled to 2x2
    /// and flattened: [B, 4 * channels]. Used as the mask embedding for FMD.
    torch::Tensor early_features(const torch::Tensor& x);

    int in_channels() const { return in_channels_; }
    int resolution() const { return resolution_; }

private:
    torch::Tensor block_forward(size_t index, const torch::Tensor& x);

    int in_channels_;
    int resolution_;
    int channels_;
    int cmap_dim_;
    nn::EqualConv2d from_input_{nullptr};
    torch::nn::ModuleList conv_a_;
    torch::nn::ModuleList conv_b_;
    torch::nn::ModuleList skip_;
    nn::EqualConv2d epilogue_conv_{nullptr};
    nn::EqualLinear epilogue_fc_{nullptr};
    nn::EqualLinear out_{nullptr};
    nn::EqualLinear map_a_{nullptr};
    nn::EqualLinear map_b_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Appends the per-location standard deviation over groups of up to 4 samples.
torch::Tensor minibatch_stddev(const torch::Tensor& x, int group_size = 4);

}  // namespace pomo3d
