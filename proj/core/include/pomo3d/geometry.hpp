#pragma once

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/types.h>

#include "pomo3d/config.hpp"
#include "pomo3d/layers.hpp"

namespace pomo3d {

enum class VolumeRole : std::uint8_t { Portrait, Accessory };

/// Three axis-aligned feature planes (xy, xz, zy) defining one neural volume.
struct TriPlane {
    torch::Tensor planes;  // [B, 3, C, H, W]
    VolumeRole role = VolumeRole::Portrait;

    std::int64_t batch() const { return planes.size(0); }
    std::int64_t channels() const { return planes.size(2); }
    std::int64_t resolution() const { return planes.size(3); }
};

/// Style-modulated convolutional synthesis network emitting the portrait tri-plane.
class GeometryGeneratorImpl : public torch::nn::Module {
public:
    GeometryGeneratorImpl(const GeometryConfig& geometry, int style_dim);

    /// w_por_g: [B, d_w].
    TriPlane forward(const torch::Tensor& w_por_g);

private:
    GeometryConfig config_;
    torch::Tensor constant_;
    torch::nn::ModuleList convs_;
    nn::ModulatedConv2d to_planes_{nullptr};
    int n_levels_ = 0;
};
TORCH_MODULE(GeometryGenerator);

/// Three independent branches, one per plane. Each branch is two residual blocks
/// of two modulated convolutions conditioned on w_acc_g, mapping C x H x W onto itself.
class FeatureAdapterImpl : public torch::nn::Module {
public:
    FeatureAdapterImpl(int plane_channels, int style_dim);

    /// Throws InvalidInput unless `portrait.role` is Portrait.
    TriPlane forward(const TriPlane& portrait, const torch::Tensor& w_acc_g);

    /// Runs only branch `index` on a single plane [B, C, H, W].
    torch::Tensor branch(int index, const torch::Tensor& plane, const torch::Tensor& w_acc_g);

private:
    std::array<torch::nn::ModuleList, 3> branches_;
};
TORCH_MODULE(FeatureAdapter);

}  // namespace pomo3d
