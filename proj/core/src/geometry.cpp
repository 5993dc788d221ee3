#include "pomo3d/geometry.hpp"

#include <cmath>
#include <string>

#include <torch/torch.h>

#include "pomo3d/errors.hpp"

namespace pomo3d {

namespace F = torch::nn::functional;

GeometryGeneratorImpl::GeometryGeneratorImpl(const GeometryConfig& geometry, int style_dim) : config_(geometry) {
    const int channels = geometry.backbone_channels;
    constant_ = register_parameter("constant", torch::randn({1, channels, 4, 4}));
    n_levels_ = static_cast<int>(std::lround(std::log2(geometry.plane_resolution / 4.0))) + 1;
    for (int level = 0; level < n_levels_; ++level) {
        for (int d = 0; d < geometry.backbone_depth; ++d) {
            convs_->push_back(nn::ModulatedConv2d(channels, channels, 3, style_dim));
        }
    }
    register_module("convs", convs_);
    to_planes_ = register_module("to_planes",
                                 nn::ModulatedConv2d(channels, 3 * geometry.plane_channels, 1, style_dim, false));
}

TriPlane GeometryGeneratorImpl::forward(const torch::Tensor& w_por_g) {
    const auto batch = w_por_g.size(0);
    auto x = constant_.to(w_por_g.dtype()).expand({batch, -1, -1, -1});
    size_t k = 0;
    for (int level = 0; level < n_levels_; ++level) {
        if (level > 0) {
            x = F::interpolate(x, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
        }
        for (int d = 0; d < config_.backbone_depth; ++d) {
            x = nn::lrelu(convs_[k++]->as<nn::ModulatedConv2dImpl>()->forward(x, w_por_g));
        }
    }
    auto planes = to_planes_->forward(x, w_por_g);
    const auto res = planes.size(2);
    return {planes.view({batch, 3, config_.plane_channels, res, res}), VolumeRole::Portrait};
}

FeatureAdapterImpl::FeatureAdapterImpl(int plane_channels, int style_dim) {
    const char* names[3] = {"branch_xy", "branch_xz", "branch_zy"};
    for (int i = 0; i < 3; ++i) {
        torch::nn::ModuleList convs;
        for (int j = 0; j < 4; ++j) convs->push_back(nn::ModulatedConv2d(plane_channels, plane_channels, 3, style_dim));
        branches_[i] = register_module(names[i], convs);
    }
}

torch::Tensor FeatureAdapterImpl::branch(int index, const torch::Tensor& plane, const torch::Tensor& w_acc_g) {
    auto& convs = branches_.at(index);
    auto x = plane;
    for (int block = 0; block < 2; ++block) {
        auto h = nn::lrelu(convs[2 * block]->as<nn::ModulatedConv2dImpl>()->forward(x, w_acc_g));
        h = convs[2 * block + 1]->as<nn::ModulatedConv2dImpl>()->forward(h, w_acc_g);
        x = x + h;
    }
    return x;
}

TriPlane FeatureAdapterImpl::forward(const TriPlane& portrait, const torch::Tensor& w_acc_g) {
    if (portrait.role != VolumeRole::Portrait) throw InvalidInput("feature adapter expects a portrait tri-plane");
    std::vector<torch::Tensor> out;
    out.reserve(3);
    for (int i = 0; i < 3; ++i) out.push_back(branch(i, portrait.planes.select(1, i), w_acc_g));
    return {torch::stack(out, 1), VolumeRole::Accessory};
}

}  // namespace pomo3d
