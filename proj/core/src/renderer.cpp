#include "pomo3d/renderer.hpp"

#include <torch/torch.h>

#include "pomo3d/errors.hpp"

namespace pomo3d {

namespace F = torch::nn::functional;

PointDecoderImpl::PointDecoderImpl(int plane_channels, int hidden, int feature_channels)
    : feature_channels_(feature_channels) {
    hidden_ = register_module("hidden", nn::EqualLinear(plane_channels, hidden));
    out_ = register_module("out", nn::EqualLinear(hidden, 1 + feature_channels));
}

PointDecoderImpl::Output PointDecoderImpl::forward(const torch::Tensor& aggregated) {
    auto h = torch::softplus(hidden_->forward(aggregated.reshape({-1, aggregated.size(-1)})));
    auto out = out_->forward(h);
    auto lead = aggregated.sizes().vec();
    lead.pop_back();
    auto feature_shape = lead;
    feature_shape.push_back(feature_channels_);
    return {out.slice(1, 1).reshape(feature_shape), torch::softplus(out.select(1, 0)).reshape(lead)};
}

torch::Tensor sample_triplane(const torch::Tensor& planes, const torch::Tensor& points) {
    const auto batch = planes.size(0);
    const auto n = points.size(1);
    auto p = points.clamp(-1.0, 1.0);
    auto x = p.select(2, 0), y = p.select(2, 1), z = p.select(2, 2);
    // grid_sample coordinates are (width, height) per plane.
    const std::array<torch::Tensor, 3> grids{torch::stack({x, y}, -1), torch::stack({x, z}, -1),
                                             torch::stack({z, y}, -1)};
    auto options = F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(true);
    torch::Tensor sum;
    for (int i = 0; i < 3; ++i) {
        auto sampled = F::grid_sample(planes.select(1, i), grids[i].view({batch, 1, n, 2}), options);  // [B,C,1,N]
        sum = i == 0 ? sampled : sum + sampled;
    }
    return sum.squeeze(2).transpose(1, 2);
}

PointQuery query_points(const TriPlane& triplane, const torch::Tensor& points, PointDecoder& decoder) {
    auto decoded = decoder->forward(sample_triplane(triplane.planes, points));
    return {decoded.features, decoded.density};
}

CompositeResult composite(const torch::Tensor& features, const torch::Tensor& density, const torch::Tensor& deltas) {
    auto optical = density * deltas;
    auto alpha = 1.0 - torch::exp(-optical);
    // T_i = prod_{j<i} (1 - alpha_j) = exp(-sum_{j<i} sigma_j delta_j)
    auto transmittance = torch::exp(-(torch::cumsum(optical, -1) - optical));
    auto weights = transmittance * alpha;
    auto out = (weights.unsqueeze(-1) * features).sum(-2);
    return {out, weights, weights.sum(-1)};
}

RaySamples stratified_depths(std::int64_t batch, std::int64_t rays, int n_samples, double near, double far,
                             std::optional<at::Generator> jitter, torch::Dtype dtype) {
    if (n_samples < 2) throw InvalidInput("volume rendering needs at least two samples per ray");
    const double bin = (far - near) / n_samples;
    auto options = torch::TensorOptions().dtype(dtype);
    auto index = torch::arange(n_samples, options).view({1, 1, n_samples});
    torch::Tensor offset;
    if (jitter) {
        offset = torch::rand({batch, rays, n_samples}, *jitter, options);
    } else {
        offset = torch::full({batch, rays, n_samples}, 0.5, options);
    }
    auto depths = near + (index + offset) * bin;
    auto gaps = depths.slice(2, 1) - depths.slice(2, 0, n_samples - 1);
    auto deltas = torch::cat({gaps, torch::full({batch, rays, 1}, bin, options)}, 2);
    return {depths, deltas};
}

RenderSettings RenderSettings::from(const RenderConfig& render) {
    return {render.resolution, render.n_samples, render.near, render.far, render.box_half_extent};
}

ProjectedFeatures volume_render(const TriPlane& triplane, std::span<const CameraPose> poses, PointDecoder& decoder,
                                const RenderSettings& settings, std::optional<at::Generator> jitter) {
    const auto batch = triplane.batch();
    if (static_cast<std::int64_t>(poses.size()) != batch) {
        throw InvalidInput("volume_render needs one pose per tri-plane");
    }
    const auto dtype = triplane.planes.scalar_type();
    const int res = settings.resolution;
    const int n_samples = settings.n_samples;
    auto rays = generate_rays(poses, res, dtype);  // validates poses
    const std::int64_t n_rays = static_cast<std::int64_t>(res) * res;
    auto samples = stratified_depths(batch, n_rays, n_samples, settings.near, settings.far, jitter, dtype);

    auto points = rays.origins.unsqueeze(2) + samples.depths.unsqueeze(3) * rays.directions.unsqueeze(2);
    points = (points / settings.box_half_extent).view({batch, n_rays * n_samples, 3});
    auto query = query_points(triplane, points, decoder);
    const auto channels = query.features.size(-1);
    auto result = composite(query.features.view({batch, n_rays, n_samples, channels}),
                            query.density.view({batch, n_rays, n_samples}), samples.deltas);

    ProjectedFeatures out;
    out.features = result.features.view({batch, res, res, channels}).permute({0, 3, 1, 2}).contiguous();
    out.alpha = result.alpha.view({batch, 1, res, res});
    out.role = triplane.role;
    return out;
}

SemanticClassifierImpl::SemanticClassifierImpl(int feature_channels, int hidden, ClassSet class_set)
    : class_set_(class_set) {
    hidden_ = register_module("hidden", torch::nn::Linear(feature_channels, hidden));
    out_ = register_module("out", torch::nn::Linear(hidden, class_count(class_set)));
}

SemanticMap SemanticClassifierImpl::forward(const torch::Tensor& features) {
    auto x = features.permute({0, 2, 3, 1});  // [B, R, R, C]
    auto logits = out_->forward(torch::leaky_relu(hidden_->forward(x), 0.2)).permute({0, 3, 1, 2}).contiguous();
    return {logits, torch::softmax(logits, 1), class_set_};
}

}  // namespace pomo3d
