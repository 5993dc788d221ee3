#pragma once

#include <optional>
#include <span>

#include <ATen/core/Generator.h>
#include <torch/nn/module.h>
#include <torch/types.h>

#include "pomo3d/camera.hpp"
#include "pomo3d/classes.hpp"
#include "pomo3d/config.hpp"
#include "pomo3d/geometry.hpp"
#include "pomo3d/layers.hpp"

namespace pomo3d {

/// Small MLP turning an aggregated tri-plane feature into (features, density).
class PointDecoderImpl : public torch::nn::Module {
public:
    PointDecoderImpl(int plane_channels, int hidden, int feature_channels);

    struct Output {
        torch::Tensor features;  // [..., C_f]
        torch::Tensor density;   // [...], softplus-activated (>= 0)
    };
    Output forward(const torch::Tensor& aggregated);

    int feature_channels() const { return feature_channels_; }

private:
    int feature_channels_;
    nn::EqualLinear hidden_{nullptr};
    nn::EqualLinear out_{nullptr};
};
TORCH_MODULE(PointDecoder);

/// Bilinear lookup of normalized points ([B, N, 3], clamped to [-1,1]) on the xy,
/// xz and zy planes, summed over planes. Returns [B, N, C] before decoding.
torch::Tensor sample_triplane(const torch::Tensor& planes, const torch::Tensor& points);

struct PointQuery {
    torch::Tensor features;  // [B, N, C_f]
    torch::Tensor density;   // [B, N]
};

PointQuery query_points(const TriPlane& triplane, const torch::Tensor& points, PointDecoder& decoder);

/// Front-to-back alpha compositing along the sample axis.
struct CompositeResult {
    torch::Tensor features;  // [..., C]
    torch::Tensor weights;   // [..., S]  T_i * alpha_i
    torch::Tensor alpha;     // [...]     sum of weights
};

/// features [..., S, C]; density, deltas [..., S].
CompositeResult composite(const torch::Tensor& features, const torch::Tensor& density, const torch::Tensor& deltas);

/// Per-ray depths: stratified bins between near and far. Without a generator the
/// bin midpoints are used, which makes rendering fully deterministic.
struct RaySamples {
    torch::Tensor depths;  // [B, R, S], strictly increasing along S
    torch::Tensor deltas;  // [B, R, S]
};

RaySamples stratified_depths(std::int64_t batch, std::int64_t rays, int n_samples, double near, double far,
                             std::optional<at::Generator> jitter, torch::Dtype dtype);

/// 2D feature image produced by volume rendering one tri-plane.
struct ProjectedFeatures {
    torch::Tensor features;  // [B, C_f, R, R]
    torch::Tensor alpha;     // [B, 1, R, R]
    VolumeRole role = VolumeRole::Portrait;

    std::int64_t resolution() const { return features.size(2); }
};

struct RenderSettings {
    int resolution = 32;
    int n_samples = 12;
    double near = 2.25;
    double far = 3.3;
    double box_half_extent = 0.5;

    static RenderSettings from(const RenderConfig& render);
};

/// Throws InvalidInput for a degenerate pose or n_samples < 2.
ProjectedFeatures volume_render(const TriPlane& triplane, std::span<const CameraPose> poses, PointDecoder& decoder,
                                const RenderSettings& settings, std::optional<at::Generator> jitter = std::nullopt);

/// Per-pixel class probabilities.
struct SemanticMap {
    torch::Tensor logits;  // [B, N, R, R]
    torch::Tensor probs;   // [B, N, R, R], softmax over N
    ClassSet class_set = ClassSet::Portrait;

    /// Argmax labels [B, R, R] (int64).
    torch::Tensor labels() const { return probs.argmax(1); }
};

/// Two-layer per-pixel MLP classifier.
class SemanticClassifierImpl : public torch::nn::Module {
public:
    SemanticClassifierImpl(int feature_channels, int hidden, ClassSet class_set);

    SemanticMap forward(const torch::Tensor& features);
    SemanticMap forward(const ProjectedFeatures& projected) { return forward(projected.features); }

    ClassSet class_set() const { return class_set_; }

private:
    ClassSet class_set_;
    torch::nn::Linear hidden_{nullptr};
    torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(SemanticClassifier);

}  // namespace pomo3d
