#pragma once

#include <optional>
#include <span>
#include <vector>

#include <torch/nn/module.h>
#include <torch/types.h>

#include "pomo3d/camera.hpp"
#include "pomo3d/config.hpp"
#include "pomo3d/geometry.hpp"
#include "pomo3d/latent_mapper.hpp"
#include "pomo3d/renderer.hpp"
#include "pomo3d/texture.hpp"

namespace pomo3d {

struct PortraitBranch {
    TriPlane planes;
    ProjectedFeatures features;
    SemanticMap semantics;
};

struct AccessoryBranch {
    TriPlane planes;
    ProjectedFeatures features;
    SemanticMap semantics;
};

struct AccessorySpec {
    torch::Tensor w_acc_g;  // [B, d_w]
    torch::Tensor w_acc_t;  // [B, d_w]
};

struct ComposeRequest {
    torch::Tensor w_por_g;
    torch::Tensor w_por_t;
    /// Later entries win where accessory masks overlap.
    std::vector<AccessorySpec> accessories;
    std::vector<CameraPose> poses;
    bool accs = true;
    /// With accs false: texture style for the hair/cloth region, if any.
    std::optional<torch::Tensor> decorative_style;
    std::optional<at::Generator> jitter;
};

struct ComposeResult {
    PortraitBranch portrait;
    std::vector<AccessoryBranch> accessories;
    std::vector<BinaryMask> masks;  // resolved, pairwise disjoint
    BinaryMask union_mask;
    SemanticMap accessory_semantics;  // accessory probabilities composited by the masks
    FusedFeatures fused;
    torch::Tensor rgb;  // [B, 3, H, W] in [-1, 1]
};

/// The complete generator: bias-conscious mapper, dual geometry tri-planes, volume
/// renderer with per-pixel classifiers, structure encoder and texture renderer.
class Pomo3DGeneratorImpl : public torch::nn::Module {
public:
    explicit Pomo3DGeneratorImpl(const Config& config);

    PortraitBranch render_portrait(const torch::Tensor& w_por_g, std::span<const CameraPose> poses,
                                   std::optional<at::Generator> jitter = std::nullopt);
    /// The accessory branch: adapter, accessory volume rendering and accessory classifier.
    AccessoryBranch render_accessory(const TriPlane& portrait_planes, const torch::Tensor& w_acc_g,
                                     std::span<const CameraPose> poses,
                                     std::optional<at::Generator> jitter = std::nullopt);

    /// Concatenated [S_por, S_acc] probabilities for semantic-adaptive normalization.
    static torch::Tensor semantic_condition(const SemanticMap& s_por, const SemanticMap& s_acc);
    /// Accessory probabilities visible through the masks; "none" elsewhere.
    static SemanticMap composite_accessory_semantics(std::span<const AccessoryBranch> branches,
                                                     std::span<const BinaryMask> masks, const torch::Tensor& like);

    ComposeResult compose(const ComposeRequest& request);

    /// Parameters of the accessory branch (adapter, accessory decoder and classifier).
    std::vector<torch::Tensor> accessory_branch_parameters() const;
    /// Parameters that only feed the RGB output (structure encoder, texture renderer).
    std::vector<torch::Tensor> texture_parameters() const;

    const Config& config() const { return config_; }
    RenderSettings render_settings() const { return RenderSettings::from(config_.render); }

    LatentMapper mapper{nullptr};
    GeometryGenerator geometry{nullptr};
    FeatureAdapter adapter{nullptr};
    PointDecoder portrait_decoder{nullptr};
    PointDecoder accessory_decoder{nullptr};
    SemanticClassifier portrait_classifier{nullptr};
    SemanticClassifier accessory_classifier{nullptr};
    StructureEncoder structure{nullptr};
    TextureRenderer texture{nullptr};

private:
    Config config_;
};
TORCH_MODULE(Pomo3DGenerator);

/// Builds a generator whose initial weights are a function of `seed` only.
Pomo3DGenerator make_generator(const Config& config, std::uint64_t seed);

}  // namespace pomo3d
