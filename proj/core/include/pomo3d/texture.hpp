#pragma once

#include <span>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/types.h>

#include "pomo3d/config.hpp"
#include "pomo3d/layers.hpp"
#include "pomo3d/renderer.hpp"
#include "pomo3d/rng.hpp"

namespace pomo3d {

/// Accessory-region indicator, entries exactly 0 or 1.
struct BinaryMask {
    torch::Tensor m;  // [B, 1, R, R], floating point

    static BinaryMask zeros_like(const torch::Tensor& features);
    std::int64_t resolution() const { return m.size(2); }
};

/// All-zeros when `accs` is false, otherwise 1 where the accessory argmax is not "none".
BinaryMask derive_accessory_mask(const SemanticMap& s_acc, bool accs);
/// Per-sample variant; accs.size() must equal the batch size.
BinaryMask derive_accessory_mask(const SemanticMap& s_acc, const std::vector<bool>& accs);

/// 1 where the portrait argmax is hair or cloth.
BinaryMask decorative_mask(const SemanticMap& s_por);

/// Painter's order: a pixel claimed by a later mask is removed from all earlier ones.
std::vector<BinaryMask> resolve_overlaps(std::vector<BinaryMask> masks);

/// Elementwise union; zeros shaped like `like` when the list is empty.
BinaryMask mask_union(std::span<const BinaryMask> masks, const torch::Tensor& like);

/// How the second texture region is chosen for one training sample.
enum class RegionScheme : std::uint8_t { Accessory, Empty, Decorative };

/// Accs true -> accessory mask; otherwise decorative with probability decorative_prob, else empty.
RegionScheme select_region_scheme(Rng& rng, bool accs, double decorative_prob);

struct AccessoryLayer {
    ProjectedFeatures features;
    BinaryMask mask;
};

/// (1 - m_U) * f_por + sum_n m_n * f_acc_n. Masks must be pairwise disjoint.
torch::Tensor combine_features(const ProjectedFeatures& f_por, std::span<const AccessoryLayer> accessories);

struct FusedFeatures {
    torch::Tensor combined;  // [B, C_f, R, R] before encoding
    torch::Tensor fused;     // [B, C_s, R, R]
};

/// Projection followed by two residual blocks.
class StructureEncoderImpl : public torch::nn::Module {
public:
    StructureEncoderImpl(int feature_channels, int fused_channels);

    torch::Tensor forward(const torch::Tensor& combined);
    FusedFeatures fuse(const ProjectedFeatures& f_por, std::span<const AccessoryLayer> accessories);

private:
    nn::EqualConv2d project_{nullptr};
    torch::nn::ModuleList convs_;
};
TORCH_MODULE(StructureEncoder);

/// One texture region: pixels where `mask` is 1 are rendered with `style`.
struct TextureRegion {
    BinaryMask mask;
    torch::Tensor style;  // [B, d_w]
};

/// Upsampling block stack. In every block the same modulated kernels are evaluated
/// once per style, blended by the region masks, then normalized with
/// semantic-adaptive modulation from the segmentation maps.
class TextureRendererImpl : public torch::nn::Module {
public:
    TextureRendererImpl(const TextureConfig& texture, int fused_channels, int style_dim);

    /// f_fused: [B, C_s, R, R]; w_por_t: [B, d_w]; regions: disjoint masks at R;
    /// semantics: concatenated portrait+accessory probabilities [B, 25, R, R].
    /// Returns RGB [B, 3, R * 2^n, R * 2^n] in [-1, 1].
    torch::Tensor forward(const torch::Tensor& f_fused, const torch::Tensor& w_por_t,
                          std::span<const TextureRegion> regions, const torch::Tensor& semantics);

    /// Runs block `index` alone on x (at half the block's output resolution).
    torch::Tensor block(int index, const torch::Tensor& x, const torch::Tensor& w_por_t,
                        std::span<const TextureRegion> regions, const torch::Tensor& semantics);

    int n_blocks() const { return config_.n_blocks; }

private:
    torch::Tensor blend(const std::vector<torch::Tensor>& per_style, std::span<const TextureRegion> regions,
                        std::int64_t resolution) const;

    TextureConfig config_;
    torch::nn::ModuleList convs_;        // two per block
    torch::nn::ModuleList spade_shared_;  // one per block
    torch::nn::ModuleList spade_gamma_;
    torch::nn::ModuleList spade_beta_;
    nn::ModulatedConv2d to_rgb_{nullptr};
};
TORCH_MODULE(TextureRenderer);

/// Single-accessory convenience: regions = {(m_acc, w_acc_t)}.
std::vector<TextureRegion> single_region(const BinaryMask& m_acc, const torch::Tensor& w_acc_t);

}  // namespace pomo3d
