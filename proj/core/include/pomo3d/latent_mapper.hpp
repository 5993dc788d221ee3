#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/types.h>

#include "pomo3d/camera.hpp"
#include "pomo3d/config.hpp"
#include "pomo3d/layers.hpp"
#include "pomo3d/rng.hpp"

namespace pomo3d {

/// The four factorized style subspaces.
enum class Subspace : int { PortraitGeometry = 0, AccessoryGeometry = 1, PortraitTexture = 2, AccessoryTexture = 3 };

/// Which accessory-geometry space a sample's w_acc_g came from.
enum class AccessorySource : std::uint8_t { IdentityUncorrelated, IdentityCorrelated };

/// Gaussian noise, one d_z vector per subspace so that portrait, accessory and
/// texture codes can be resampled independently.
struct LatentNoise {
    torch::Tensor por_g;  // [B, d_z]
    torch::Tensor acc_g;
    torch::Tensor por_t;
    torch::Tensor acc_t;

    static LatentNoise sample(int batch, int d_z, Rng& rng);
    std::int64_t batch() const { return por_g.size(0); }
    LatentNoise slice(std::int64_t begin, std::int64_t end) const;
};

struct LatentBundle {
    torch::Tensor w_por_g;  // [B, d_w]
    torch::Tensor w_acc_g;
    torch::Tensor w_por_t;
    torch::Tensor w_acc_t;
    std::vector<AccessorySource> acc_g_source;

    std::int64_t batch() const { return w_por_g.size(0); }
};

struct IdentityEmbedding {
    torch::Tensor tokens;  // [B, T, d_w]
};

struct AttentionResult {
    torch::Tensor output;   // [B, d_w]
    torch::Tensor weights;  // [B, T], rows on the probability simplex
};

/// Maps noise plus camera conditioning into the four style codes and implements
/// the p-mixture between identity-uncorrelated and identity-correlated accessory codes.
class LatentMapperImpl : public torch::nn::Module {
public:
    explicit LatentMapperImpl(const LatentConfig& config);

    /// MLP for one subspace. z: [B, d_z]; pose_cond: [B, 25].
    torch::Tensor map_subspace(Subspace subspace, const torch::Tensor& z, const torch::Tensor& pose_cond);

    IdentityEmbedding identity_embedding(const torch::Tensor& w_por_g);

    /// softmax((W_Q a)(W_K I)^T) W_V I for query code a and identity tokens I.
    AttentionResult identity_cross_attention(const torch::Tensor& w_acc_star, const IdentityEmbedding& identity);

    /// Identity-correlated accessory code: the uncorrelated code plus its attention read-out.
    torch::Tensor identity_correlated(const torch::Tensor& w_acc_star, const torch::Tensor& w_por_g);

    /// Per sample, one uniform draw picks the identity-correlated accessory code with probability p.
    LatentBundle map_latents(const LatentNoise& z, const torch::Tensor& pose_cond, double p, Rng& rng);

    /// Inference mapping: fixed conditioning pose, accessory code always identity-uncorrelated.
    LatentBundle inference_condition(const LatentNoise& z, const CameraPose& fixed_pose);

    const LatentConfig& config() const { return config_; }
    torch::Tensor query_projection() const { return w_q_; }
    torch::Tensor key_projection() const { return w_k_; }
    torch::Tensor value_projection() const { return w_v_; }

private:
    void check_noise(const torch::Tensor& z) const;

    LatentConfig config_;
    nn::EqualLinear pose_embed_{nullptr};
    std::array<torch::nn::ModuleList, 4> mlps_;
    nn::EqualLinear identity_proj_{nullptr};
    torch::Tensor w_q_;
    torch::Tensor w_k_;
    torch::Tensor w_v_;
};
TORCH_MODULE(LatentMapper);

}  // namespace pomo3d
