#include "pomo3d/latent_mapper.hpp"

#include <cmath>
#include <string>

#include <torch/torch.h>

#include "pomo3d/errors.hpp"

namespace pomo3d {
namespace {

torch::Tensor normalize_2nd_moment(const torch::Tensor& x) {
    return x * torch::rsqrt(x.pow(2).mean(1, true) + 1e-8);
}

constexpr std::array<const char*, 4> kSubspaceNames{"por_g", "acc_g", "por_t", "acc_t"};

}  // namespace

LatentNoise LatentNoise::sample(int batch, int d_z, Rng& rng) {
    LatentNoise z;
    z.por_g = rng.normal({batch, d_z});
    z.acc_g = rng.normal({batch, d_z});
    z.por_t = rng.normal({batch, d_z});
    z.acc_t = rng.normal({batch, d_z});
    return z;
}

LatentNoise LatentNoise::slice(std::int64_t begin, std::int64_t end) const {
    return {por_g.slice(0, begin, end), acc_g.slice(0, begin, end), por_t.slice(0, begin, end),
            acc_t.slice(0, begin, end)};
}

LatentMapperImpl::LatentMapperImpl(const LatentConfig& config) : config_(config) {
    const int d_w = config.d_w;
    pose_embed_ = register_module("pose_embed", nn::EqualLinear(25, d_w));
    for (size_t s = 0; s < mlps_.size(); ++s) {
        torch::nn::ModuleList layers;
        int in = config.d_z + d_w;
        for (int l = 0; l < config.mapping_layers; ++l) {
            layers->push_back(nn::EqualLinear(in, d_w, 0.0, config.mapping_lr_mul));
            in = d_w;
        }
        mlps_[s] = register_module(std::string("mlp_") + kSubspaceNames[s], layers);
    }
    identity_proj_ = register_module("identity_proj", nn::EqualLinear(d_w, d_w * config.n_identity_tokens));
    const double gain = 1.0 / std::sqrt(static_cast<double>(d_w));
    w_q_ = register_parameter("w_q", torch::randn({d_w, d_w}) * gain);
    w_k_ = register_parameter("w_k", torch::randn({d_w, d_w}) * gain);
    w_v_ = register_parameter("w_v", torch::randn({d_w, d_w}) * gain);
}

void LatentMapperImpl::check_noise(const torch::Tensor& z) const {
    if (z.dim() != 2 || z.size(1) != config_.d_z) {
        throw ConfigError("noise vector has dimension " + std::to_string(z.dim() == 2 ? z.size(1) : -1) +
                          ", model expects latent.d_z = " + std::to_string(config_.d_z));
    }
}

torch::Tensor LatentMapperImpl::map_subspace(Subspace subspace, const torch::Tensor& z, const torch::Tensor& pose_cond) {
    check_noise(z);
    auto c = normalize_2nd_moment(pose_embed_->forward(pose_cond.to(z.dtype())));
    auto x = torch::cat({normalize_2nd_moment(z), c}, 1);
    auto& layers = mlps_[static_cast<int>(subspace)];
    for (size_t l = 0; l < layers->size(); ++l) {
        x = layers[l]->as<nn::EqualLinearImpl>()->forward(x);
        if (l + 1 < layers->size()) x = nn::lrelu(x);
    }
    return x;
}

IdentityEmbedding LatentMapperImpl::identity_embedding(const torch::Tensor& w_por_g) {
    auto tokens = identity_proj_->forward(w_por_g).view({w_por_g.size(0), config_.n_identity_tokens, config_.d_w});
    return {tokens};
}

AttentionResult LatentMapperImpl::identity_cross_attention(const torch::Tensor& w_acc_star,
                                                           const IdentityEmbedding& identity) {
    const auto& tokens = identity.tokens;
    if (!tokens.defined() || tokens.dim() != 3 || tokens.size(1) == 0) {
        throw InvalidInput("identity embedding has no tokens");
    }
    auto query = torch::matmul(w_acc_star, w_q_.t());               // [B, d]
    auto keys = torch::matmul(tokens, w_k_.t());                     // [B, T, d]
    auto values = torch::matmul(tokens, w_v_.t());                   // [B, T, d_w]
    auto scores = torch::bmm(keys, query.unsqueeze(2)).squeeze(2);   // [B, T]
    auto weights = torch::softmax(scores, 1);
    auto output = torch::bmm(weights.unsqueeze(1), values).squeeze(1);
    return {output, weights};
}

torch::Tensor LatentMapperImpl::identity_correlated(const torch::Tensor& w_acc_star, const torch::Tensor& w_por_g) {
    return w_acc_star + identity_cross_attention(w_acc_star, identity_embedding(w_por_g)).output;
}

LatentBundle LatentMapperImpl::map_latents(const LatentNoise& z, const torch::Tensor& pose_cond, double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("identity probability outside [0,1]");
    for (const auto* t : {&z.por_g, &z.acc_g, &z.por_t, &z.acc_t}) check_noise(*t);
    const auto batch = z.batch();

    LatentBundle out;
    out.acc_g_source.reserve(batch);
    std::vector<std::uint8_t> pick(batch);
    for (std::int64_t b = 0; b < batch; ++b) {
        const bool correlated = rng.uniform() < p;
        pick[b] = correlated ? 1 : 0;
        out.acc_g_source.push_back(correlated ? AccessorySource::IdentityCorrelated
                                              : AccessorySource::IdentityUncorrelated);
    }

    out.w_por_g = map_subspace(Subspace::PortraitGeometry, z.por_g, pose_cond);
    out.w_por_t = map_subspace(Subspace::PortraitTexture, z.por_t, pose_cond);
    out.w_acc_t = map_subspace(Subspace::AccessoryTexture, z.acc_t, pose_cond);
    auto w_star = map_subspace(Subspace::AccessoryGeometry, z.acc_g, pose_cond);
    const bool any_correlated = std::any_of(pick.begin(), pick.end(), [](auto v) { return v != 0; });
    if (!any_correlated) {
        out.w_acc_g = w_star;
    } else {
        auto mask = torch::tensor(std::vector<std::int64_t>(pick.begin(), pick.end()))
                        .to(torch::kBool)
                        .view({batch, 1});
        out.w_acc_g = torch::where(mask, identity_correlated(w_star, out.w_por_g), w_star);
    }
    return out;
}

LatentBundle LatentMapperImpl::inference_condition(const LatentNoise& z, const CameraPose& fixed_pose) {
    std::vector<CameraPose> poses(static_cast<size_t>(z.batch()), fixed_pose);
    auto cond = conditioning_tensor(poses, z.por_g.scalar_type());
    Rng unused(0);
    return map_latents(z, cond, 0.0, unused);
}

}  // namespace pomo3d
