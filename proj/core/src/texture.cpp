#include "pomo3d/texture.hpp"

#include <torch/torch.h>

#include "pomo3d/classes.hpp"
#include "pomo3d/errors.hpp"

namespace pomo3d {

namespace F = torch::nn::functional;

namespace {

torch::Tensor upsample_nearest(const torch::Tensor& x, std::int64_t resolution) {
    if (x.size(2) == resolution) return x;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<std::int64_t>{resolution, resolution})
                                 .mode(torch::kNearest));
}

}  // namespace

BinaryMask BinaryMask::zeros_like(const torch::Tensor& features) {
    return {torch::zeros({features.size(0), 1, features.size(2), features.size(3)}, features.options())};
}

BinaryMask derive_accessory_mask(const SemanticMap& s_acc, bool accs) {
    return derive_accessory_mask(s_acc, std::vector<bool>(static_cast<size_t>(s_acc.probs.size(0)), accs));
}

BinaryMask derive_accessory_mask(const SemanticMap& s_acc, const std::vector<bool>& accs) {
    if (static_cast<std::int64_t>(accs.size()) != s_acc.probs.size(0)) {
        throw InvalidInput("one Accs flag per sample expected");
    }
    auto present = (s_acc.probs.detach().argmax(1, true) != kNone).to(s_acc.probs.scalar_type());
    std::vector<float> flags(accs.begin(), accs.end());
    auto gate = torch::tensor(flags).to(present.scalar_type()).view({-1, 1, 1, 1});
    return {present * gate};
}

BinaryMask decorative_mask(const SemanticMap& s_por) {
    auto labels = s_por.probs.detach().argmax(1, true);
    return {((labels == kHair) | (labels == kCloth)).to(s_por.probs.scalar_type())};
}

std::vector<BinaryMask> resolve_overlaps(std::vector<BinaryMask> masks) {
    if (masks.size() < 2) return masks;
    auto claimed = torch::zeros_like(masks.back().m);
    for (auto it = masks.rbegin(); it != masks.rend(); ++it) {
        auto own = it->m * (1.0 - claimed);
        claimed = torch::maximum(claimed, it->m);
        it->m = own;
    }
    return masks;
}

BinaryMask mask_union(std::span<const BinaryMask> masks, const torch::Tensor& like) {
    if (masks.empty()) return BinaryMask::zeros_like(like);
    auto u = masks.front().m;
    for (size_t i = 1; i < masks.size(); ++i) u = torch::maximum(u, masks[i].m);
    return {u};
}

RegionScheme select_region_scheme(Rng& rng, bool accs, double decorative_prob) {
    if (accs) return RegionScheme::Accessory;
    return rng.bernoulli(decorative_prob) ? RegionScheme::Decorative : RegionScheme::Empty;
}

torch::Tensor combine_features(const ProjectedFeatures& f_por, std::span<const AccessoryLayer> accessories) {
    const auto& base = f_por.features;
    std::vector<BinaryMask> masks;
    for (const auto& layer : accessories) {
        if (layer.features.features.sizes() != base.sizes()) {
            throw InvalidInput("accessory features do not match portrait feature dimensions");
        }
        const auto& m = layer.mask.m;
        if (m.dim() != 4 || m.size(0) != base.size(0) || m.size(2) != base.size(2) || m.size(3) != base.size(3)) {
            throw InvalidInput("accessory mask does not match feature resolution");
        }
        masks.push_back(layer.mask);
    }
    if (accessories.size() > 1) {
        auto coverage = masks.front().m.clone();
        for (size_t i = 1; i < masks.size(); ++i) coverage = coverage + masks[i].m;
        if (coverage.max().item<double>() > 1.0) throw InvalidInput("accessory masks overlap; resolve overlaps first");
    }
    // Masks are binary and disjoint, so selecting is the masked linear combination
    // (1 - m_U) * f_por + sum_n m_n * f_acc_n evaluated without rounding.
    auto combined = base;
    for (const auto& layer : accessories) {
        combined = torch::where(layer.mask.m > 0.5, layer.features.features, combined);
    }
    return combined;
}

StructureEncoderImpl::StructureEncoderImpl(int feature_channels, int fused_channels) {
    project_ = register_module("project", nn::EqualConv2d(feature_channels, fused_channels, 1));
    for (int i = 0; i < 4; ++i) convs_->push_back(nn::EqualConv2d(fused_channels, fused_channels, 3));
    register_module("convs", convs_);
}

torch::Tensor StructureEncoderImpl::forward(const torch::Tensor& combined) {
    auto x = project_->forward(combined);
    for (int block = 0; block < 2; ++block) {
        auto h = convs_[2 * block]->as<nn::EqualConv2dImpl>()->forward(nn::lrelu(x));
        h = convs_[2 * block + 1]->as<nn::EqualConv2dImpl>()->forward(nn::lrelu(h));
        x = x + h;
    }
    return x;
}

FusedFeatures StructureEncoderImpl::fuse(const ProjectedFeatures& f_por, std::span<const AccessoryLayer> accessories) {
    auto combined = combine_features(f_por, accessories);
    return {combined, forward(combined)};
}

TextureRendererImpl::TextureRendererImpl(const TextureConfig& texture, int fused_channels, int style_dim)
    : config_(texture) {
    const int seg_channels = kPortraitClasses + kAccessoryClasses;
    for (int b = 0; b < texture.n_blocks; ++b) {
        const int in = b == 0 ? fused_channels : texture.base_channels;
        convs_->push_back(nn::ModulatedConv2d(in, texture.base_channels, 3, style_dim));
        convs_->push_back(nn::ModulatedConv2d(texture.base_channels, texture.base_channels, 3, style_dim));
        spade_shared_->push_back(nn::EqualConv2d(seg_channels, texture.spade_hidden, 3));
        spade_gamma_->push_back(nn::EqualConv2d(texture.spade_hidden, texture.base_channels, 3));
        spade_beta_->push_back(nn::EqualConv2d(texture.spade_hidden, texture.base_channels, 3));
    }
    register_module("convs", convs_);
    register_module("spade_shared", spade_shared_);
    register_module("spade_gamma", spade_gamma_);
    register_module("spade_beta", spade_beta_);
    to_rgb_ = register_module("to_rgb", nn::ModulatedConv2d(texture.base_channels, 3, 1, style_dim, false));
}

torch::Tensor TextureRendererImpl::blend(const std::vector<torch::Tensor>& per_style,
                                         std::span<const TextureRegion> regions, std::int64_t resolution) const {
    // m * R_acc(f) + (1 - m) * R_por(f) for binary, disjoint masks.
    auto out = per_style.front();
    for (size_t i = 0; i < regions.size(); ++i) {
        out = torch::where(upsample_nearest(regions[i].mask.m, resolution) > 0.5, per_style[i + 1], out);
    }
    return out;
}

torch::Tensor TextureRendererImpl::block(int index, const torch::Tensor& x, const torch::Tensor& w_por_t,
                                         std::span<const TextureRegion> regions, const torch::Tensor& semantics) {
    const auto resolution = x.size(2) * 2;
    auto up = upsample_nearest(x, resolution);
    auto* conv1 = convs_[2 * index]->as<nn::ModulatedConv2dImpl>();
    auto* conv2 = convs_[2 * index + 1]->as<nn::ModulatedConv2dImpl>();

    auto run = [&](const torch::Tensor& style) {
        auto h = nn::lrelu(conv1->forward(up, style));
        return nn::lrelu(conv2->forward(h, style));
    };
    std::vector<torch::Tensor> per_style;
    per_style.reserve(regions.size() + 1);
    per_style.push_back(run(w_por_t));
    for (const auto& region : regions) per_style.push_back(run(region.style));
    auto blended = blend(per_style, regions, resolution);

    auto seg = upsample_nearest(semantics, resolution);
    auto shared = torch::relu(spade_shared_[index]->as<nn::EqualConv2dImpl>()->forward(seg));
    auto gamma = spade_gamma_[index]->as<nn::EqualConv2dImpl>()->forward(shared);
    auto beta = spade_beta_[index]->as<nn::EqualConv2dImpl>()->forward(shared);
    return nn::pixel_norm(blended) * (1.0 + gamma) + beta;
}

torch::Tensor TextureRendererImpl::forward(const torch::Tensor& f_fused, const torch::Tensor& w_por_t,
                                           std::span<const TextureRegion> regions, const torch::Tensor& semantics) {
    auto x = f_fused;
    for (int b = 0; b < config_.n_blocks; ++b) x = block(b, x, w_por_t, regions, semantics);
    std::vector<torch::Tensor> rgb;
    rgb.reserve(regions.size() + 1);
    rgb.push_back(to_rgb_->forward(x, w_por_t));
    for (const auto& region : regions) rgb.push_back(to_rgb_->forward(x, region.style));
    return torch::tanh(blend(rgb, regions, x.size(2)));
}

std::vector<TextureRegion> single_region(const BinaryMask& m_acc, const torch::Tensor& w_acc_t) {
    return {TextureRegion{m_acc, w_acc_t}};
}

}  // namespace pomo3d
