#include "pomo3d/generator.hpp"

#include <torch/torch.h>

#include "pomo3d/classes.hpp"
#include "pomo3d/errors.hpp"

namespace pomo3d {

Pomo3DGeneratorImpl::Pomo3DGeneratorImpl(const Config& config) : config_(config) {
    config.validate();
    const int d_w = config.latent.d_w;
    const int plane_c = config.geometry.plane_channels;
    const int feat_c = config.render.feature_channels;
    mapper = register_module("mapper", LatentMapper(config.latent));
    geometry = register_module("geometry", GeometryGenerator(config.geometry, d_w));
    adapter = register_module("adapter", FeatureAdapter(plane_c, d_w));
    portrait_decoder = register_module("portrait_decoder", PointDecoder(plane_c, config.render.decoder_hidden, feat_c));
    accessory_decoder =
        register_module("accessory_decoder", PointDecoder(plane_c, config.render.decoder_hidden, feat_c));
    portrait_classifier = register_module(
        "portrait_classifier", SemanticClassifier(feat_c, config.render.classifier_hidden, ClassSet::Portrait));
    accessory_classifier = register_module(
        "accessory_classifier", SemanticClassifier(feat_c, config.render.classifier_hidden, ClassSet::Accessory));
    structure = register_module("structure", StructureEncoder(feat_c, config.texture.fused_channels));
    texture = register_module("texture", TextureRenderer(config.texture, config.texture.fused_channels, d_w));
}

PortraitBranch Pomo3DGeneratorImpl::render_portrait(const torch::Tensor& w_por_g, std::span<const CameraPose> poses,
                                                    std::optional<at::Generator> jitter) {
    PortraitBranch out;
    out.planes = geometry->forward(w_por_g);
    out.features = volume_render(out.planes, poses, portrait_decoder, render_settings(), jitter);
    out.semantics = portrait_classifier->forward(out.features);
    return out;
}

AccessoryBranch Pomo3DGeneratorImpl::render_accessory(const TriPlane& portrait_planes, const torch::Tensor& w_acc_g,
                                                      std::span<const CameraPose> poses,
                                                      std::optional<at::Generator> jitter) {
    AccessoryBranch out;
    out.planes = adapter->forward(portrait_planes, w_acc_g);
    out.features = volume_render(out.planes, poses, accessory_decoder, render_settings(), jitter);
    out.semantics = accessory_classifier->forward(out.features);
    return out;
}

torch::Tensor Pomo3DGeneratorImpl::semantic_condition(const SemanticMap& s_por, const SemanticMap& s_acc) {
    return torch::cat({s_por.probs, s_acc.probs}, 1);
}

SemanticMap Pomo3DGeneratorImpl::composite_accessory_semantics(std::span<const AccessoryBranch> branches,
                                                               std::span<const BinaryMask> masks,
                                                               const torch::Tensor& like) {
    auto none = torch::zeros({like.size(0), kAccessoryClasses, like.size(2), like.size(3)}, like.options());
    none.select(1, kNone).fill_(1.0);
    auto probs = none;
    auto logits = none;
    for (size_t i = 0; i < branches.size(); ++i) {
        auto sel = masks[i].m > 0.5;
        probs = torch::where(sel, branches[i].semantics.probs, probs);
        logits = torch::where(sel, branches[i].semantics.logits, logits);
    }
    return {logits, probs, ClassSet::Accessory};
}

ComposeResult Pomo3DGeneratorImpl::compose(const ComposeRequest& request) {
    ComposeResult out;
    const auto batch = request.w_por_g.size(0);
    if (static_cast<std::int64_t>(request.poses.size()) != batch) throw InvalidInput("one pose per sample expected");
    out.portrait = render_portrait(request.w_por_g, request.poses, request.jitter);

    std::vector<AccessoryLayer> layers;
    std::vector<TextureRegion> regions;
    if (request.accs) {
        std::vector<BinaryMask> raw_masks;
        for (const auto& spec : request.accessories) {
            out.accessories.push_back(render_accessory(out.portrait.planes, spec.w_acc_g, request.poses, request.jitter));
            raw_masks.push_back(derive_accessory_mask(out.accessories.back().semantics, true));
        }
        out.masks = resolve_overlaps(std::move(raw_masks));
        for (size_t i = 0; i < out.accessories.size(); ++i) {
            layers.push_back({out.accessories[i].features, out.masks[i]});
            regions.push_back({out.masks[i], request.accessories[i].w_acc_t});
        }
    } else if (request.decorative_style) {
        regions.push_back({decorative_mask(out.portrait.semantics), *request.decorative_style});
    }
    out.union_mask = mask_union(out.masks, out.portrait.features.features);
    out.accessory_semantics =
        composite_accessory_semantics(out.accessories, out.masks, out.portrait.features.features);
    out.fused = structure->fuse(out.portrait.features, layers);
    out.rgb = texture->forward(out.fused.fused, request.w_por_t, regions,
                               semantic_condition(out.portrait.semantics, out.accessory_semantics));
    return out;
}

std::vector<torch::Tensor> Pomo3DGeneratorImpl::accessory_branch_parameters() const {
    std::vector<torch::Tensor> params;
    for (const auto* m : std::initializer_list<const torch::nn::Module*>{adapter.get(), accessory_decoder.get(),
                                                                          accessory_classifier.get()}) {
        auto p = m->parameters();
        params.insert(params.end(), p.begin(), p.end());
    }
    return params;
}

std::vector<torch::Tensor> Pomo3DGeneratorImpl::texture_parameters() const {
    auto params = structure->parameters();
    auto t = texture->parameters();
    params.insert(params.end(), t.begin(), t.end());
    return params;
}

Pomo3DGenerator make_generator(const Config& config, std::uint64_t seed) {
    torch::manual_seed(seed);
    return Pomo3DGenerator(config);
}

}  // namespace pomo3d
