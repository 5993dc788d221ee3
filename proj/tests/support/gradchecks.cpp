#include "gradchecks.hpp"

#include <torch/torch.h>

#include "fixtures.hpp"
#include "pomo3d/geometry.hpp"
#include "pomo3d/latent_mapper.hpp"
#include "pomo3d/renderer.hpp"
#include "pomo3d/texture.hpp"

namespace gradcheck {
namespace {

using pomo3d::Rng;

torch::Tensor find_parameter(torch::nn::Module& module, const std::string& name) {
    for (auto& p : module.named_parameters())
        if (p.key() == name) return p.value();
    throw std::runtime_error("no parameter " + name);
}

void append(Target& t, const std::vector<oracle::GradProbe>& probes) {
    t.probes.insert(t.probes.end(), probes.begin(), probes.end());
}

pomo3d::Config checked_config() {
    auto c = fixture::small_config();
    c.latent.d_z = 16;
    c.latent.d_w = 12;
    return c;
}

}  // namespace

Target mapper(int per_tensor, std::uint64_t seed) {
    auto c = checked_config();
    torch::manual_seed(seed);
    pomo3d::LatentMapper m(c.latent);
    m->to(torch::kFloat64);
    Rng rng(seed);
    auto z = rng.normal({3, c.latent.d_z}, torch::kFloat64).requires_grad_(true);
    std::vector<pomo3d::CameraPose> poses(3, pomo3d::CameraPose::orbit(0.2, 0.1, c.render));
    auto cond = pomo3d::conditioning_tensor(poses, torch::kFloat64);
    auto proj = rng.normal({3, c.latent.d_w}, torch::kFloat64);
    auto loss = [&] { return (m->map_subspace(pomo3d::Subspace::AccessoryGeometry, z, cond) * proj).sum(); };
    Target t{"mapper mlp", {}};
    append(t, oracle::gradient_probes(loss, find_parameter(*m, "mlp_acc_g.0.weight"), per_tensor, rng));
    append(t, oracle::gradient_probes(loss, find_parameter(*m, "mlp_acc_g.1.weight"), per_tensor, rng));
    append(t, oracle::gradient_probes(loss, z, per_tensor, rng));
    return t;
}

Target adapter(int per_tensor, std::uint64_t seed) {
    auto c = checked_config();
    torch::manual_seed(seed);
    pomo3d::FeatureAdapter a(c.geometry.plane_channels, c.latent.d_w);
    a->to(torch::kFloat64);
    Rng rng(seed);
    pomo3d::TriPlane por{rng.normal({2, 3, c.geometry.plane_channels, 8, 8}, torch::kFloat64)};
    auto w = rng.normal({2, c.latent.d_w}, torch::kFloat64).requires_grad_(true);
    auto proj = rng.normal({2, 3, c.geometry.plane_channels, 8, 8}, torch::kFloat64);
    auto loss = [&] { return (a->forward(por, w).planes * proj).sum(); };
    Target t{"feature adapter", {}};
    for (const auto& p : a->named_parameters()) {
        if (p.key().find("weight") == std::string::npos || p.key().find("affine") != std::string::npos) continue;
        append(t, oracle::gradient_probes(loss, p.value(), per_tensor, rng));
        break;
    }
    append(t, oracle::gradient_probes(loss, w, per_tensor, rng));
    return t;
}

Target texture_block(int per_tensor, std::uint64_t seed) {
    auto c = checked_config();
    c.texture.base_channels = 8;
    c.texture.spade_hidden = 8;
    torch::manual_seed(seed);
    pomo3d::TextureRenderer tex(c.texture, c.texture.fused_channels, c.latent.d_w);
    tex->to(torch::kFloat64);
    Rng rng(seed);
    const int r = 6;
    auto x = rng.normal({1, c.texture.fused_channels, r, r}, torch::kFloat64).requires_grad_(true);
    auto w_por = rng.normal({1, c.latent.d_w}, torch::kFloat64).requires_grad_(true);
    auto w_acc = rng.normal({1, c.latent.d_w}, torch::kFloat64).requires_grad_(true);
    auto m = (rng.uniform_tensor({1, 1, r, r}) > 0.5).to(torch::kFloat64);
    auto sem = torch::softmax(rng.normal({1, pomo3d::kPortraitClasses + pomo3d::kAccessoryClasses, r, r},
                                         torch::kFloat64), 1);
    auto regions = pomo3d::single_region({m}, w_acc);
    auto proj = rng.normal({1, c.texture.base_channels, 2 * r, 2 * r}, torch::kFloat64);
    auto loss = [&] { return (tex->block(0, x, w_por, regions, sem) * proj).sum(); };
    Target t{"texture block", {}};
    append(t, oracle::gradient_probes(loss, find_parameter(*tex, "convs.0.weight"), per_tensor, rng));
    append(t, oracle::gradient_probes(loss, find_parameter(*tex, "spade_gamma.0.weight"), per_tensor, rng));
    append(t, oracle::gradient_probes(loss, x, per_tensor, rng));
    append(t, oracle::gradient_probes(loss, w_por, per_tensor, rng));
    append(t, oracle::gradient_probes(loss, w_acc, per_tensor, rng));
    return t;
}

Target render_path(int per_tensor, std::uint64_t seed) {
    auto c = checked_config();
    torch::manual_seed(seed);
    pomo3d::PointDecoder dec(c.geometry.plane_channels, 16, 6);
    dec->to(torch::kFloat64);
    Rng rng(seed);
    pomo3d::TriPlane tp{(rng.normal({1, 3, c.geometry.plane_channels, 8, 8}, torch::kFloat64) * 0.5)
                            .requires_grad_(true)};
    pomo3d::RenderSettings settings = pomo3d::RenderSettings::from(c.render);
    settings.resolution = 4;
    settings.n_samples = 6;
    std::vector<pomo3d::CameraPose> poses{pomo3d::CameraPose::orbit(0.25, -0.1, c.render)};
    auto proj = rng.normal({1, 6, 4, 4}, torch::kFloat64);
    auto proj_alpha = rng.normal({1, 1, 4, 4}, torch::kFloat64);
    auto loss = [&] {
        auto out = pomo3d::volume_render(tp, poses, dec, settings);
        return (out.features * proj).sum() + (out.alpha * proj_alpha).sum();
    };
    Target t{"tri-plane render", {}};
    append(t, oracle::gradient_probes(loss, tp.planes, per_tensor * 2, rng));
    append(t, oracle::gradient_probes(loss, find_parameter(*dec, "hidden.weight"), per_tensor, rng));
    append(t, oracle::gradient_probes(loss, find_parameter(*dec, "out.weight"), per_tensor, rng));
    return t;
}

std::vector<Target> run_all(int per_tensor, std::uint64_t seed) {
    return {mapper(per_tensor, seed), adapter(per_tensor, seed + 1), texture_block(per_tensor, seed + 2),
            render_path(per_tensor, seed + 3)};
}

}  // namespace gradcheck
