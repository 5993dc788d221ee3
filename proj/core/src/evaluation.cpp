#include "pomo3d/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <torch/torch.h>

#include "pomo3d/errors.hpp"
#include "pomo3d/image_io.hpp"
#include "pomo3d/rng.hpp"

namespace pomo3d {
namespace {

constexpr std::uint64_t kEvalStream = 0xE7A1;
constexpr std::int64_t kChunk = 16;

nlohmann::json metric_json(const MetricValue& m) {
    return {{"value", m.value}, {"samples", m.samples}, {"embedder", m.embedder}};
}

torch::Tensor embed_chunked(const std::function<torch::Tensor(const torch::Tensor&)>& embed, const torch::Tensor& x) {
    std::vector<torch::Tensor> parts;
    for (std::int64_t b = 0; b < x.size(0); b += kChunk) parts.push_back(embed(x.slice(0, b, std::min(x.size(0), b + kChunk))));
    return torch::cat(parts, 0);
}

/// Identity codes drawn through the fixed-pose inference mapping.
LatentBundle sample_codes(Pomo3DGenerator& g, int n, Rng& rng) {
    const auto& c = g->config();
    auto z = LatentNoise::sample(n, c.latent.d_z, rng);
    return g->mapper->inference_condition(z, CameraPose::frontal(c.render));
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
    return {{"fid", metric_json(fid)},
            {"kid", metric_json(kid)},
            {"kid_report_scale", kKidReportScale},
            {"fmd", metric_json(fmd)},
            {"miou", metric_json(miou)},
            {"acc", metric_json(acc)},
            {"fvid", metric_json(fvid)},
            {"sig_diversity", metric_json(sig_diversity)}};
}

ColorSegmenter ColorSegmenter::fit(const PacMaskGroups& groups, int resolution) {
    std::map<std::string, const PacMaskRecord*> rgb_by_source;
    for (const auto& r : groups.rgb)
        if (r.origin != RecordOrigin::Mirrored) rgb_by_source.emplace(r.source_id, &r);
    std::array<std::array<double, 3>, kPortraitClasses> sum{};
    std::array<std::int64_t, kPortraitClasses> count{};
    for (const auto& p : groups.portrait) {
        if (p.origin == RecordOrigin::Mirrored) continue;
        auto it = rgb_by_source.find(p.source_id);
        if (it == rgb_by_source.end()) continue;
        const auto img = resize_area(it->second->rgb, resolution, resolution);
        const auto labels = resize_nearest(p.labels, resolution, resolution);
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x) {
                const int cls = labels.at(y, x);
                const auto* px = img.pixel(y, x);
                for (int k = 0; k < 3; ++k) sum[cls][k] += px[k];
                ++count[cls];
            }
    }
    ColorSegmenter s;
    s.resolution_ = resolution;
    for (int cls = 0; cls < kPortraitClasses; ++cls) {
        if (count[cls] == 0) continue;
        s.classes_.push_back(cls);
        s.centroids_.push_back({sum[cls][0] / count[cls], sum[cls][1] / count[cls], sum[cls][2] / count[cls]});
    }
    if (s.classes_.empty()) throw ConfigError("no paired RGB and portrait records to fit the segmenter");
    return s;
}

LabelMap ColorSegmenter::segment(const RgbImage& image) const {
    const auto img = resize_area(image, resolution_, resolution_);
    LabelMap out(resolution_, resolution_);
    for (int y = 0; y < resolution_; ++y)
        for (int x = 0; x < resolution_; ++x) {
            const auto* px = img.pixel(y, x);
            double best = std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < classes_.size(); ++i) {
                double d = 0.0;
                for (int k = 0; k < 3; ++k) d += (px[k] - centroids_[i][k]) * (px[k] - centroids_[i][k]);
                if (d < best) {
                    best = d;
                    out.at(y, x) = static_cast<std::uint8_t>(classes_[i]);
                }
            }
        }
    return out;
}

std::vector<CameraPose> evaluation_poses(int n, const RenderConfig& render, double max_yaw) {
    std::vector<CameraPose> poses;
    for (int i = 0; i < n; ++i) {
        const double t = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
        poses.push_back(CameraPose::orbit(-max_yaw + 2.0 * max_yaw * t, 0.0, render));
    }
    return poses;
}

double fvid(Pomo3DGenerator& generator, const torch::Tensor& w_por_g, const torch::Tensor& w_por_t,
            std::span<const CameraPose> poses, const ProxyEmbedder& embedder) {
    if (poses.size() < 2) throw InvalidInput("fvid needs at least two poses");
    torch::NoGradGuard guard;
    const auto n = static_cast<std::int64_t>(poses.size());
    ComposeRequest req;
    req.w_por_g = w_por_g.expand({n, w_por_g.size(1)});
    req.w_por_t = w_por_t.expand({n, w_por_t.size(1)});
    req.poses.assign(poses.begin(), poses.end());
    req.accs = false;
    return mean_pairwise_cosine(embedder.embed(generator->compose(req).rgb));
}

double sig_diversity(Pomo3DGenerator& generator, const torch::Tensor& w_por_g, std::int64_t n_pairs, Rng& rng,
                     const SegmapDistance& distance) {
    if (n_pairs < 1) throw InvalidInput("sig_diversity needs at least one pair");
    torch::NoGradGuard guard;
    const auto& render = generator->config().render;
    const std::vector<CameraPose> pose{CameraPose::frontal(render)};
    const auto portrait = generator->render_portrait(w_por_g, pose);
    return mean_pair_distance(n_pairs, [&](std::int64_t) {
        const auto a = sample_codes(generator, 1, rng).w_acc_g;
        const auto b = sample_codes(generator, 1, rng).w_acc_g;
        const auto sa = generator->render_accessory(portrait.planes, a, pose).semantics.probs[0];
        const auto sb = generator->render_accessory(portrait.planes, b, pose).semantics.probs[0];
        return distance(sa, sb);
    });
}

MetricReport evaluate(Pomo3DGenerator& generator, const Config& config, const PacMaskGroups& dataset,
                      Discriminator* mask_embedder) {
    if (dataset.rgb.size() < 2 || dataset.accessory.size() < 2) throw ConfigError("evaluation needs at least two RGB and two accessory records");
    torch::NoGradGuard guard;
    generator->eval();
    const auto& e = config.eval;
    const int out_res = config.output_resolution();
    const int res = config.render.resolution;
    Rng rng = Rng::derive(e.seed, kEvalStream);
    MetricReport report;

    // Image quality: every sampled geometry is textured fid_textures times.
    ProxyEmbedder rgb_embedder(e.embedder_seed, 3);
    std::vector<torch::Tensor> real_rgb;
    for (const auto& r : dataset.rgb) real_rgb.push_back(rgb_to_tensor(resize_area(r.rgb, out_res, out_res)));
    const auto real_set = EmbeddingSet{embed_chunked([&](const auto& x) { return rgb_embedder.embed(x); }, torch::stack(real_rgb)), rgb_embedder.id()};
    const double accs_ratio = [&] {
        std::int64_t with = 0, total = 0;
        for (const auto& r : dataset.rgb)
            if (r.origin != RecordOrigin::Mirrored) {
                ++total;
                with += !r.source_accessories.empty();
            }
        return total ? static_cast<double>(with) / total : 0.0;
    }();
    std::vector<torch::Tensor> fake_rgb;
    for (int i = 0; i < e.fid_segmaps; ++i) {
        const auto codes = sample_codes(generator, 1, rng);
        const auto& pose_rec = dataset.rgb[rng.uniform_int(static_cast<std::int64_t>(dataset.rgb.size()))];
        const int t = e.fid_textures;
        ComposeRequest req;
        req.w_por_g = codes.w_por_g.expand({t, codes.w_por_g.size(1)});
        req.w_por_t = sample_codes(generator, t, rng).w_por_t;
        req.poses.assign(t, pose_rec.pose.camera(config.render));
        req.accs = rng.bernoulli(accs_ratio);
        req.accessories.push_back({codes.w_acc_g.expand({t, codes.w_acc_g.size(1)}), sample_codes(generator, t, rng).w_acc_t});
        fake_rgb.push_back(generator->compose(req).rgb);
    }
    const auto fake_set = EmbeddingSet{embed_chunked([&](const auto& x) { return rgb_embedder.embed(x); }, torch::cat(fake_rgb)), rgb_embedder.id()};
    report.fid = {frechet_distance(real_set, fake_set), fake_set.size(), rgb_embedder.id()};
    report.kid = {kernel_distance(real_set, fake_set), fake_set.size(), rgb_embedder.id()};

    // Accessory mask distribution.
    std::vector<torch::Tensor> real_masks;
    for (const auto& r : dataset.accessory) real_masks.push_back(one_hot(resize_nearest(r.labels, res, res), kAccessoryClasses));
    std::vector<torch::Tensor> fake_masks;
    for (int begin = 0; begin < e.fmd_samples; begin += kChunk) {
        const int n = std::min<int>(kChunk, e.fmd_samples - begin);
        auto z = LatentNoise::sample(n, config.latent.d_z, rng);
        std::vector<CameraPose> poses;
        for (int i = 0; i < n; ++i)
            poses.push_back(dataset.accessory[rng.uniform_int(static_cast<std::int64_t>(dataset.accessory.size()))].pose.camera(config.render));
        const auto codes = generator->mapper->inference_condition(z, CameraPose::frontal(config.render));
        const auto por = generator->render_portrait(codes.w_por_g, poses);
        fake_masks.push_back(generator->render_accessory(por.planes, codes.w_acc_g, poses).semantics.probs);
    }
    ProxyEmbedder mask_proxy(e.embedder_seed, kAccessoryClasses);
    std::function<torch::Tensor(const torch::Tensor&)> mask_embed = [&](const torch::Tensor& x) { return mask_proxy.embed(x); };
    std::string mask_id = mask_proxy.id();
    if (mask_embedder) {
        mask_embed = [&](const torch::Tensor& x) { return (*mask_embedder)->early_features(x); };
        mask_id = "d_accessory.early";
    }
    const EmbeddingSet real_m{embed_chunked(mask_embed, torch::stack(real_masks)), mask_id};
    const EmbeddingSet fake_m{embed_chunked(mask_embed, torch::cat(fake_masks)), mask_id};
    report.fmd = {frechet_distance(real_m, fake_m), fake_m.size(), mask_id};

    // RGB-segmap alignment through the colour segmenter.
    const auto segmenter = ColorSegmenter::fit(dataset, res);
    double miou = 0.0, acc = 0.0;
    for (int i = 0; i < e.alignment_pairs; ++i) {
        const auto codes = sample_codes(generator, 1, rng);
        ComposeRequest req;
        req.w_por_g = codes.w_por_g;
        req.w_por_t = codes.w_por_t;
        req.poses = {dataset.rgb[rng.uniform_int(static_cast<std::int64_t>(dataset.rgb.size()))].pose.camera(config.render)};
        req.accs = false;
        const auto out = generator->compose(req);
        const auto predicted = segmenter.segment(tensor_to_rgb(out.rgb[0]));
        const auto a = alignment(predicted, tensor_to_labels(out.portrait.semantics.labels()[0]), kPortraitClasses);
        miou += a.miou;
        acc += a.acc;
    }
    const std::int64_t pairs = std::max(1, e.alignment_pairs);
    report.miou = {miou / pairs, e.alignment_pairs, "color-segmenter"};
    report.acc = {acc / pairs, e.alignment_pairs, "color-segmenter"};

    // View consistency over a yaw arc.
    const auto poses = evaluation_poses(e.fvid_poses, config.render);
    double fv = 0.0;
    for (int i = 0; i < e.fvid_identities; ++i) {
        const auto codes = sample_codes(generator, 1, rng);
        fv += fvid(generator, codes.w_por_g, codes.w_por_t, poses, rgb_embedder);
    }
    report.fvid = {fv / std::max(1, e.fvid_identities), static_cast<std::int64_t>(e.fvid_identities) * e.fvid_poses, rgb_embedder.id()};

    // Accessory diversity for one identity.
    const auto identity = sample_codes(generator, 1, rng);
    report.sig_diversity = {sig_diversity(generator, identity.w_por_g, e.sig_pairs, rng), e.sig_pairs, "patch-feature"};
    return report;
}

}  // namespace pomo3d
