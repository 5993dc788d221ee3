#include "pomo3d/scribble.hpp"

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "pomo3d/errors.hpp"
#include "pomo3d/training.hpp"

namespace pomo3d {

void ScribbleMap::validate() const {
    if (labels.size() != static_cast<size_t>(labels.height) * labels.width) throw InvalidInput("scribble size mismatch");
    for (auto v : labels.labels) {
        if (v >= kAccessoryClasses) throw InvalidInput("scribble label outside the accessory class set");
    }
}

torch::Tensor scribble_tensor(std::span<const ScribbleMap> scribbles) {
    std::vector<torch::Tensor> maps;
    for (const auto& s : scribbles) {
        s.validate();
        maps.push_back(one_hot(s.labels, kAccessoryClasses));
    }
    return torch::stack(maps, 0);
}

namespace {

template <typename Op>
LabelMap morph(const LabelMap& labels, int radius, bool dilate, Op op) {
    if (radius < 0) throw InvalidInput("morphology radius must be non-negative");
    if (radius == 0) return labels;
    const cv::Mat kernel = cv::getStructuringElement(cv::MORPH_RECT, cv::Size(2 * radius + 1, 2 * radius + 1));
    LabelMap out = dilate ? labels : LabelMap(labels.height, labels.width, kNone);
    for (int c = 1; c < kAccessoryClasses; ++c) {
        cv::Mat mask(labels.height, labels.width, CV_8UC1);
        bool any = false;
        for (int r = 0; r < labels.height; ++r) {
            for (int col = 0; col < labels.width; ++col) {
                const bool on = labels.at(r, col) == c;
                mask.at<std::uint8_t>(r, col) = on ? 255 : 0;
                any |= on;
            }
        }
        if (!any) continue;
        cv::Mat result;
        op(mask, result, kernel);
        for (int r = 0; r < labels.height; ++r) {
            for (int col = 0; col < labels.width; ++col) {
                if (!result.at<std::uint8_t>(r, col)) continue;
                if (dilate) {
                    if (out.at(r, col) == kNone) out.at(r, col) = static_cast<std::uint8_t>(c);
                } else {
                    out.at(r, col) = static_cast<std::uint8_t>(c);
                }
            }
        }
    }
    return out;
}

}  // namespace

LabelMap dilate_labels(const LabelMap& labels, int radius) {
    return morph(labels, radius, true, [](const cv::Mat& in, cv::Mat& out, const cv::Mat& k) { cv::dilate(in, out, k); });
}

LabelMap erode_labels(const LabelMap& labels, int radius) {
    return morph(labels, radius, false, [](const cv::Mat& in, cv::Mat& out, const cv::Mat& k) {
        cv::erode(in, out, k, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
    });
}

ScribbleMap augment_scribble(const ScribbleMap& scribble, Rng& rng, int max_radius) {
    ScribbleMap out = scribble;
    if (max_radius < 1) return out;
    const bool dilate = rng.bernoulli(0.5);
    const int radius = 1 + static_cast<int>(rng.uniform_int(max_radius));
    out.labels = dilate ? dilate_labels(scribble.labels, radius) : erode_labels(scribble.labels, radius);
    return out;
}

ScribbleEncoderImpl::ScribbleEncoderImpl(int feature_channels, int resolution, int channels, int code_dim)
    : feature_channels_(feature_channels), resolution_(resolution), code_dim_(code_dim) {
    if (resolution < 4 || (resolution & (resolution - 1)) != 0) throw ConfigError("encoder resolution must be a power of two");
    scribble_a_ = register_module("scribble_a", nn::EqualConv2d(kAccessoryClasses, channels, 3));
    scribble_b_ = register_module("scribble_b", nn::EqualConv2d(channels, channels, 3));
    feature_proj_ = register_module("feature_proj", nn::EqualConv2d(feature_channels, channels, 1));
    down_ = register_module("down", torch::nn::ModuleList());
    for (int r = resolution; r > 4; r /= 2) down_->push_back(nn::EqualConv2d(channels, channels, 3, 2));
    head_a_ = register_module("head_a", nn::EqualLinear(channels * 16, channels * 4));
    head_b_ = register_module("head_b", nn::EqualLinear(channels * 4, code_dim));
}

torch::Tensor ScribbleEncoderImpl::forward(const torch::Tensor& scribble, const torch::Tensor& f_por) {
    if (scribble.dim() != 4 || scribble.size(1) != kAccessoryClasses || scribble.size(2) != resolution_ ||
        scribble.size(3) != resolution_) {
        throw InvalidInput("scribble must be [B, 5, R, R] at the render resolution");
    }
    if (f_por.dim() != 4 || f_por.size(0) != scribble.size(0) || f_por.size(1) != feature_channels_ ||
        f_por.size(2) != resolution_ || f_por.size(3) != resolution_) {
        throw InvalidInput("portrait features do not match the scribble");
    }
    auto s = nn::lrelu(scribble_b_->forward(nn::lrelu(scribble_a_->forward(scribble))));
    auto h = s + feature_proj_->forward(f_por);
    for (auto& m : *down_) h = nn::lrelu(m->as<nn::EqualConv2d>()->forward(h));
    return head_b_->forward(nn::lrelu(head_a_->forward(h.flatten(1))));
}

AccessoryCodebookImpl::AccessoryCodebookImpl(int size, int dim) {
    if (size < 2) throw ConfigError("codebook needs at least two entries");
    entries = register_parameter("entries", torch::randn({size, dim}));
    last_used = register_buffer("last_used", torch::zeros({size}, torch::kInt64));
}

Quantized AccessoryCodebookImpl::quantize(const torch::Tensor& w) const {
    if (w.dim() != 2 || w.size(1) != dim()) throw InvalidInput("code dimension does not match the codebook");
    Quantized q;
    {
        torch::NoGradGuard guard;
        // Direct differences keep exact matches at distance 0.
        q.distances = (w.detach().unsqueeze(1) - entries.detach().unsqueeze(0)).square().sum(2);
        q.indices = q.distances.argmin(1);
    }
    q.entries = entries.index_select(0, q.indices);
    // forward value is exactly e; the gradient reaches w only
    q.straight_through = q.entries.detach() + (w - w.detach());
    return q;
}

torch::Tensor AccessoryCodebookImpl::commitment_loss(const torch::Tensor& w, const Quantized& q) const {
    return (q.entries.detach() - w).square().sum(1).mean() + (q.entries - w.detach()).square().sum(1).mean();
}

void AccessoryCodebookImpl::mark_used(const torch::Tensor& indices, std::int64_t step) {
    torch::NoGradGuard guard;
    last_used.index_fill_(0, indices.to(torch::kInt64), step);
}

int AccessoryCodebookImpl::reseed_dead(const torch::Tensor& candidates, std::int64_t step, std::int64_t patience,
                                       Rng& rng) {
    torch::NoGradGuard guard;
    int count = 0;
    auto used = last_used.accessor<std::int64_t, 1>();
    for (std::int64_t k = 0; k < size(); ++k) {
        if (step - used[k] < patience) continue;
        entries[k].copy_(candidates[rng.uniform_int(candidates.size(0))]);
        used[k] = step;
        ++count;
    }
    return count;
}

torch::Tensor reconstruction_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
    return torch::nn::functional::cross_entropy(logits, labels.to(torch::kInt64));
}

torch::Tensor latent_loss(const torch::Tensor& w, const torch::Tensor& w_hat) {
    return torch::nn::functional::smooth_l1_loss(w_hat, w, torch::nn::functional::SmoothL1LossFuncOptions().beta(1.0));
}

void init_codebook_from_mapper(AccessoryCodebook& codebook, Pomo3DGenerator& generator, Rng& rng) {
    torch::NoGradGuard guard;
    const auto k = codebook->size();
    const auto& cfg = generator->config();
    const auto z = LatentNoise::sample(static_cast<int>(k), cfg.latent.d_z, rng);
    std::vector<CameraPose> poses(static_cast<size_t>(k), CameraPose::frontal(cfg.render));
    const auto codes = generator->mapper->map_latents(z, conditioning_tensor(poses), 0.0, rng);
    codebook->entries.copy_(codes.w_acc_g);
}

namespace {

std::vector<ScribbleMap> argmax_scribbles(const torch::Tensor& probs, ScribbleProvenance provenance) {
    std::vector<ScribbleMap> out;
    auto labels = probs.argmax(1);
    for (std::int64_t b = 0; b < labels.size(0); ++b) out.push_back({tensor_to_labels(labels[b]), provenance});
    return out;
}

torch::Tensor labels_tensor(std::span<const ScribbleMap> maps) {
    std::vector<torch::Tensor> t;
    for (const auto& m : maps) t.push_back(labels_to_tensor(m.labels));
    return torch::stack(t, 0);
}

}  // namespace

ScribbleTrainer::ScribbleTrainer(Pomo3DGenerator generator, const Config& config,
                                 std::shared_ptr<const TrainingData> data)
    : generator_(std::move(generator)), config_(config), data_(std::move(data)) {
    generator_->eval();
    for (auto& p : generator_->parameters()) p.set_requires_grad(false);
    torch::manual_seed(mix_seed(config_.train.seed ^ 0x5C81ull));
    encoder = ScribbleEncoder(config_.render.feature_channels, config_.render.resolution,
                              config_.scribble.encoder_channels, config_.latent.d_w);
    codebook = AccessoryCodebook(config_.scribble.codebook_size, config_.latent.d_w);
    Rng rng = Rng::derive(config_.train.seed, 0xC0DEull);
    init_codebook_from_mapper(codebook, generator_, rng);
    std::vector<torch::Tensor> params = encoder->parameters();
    params.push_back(codebook->entries);
    optimizer_ = std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(config_.scribble.lr).betas({0.9, 0.99}));
}

ScribbleLosses ScribbleTrainer::step() {
    const auto& sc = config_.scribble;
    const int batch = sc.batch;
    Rng rng = Rng::derive(config_.train.seed ^ 0x5C81ull, static_cast<std::uint64_t>(step_) + 1);
    auto& g = *generator_;

    std::vector<CameraPose> poses;
    std::vector<ScribbleMap> targets;
    PortraitBranch portrait;
    torch::Tensor w_b;
    {
        torch::NoGradGuard guard;
        const bool from_data = data_ && data_->size(DataGroup::AccessorySegmaps) > 0;
        if (from_data) {
            auto real = data_->sample(DataGroup::AccessorySegmaps, batch, rng);
            poses = real.poses;
            targets = argmax_scribbles(real.samples, ScribbleProvenance::Dataset);
        } else {
            for (int i = 0; i < batch; ++i) poses.push_back(CameraPose::frontal(config_.render));
        }
        const auto cond = conditioning_tensor(poses);
        const auto z = LatentNoise::sample(batch, config_.latent.d_z, rng);
        const auto codes = g.mapper->map_latents(z, cond, 0.0, rng);
        portrait = g.render_portrait(codes.w_por_g, poses);
        if (!from_data) {
            targets = argmax_scribbles(g.render_accessory(portrait.planes, codes.w_acc_g, poses).semantics.probs,
                                       ScribbleProvenance::Generated);
        }
        const auto z_b = LatentNoise::sample(batch, config_.latent.d_z, rng);
        w_b = g.mapper->map_latents(z_b, cond, 0.0, rng).w_acc_g;
    }
    const auto f_por = portrait.features.features.detach();

    // (a) segmap -> code -> segmap, on morphologically perturbed inputs.
    std::vector<ScribbleMap> augmented;
    for (const auto& t : targets) augmented.push_back(augment_scribble(t, rng, sc.max_morph_radius));
    const auto w_a = encoder->forward(scribble_tensor(augmented), f_por);
    const auto q_a = codebook->quantize(w_a);
    const auto s_hat = g.render_accessory(portrait.planes, q_a.straight_through, poses);
    const auto recon = reconstruction_loss(s_hat.semantics.logits, labels_tensor(targets));

    // (b) code -> segmap -> code.
    torch::Tensor s_gen;
    {
        torch::NoGradGuard guard;
        s_gen = g.render_accessory(portrait.planes, w_b, poses).semantics.probs;
        s_gen = torch::one_hot(s_gen.argmax(1), kAccessoryClasses).permute({0, 3, 1, 2}).to(torch::kFloat32);
    }
    const auto w_hat = encoder->forward(s_gen, f_por);
    const auto q_b = codebook->quantize(w_hat);
    const auto latent = latent_loss(w_b, w_hat);
    const auto commitment = codebook->commitment_loss(w_a, q_a) + codebook->commitment_loss(w_hat, q_b);

    const auto total = recon + sc.alpha * commitment + sc.beta * latent;
    if (!torch::isfinite(total).item<bool>()) throw TrainingFault("non-finite scribble loss", step_);
    optimizer_->zero_grad();
    total.backward();
    optimizer_->step();

    ScribbleLosses out;
    out.recon = recon.item<double>();
    out.commitment = commitment.item<double>();
    out.latent = latent.item<double>();
    out.total = total.item<double>();
    codebook->mark_used(torch::cat({q_a.indices, q_b.indices}), step_);
    out.reseeded = codebook->reseed_dead(torch::cat({w_a, w_hat}).detach(), step_, sc.dead_code_steps, rng);
    ++step_;
    return out;
}

Checkpoint ScribbleTrainer::state() {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "scribble_state"}, {"step", step_}, {"config", to_json(config_)}};
    store_module(ckpt, "generator", *generator_);
    store_scribble_modules(ckpt, encoder, codebook);
    store_adam(ckpt, "opt_scribble", *optimizer_);
    return ckpt;
}

void ScribbleTrainer::load_state(const Checkpoint& ckpt) {
    restore_module(ckpt, "scribble/encoder", *encoder);
    restore_module(ckpt, "scribble/codebook", *codebook);
    restore_adam(ckpt, "opt_scribble", *optimizer_);
    step_ = ckpt.meta.value("step", std::int64_t{0});
}

ScribbleInversion invert_scribble(ScribbleEncoder& encoder, const AccessoryCodebook& codebook,
                                  const ScribbleMap& scribble, const ProjectedFeatures& f_por) {
    torch::NoGradGuard guard;
    ScribbleInversion out;
    out.pre_quantization = encoder->forward(scribble_tensor(std::span<const ScribbleMap>(&scribble, 1)), f_por.features);
    const auto q = codebook->quantize(out.pre_quantization);
    out.index = q.indices[0].item<std::int64_t>();
    out.code = codebook->entries.index_select(0, q.indices).clone();
    return out;
}

void store_scribble_modules(Checkpoint& ckpt, ScribbleEncoder& encoder, AccessoryCodebook& codebook) {
    store_module(ckpt, "scribble/encoder", *encoder);
    store_module(ckpt, "scribble/codebook", *codebook);
}

std::pair<ScribbleEncoder, AccessoryCodebook> load_scribble_modules(const Checkpoint& ckpt, const Config& config) {
    ScribbleEncoder encoder(config.render.feature_channels, config.render.resolution, config.scribble.encoder_channels,
                            config.latent.d_w);
    AccessoryCodebook codebook(config.scribble.codebook_size, config.latent.d_w);
    restore_module(ckpt, "scribble/encoder", *encoder);
    restore_module(ckpt, "scribble/codebook", *codebook);
    encoder->eval();
    return {encoder, codebook};
}

}  // namespace pomo3d
