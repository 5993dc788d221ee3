#include "pomo3d/training.hpp"

#include <cmath>

#include <torch/torch.h>

#include "pomo3d/errors.hpp"
#include "pomo3d/metrics.hpp"

namespace pomo3d {
namespace {

void require_finite(const torch::Tensor& t, const char* what, std::int64_t step) {
    if (!torch::isfinite(t.detach()).all().item<bool>()) {
        throw TrainingFault(std::string("non-finite ") + what, step);
    }
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
    for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

constexpr std::uint64_t kFmdRealStream = 0xF3D0;
constexpr std::uint64_t kFmdFakeStream = 0xF3E0;
constexpr int kEvalChunk = 32;

}  // namespace

torch::Tensor generator_loss(std::span<const torch::Tensor> fake_logits, std::int64_t step) {
    if (fake_logits.empty()) throw InvalidInput("no branch logits");
    torch::Tensor total;
    for (const auto& logits : fake_logits) {
        require_finite(logits, "generator logits", step);
        auto term = torch::nn::functional::softplus(-logits).mean();
        total = total.defined() ? total + term : term;
    }
    return total;
}

torch::Tensor r1_penalty(const torch::Tensor& real_logits, const torch::Tensor& real_inputs) {
    auto grads = torch::autograd::grad({real_logits.sum()}, {real_inputs}, {}, /*retain_graph=*/true,
                                       /*create_graph=*/true, /*allow_unused=*/true);
    if (!grads[0].defined()) return torch::zeros({}, real_logits.options());
    return grads[0].square().flatten(1).sum(1).mean();
}

DiscriminatorLoss discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                     const torch::Tensor* real_inputs, double gamma, double r1_weight,
                                     std::int64_t step) {
    require_finite(real_logits, "discriminator real logits", step);
    require_finite(fake_logits, "discriminator fake logits", step);
    namespace F = torch::nn::functional;
    DiscriminatorLoss out;
    out.adversarial = F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
    out.r1 = real_inputs ? r1_penalty(real_logits, *real_inputs) * (gamma / 2.0)
                         : torch::zeros({}, real_logits.options());
    out.total = out.adversarial + out.r1 * r1_weight;
    require_finite(out.total, "discriminator loss", step);
    return out;
}

TrainingData::TrainingData(const PacMaskGroups& groups, const Config& config) : render_(config.render) {
    const int r = config.render.resolution, h = config.output_resolution();
    auto pack_labels = [r](const std::vector<PacMaskRecord>& records, int n_classes, std::vector<PoseLabel>& poses) {
        auto t = torch::empty({static_cast<std::int64_t>(records.size()), r, r}, torch::kUInt8);
        for (size_t i = 0; i < records.size(); ++i) {
            const auto m = resize_nearest(records[i].labels, r, r);
            for (auto v : m.labels) {
                if (v >= n_classes) throw CorruptionError("record " + records[i].id + " has a label outside its class set");
            }
            std::memcpy(t[static_cast<std::int64_t>(i)].data_ptr<std::uint8_t>(), m.labels.data(), m.size());
            poses.push_back(records[i].pose);
        }
        return t;
    };
    accessory_labels_ = pack_labels(groups.accessory, kAccessoryClasses, accessory_poses_);
    portrait_labels_ = pack_labels(groups.portrait, kPortraitClasses, portrait_poses_);
    rgb_ = torch::empty({static_cast<std::int64_t>(groups.rgb.size()), 3, h, h}, torch::kUInt8);
    std::int64_t sources = 0, with_accessory = 0;
    for (size_t i = 0; i < groups.rgb.size(); ++i) {
        const auto img = resize_area(groups.rgb[i].rgb, h, h);
        auto hwc = torch::from_blob(const_cast<std::uint8_t*>(img.data.data()), {h, h, 3}, torch::kUInt8);
        rgb_[static_cast<std::int64_t>(i)].copy_(hwc.permute({2, 0, 1}));
        rgb_poses_.push_back(groups.rgb[i].pose);
        const auto origin = groups.rgb[i].origin;
        if (origin == RecordOrigin::Original || origin == RecordOrigin::Synthetic) {
            ++sources;
            with_accessory += !groups.rgb[i].source_accessories.empty();
        }
    }
    accessory_ratio_ = sources ? static_cast<double>(with_accessory) / static_cast<double>(sources) : 0.0;
}

std::int64_t TrainingData::size(DataGroup group) const {
    switch (group) {
        case DataGroup::AccessorySegmaps: return accessory_labels_.size(0);
        case DataGroup::PortraitSegmaps: return portrait_labels_.size(0);
        default: return rgb_.size(0);
    }
}

DataGroupBatch TrainingData::sample(DataGroup group, int batch, Rng& rng) const {
    const auto n = size(group);
    if (n == 0) throw ConfigError("data group " + std::string(group_name(group)) + " is empty");
    std::vector<std::int64_t> idx(static_cast<size_t>(batch));
    for (auto& i : idx) i = rng.uniform_int(n);
    return take(group, idx);
}

DataGroupBatch TrainingData::take(DataGroup group, std::span<const std::int64_t> indices) const {
    DataGroupBatch out;
    out.group = group;
    auto index = torch::tensor(std::vector<std::int64_t>(indices.begin(), indices.end()), torch::kInt64);
    const std::vector<PoseLabel>* poses = nullptr;
    switch (group) {
        case DataGroup::AccessorySegmaps:
            out.samples = torch::one_hot(accessory_labels_.index_select(0, index).to(torch::kInt64), kAccessoryClasses)
                              .permute({0, 3, 1, 2})
                              .to(torch::kFloat32)
                              .contiguous();
            poses = &accessory_poses_;
            break;
        case DataGroup::PortraitSegmaps:
            out.samples = torch::one_hot(portrait_labels_.index_select(0, index).to(torch::kInt64), kPortraitClasses)
                              .permute({0, 3, 1, 2})
                              .to(torch::kFloat32)
                              .contiguous();
            poses = &portrait_poses_;
            break;
        case DataGroup::RgbImages:
            out.samples = rgb_.index_select(0, index).to(torch::kFloat32) / 127.5 - 1.0;
            poses = &rgb_poses_;
            break;
    }
    for (auto i : indices) out.poses.push_back((*poses)[static_cast<size_t>(i)].camera(render_));
    return out;
}

CameraPose TrainingData::sample_pose(Rng& rng) const {
    if (rgb_poses_.empty()) throw ConfigError("data group rgb_images is empty");
    return rgb_poses_[static_cast<size_t>(rng.uniform_int(static_cast<std::int64_t>(rgb_poses_.size())))].camera(render_);
}

bool sample_accs(Rng& rng, double accs_probability) {
    if (accs_probability < 0.0 || accs_probability > 1.0) throw ConfigError("accs probability must lie in [0, 1]");
    return rng.bernoulli(accs_probability);
}

TrainingBatch sample_training_batch(const TrainingData& data, const Config& config, double accs_probability, Rng& rng) {
    TrainingBatch b;
    const int n = config.train.batch;
    b.z = LatentNoise::sample(n, config.latent.d_z, rng);
    for (int i = 0; i < n; ++i) b.poses.push_back(data.sample_pose(rng));
    b.accs = sample_accs(rng, accs_probability);
    b.scheme = select_region_scheme(rng, b.accs, config.texture.decorative_prob);
    b.real_accessory = data.sample(DataGroup::AccessorySegmaps, n, rng);
    b.real_portrait = data.sample(DataGroup::PortraitSegmaps, n, rng);
    b.real_rgb = data.sample(DataGroup::RgbImages, n, rng);
    return b;
}

std::string_view phase_name(TrainPhase phase) {
    return phase == TrainPhase::GeometryPretrain ? "geometry_pretrain" : "full";
}

nlohmann::json LossRecord::to_json() const {
    nlohmann::json j{{"step", step},
                     {"phase", phase_name(phase)},
                     {"accs", accs},
                     {"g_accessory", g_accessory},
                     {"g_portrait", g_portrait},
                     {"g_rgb", g_rgb},
                     {"g_total", g_total},
                     {"d_accessory", d_accessory},
                     {"d_portrait", d_portrait},
                     {"d_rgb", d_rgb},
                     {"r1_accessory", r1_accessory},
                     {"r1_portrait", r1_portrait},
                     {"r1_rgb", r1_rgb}};
    if (fmd) j["fmd"] = *fmd;
    return j;
}

bool LossRecord::finite() const {
    for (double v : {g_accessory, g_portrait, g_rgb, g_total, d_accessory, d_portrait, d_rgb, r1_accessory,
                     r1_portrait, r1_rgb}) {
        if (!std::isfinite(v)) return false;
    }
    return !fmd || std::isfinite(*fmd);
}

Trainer::Trainer(const Config& config, std::shared_ptr<const TrainingData> data)
    : config_(config), data_(std::move(data)) {
    config_.validate();
    torch::set_num_threads(std::max(1, config_.train.threads));
    const auto& t = config_.train;
    accs_probability_ = t.accs_probability >= 0.0 ? t.accs_probability : data_->accessory_ratio();
    if (accs_probability_ < 0.0 || accs_probability_ > 1.0) throw ConfigError("accs probability must lie in [0, 1]");

    generator = make_generator(config_, t.seed);
    torch::manual_seed(mix_seed(t.seed ^ 0xD15Cull));
    const int r = config_.render.resolution;
    d_accessory = Discriminator(kAccessoryClasses, r, t.disc_channels);
    d_portrait = Discriminator(kPortraitClasses, r, t.disc_channels);
    d_rgb = Discriminator(3, config_.output_resolution(), t.disc_channels);

    auto adam = [&](const std::vector<torch::Tensor>& params) {
        return std::make_unique<torch::optim::Adam>(
            params, torch::optim::AdamOptions(t.lr).betas({t.beta1, t.beta2}).eps(1e-8));
    };
    opt_g_ = adam(generator->parameters());
    opt_d_acc_ = adam(d_accessory->parameters());
    opt_d_por_ = adam(d_portrait->parameters());
    opt_d_rgb_ = adam(d_rgb->parameters());

    const auto n_acc = data_->size(DataGroup::AccessorySegmaps);
    if (n_acc > 0) {
        Rng rng = Rng::derive(t.seed, kFmdRealStream);
        std::vector<std::int64_t> idx;
        for (int i = 0; i < t.fmd_samples; ++i) idx.push_back(rng.uniform_int(n_acc));
        fmd_real_ = data_->take(DataGroup::AccessorySegmaps, idx).samples;
    }
}

TrainPhase Trainer::phase() const {
    return step_ < config_.train.pretrain_steps ? TrainPhase::GeometryPretrain : TrainPhase::Full;
}

LossRecord Trainer::step() {
    const auto& t = config_.train;
    LossRecord rec;
    rec.step = step_;
    rec.phase = phase();
    if (t.fmd_interval > 0 && step_ % t.fmd_interval == 0 && fmd_real_.defined()) rec.fmd = fmd();

    Rng rng = Rng::derive(t.seed, static_cast<std::uint64_t>(step_) + 1);
    auto batch = sample_training_batch(*data_, config_, accs_probability_, rng);
    rec.accs = batch.accs;
    const bool full = rec.phase == TrainPhase::Full;
    auto jitter = rng.tensor_generator();
    const auto cond = conditioning_tensor(batch.poses);

    // Generator update.
    for (auto* d : {d_accessory.get(), d_portrait.get(), d_rgb.get()}) set_requires_grad(*d, false);
    const auto codes = generator->mapper->map_latents(batch.z, cond, config_.latent.p_identity, rng);
    PortraitBranch portrait;
    AccessoryBranch accessory;
    torch::Tensor rgb;
    if (full) {
        ComposeRequest req;
        req.w_por_g = codes.w_por_g;
        req.w_por_t = codes.w_por_t;
        req.poses = batch.poses;
        req.accs = batch.accs;
        req.jitter = jitter;
        if (batch.accs) req.accessories.push_back({codes.w_acc_g, codes.w_acc_t});
        if (batch.scheme == RegionScheme::Decorative) req.decorative_style = codes.w_acc_t;
        auto res = generator->compose(req);
        portrait = std::move(res.portrait);
        accessory = batch.accs ? std::move(res.accessories.front())
                               : generator->render_accessory(portrait.planes, codes.w_acc_g, batch.poses, jitter);
        rgb = res.rgb;
    } else {
        portrait = generator->render_portrait(codes.w_por_g, batch.poses, jitter);
        accessory = generator->render_accessory(portrait.planes, codes.w_acc_g, batch.poses, jitter);
    }
    std::vector<torch::Tensor> fake_logits{d_accessory->forward(accessory.semantics.probs, cond),
                                           d_portrait->forward(portrait.semantics.probs, cond)};
    if (full) fake_logits.push_back(d_rgb->forward(rgb, cond));
    namespace F = torch::nn::functional;
    rec.g_accessory = F::softplus(-fake_logits[0]).mean().item<double>();
    rec.g_portrait = F::softplus(-fake_logits[1]).mean().item<double>();
    if (full) rec.g_rgb = F::softplus(-fake_logits[2]).mean().item<double>();
    auto g_loss = generator_loss(fake_logits, step_);
    require_finite(g_loss, "generator loss", step_);
    rec.g_total = g_loss.item<double>();
    opt_g_->zero_grad();
    g_loss.backward();
    opt_g_->step();

    // Discriminator updates on the same (detached) fakes.
    const bool apply_r1 = t.r1_interval > 0 && step_ % t.r1_interval == 0;
    const double r1_weight = static_cast<double>(std::max(1, t.r1_interval));
    auto d_step = [&](Discriminator& d, torch::optim::Adam& opt, const DataGroupBatch& real,
                      const torch::Tensor& fake, double& d_out, double& r1_out) {
        set_requires_grad(*d, true);
        auto real_x = real.samples.detach();
        if (apply_r1) real_x.set_requires_grad(true);
        auto real_logits = d->forward(real_x, conditioning_tensor(real.poses));
        auto fake_logits_d = d->forward(fake.detach(), cond);
        auto loss = discriminator_loss(real_logits, fake_logits_d, apply_r1 ? &real_x : nullptr, t.r1_gamma,
                                       r1_weight, step_);
        opt.zero_grad();
        loss.total.backward();
        opt.step();
        d_out = loss.adversarial.item<double>();
        r1_out = loss.r1.item<double>();
    };
    d_step(d_accessory, *opt_d_acc_, batch.real_accessory, accessory.semantics.probs, rec.d_accessory,
           rec.r1_accessory);
    d_step(d_portrait, *opt_d_por_, batch.real_portrait, portrait.semantics.probs, rec.d_portrait, rec.r1_portrait);
    if (full) d_step(d_rgb, *opt_d_rgb_, batch.real_rgb, rgb, rec.d_rgb, rec.r1_rgb);

    if (!rec.finite()) throw TrainingFault("non-finite loss", step_);
    ++step_;
    return rec;
}

void Trainer::run(std::int64_t until_step, const std::function<void(const LossRecord&)>& on_step,
                  const std::optional<std::filesystem::path>& fault_dir) {
    while (step_ < until_step) {
        try {
            auto rec = step();
            if (on_step) on_step(rec);
        } catch (const TrainingFault& fault) {
            if (fault_dir) {
                save_checkpoint(*fault_dir / ("fault_step_" + std::to_string(fault.step()) + ".ckpt"), state());
            }
            throw;
        }
    }
}

torch::Tensor Trainer::fmd_fake_maps() {
    torch::NoGradGuard guard;
    const int n = config_.train.fmd_samples;
    Rng rng = Rng::derive(config_.train.seed, kFmdFakeStream);
    const auto z = LatentNoise::sample(n, config_.latent.d_z, rng);
    std::vector<CameraPose> poses;
    for (int i = 0; i < n; ++i) poses.push_back(data_->sample_pose(rng));
    std::vector<torch::Tensor> maps;
    for (int begin = 0; begin < n; begin += kEvalChunk) {
        const int end = std::min(n, begin + kEvalChunk);
        std::span<const CameraPose> chunk_poses(poses.data() + begin, static_cast<size_t>(end - begin));
        const auto codes =
            generator->mapper->map_latents(z.slice(begin, end), conditioning_tensor(chunk_poses), config_.latent.p_identity, rng);
        auto por = generator->render_portrait(codes.w_por_g, chunk_poses);
        maps.push_back(generator->render_accessory(por.planes, codes.w_acc_g, chunk_poses).semantics.probs);
    }
    return torch::cat(maps, 0);
}

double Trainer::fmd_between(const torch::Tensor& fake_maps, Discriminator& embedder) {
    torch::NoGradGuard guard;
    auto embed = [&](const torch::Tensor& x) {
        std::vector<torch::Tensor> parts;
        for (std::int64_t b = 0; b < x.size(0); b += kEvalChunk) {
            parts.push_back(embedder->early_features(x.slice(0, b, std::min(x.size(0), b + kEvalChunk))));
        }
        return torch::cat(parts, 0);
    };
    const EmbeddingSet real{embed(fmd_real_), "d_accessory.early"};
    const EmbeddingSet fake{embed(fake_maps), "d_accessory.early"};
    return frechet_distance(real, fake);
}

double Trainer::fmd(Discriminator* embedder) {
    if (!fmd_real_.defined()) throw ConfigError("no accessory segmaps available for FMD");
    return fmd_between(fmd_fake_maps(), embedder ? *embedder : d_accessory);
}

Checkpoint Trainer::state() {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "train_state"},
                 {"step", step_},
                 {"accs_probability", accs_probability_},
                 {"config", to_json(config_)}};
    store_module(ckpt, "generator", *generator);
    store_module(ckpt, "d_accessory", *d_accessory);
    store_module(ckpt, "d_portrait", *d_portrait);
    store_module(ckpt, "d_rgb", *d_rgb);
    store_adam(ckpt, "opt_g", *opt_g_);
    store_adam(ckpt, "opt_d_accessory", *opt_d_acc_);
    store_adam(ckpt, "opt_d_portrait", *opt_d_por_);
    store_adam(ckpt, "opt_d_rgb", *opt_d_rgb_);
    return ckpt;
}

void Trainer::load_state(const Checkpoint& ckpt) {
    if (ckpt.meta.value("kind", "") != "train_state") throw ConfigError("checkpoint does not hold a training state");
    auto saved = to_json(apply_json(Config::preset_named(ckpt.meta.at("config").value("preset", "desk")),
                                          ckpt.meta.at("config")));
    auto current = to_json(config_);
    // Step budgets and logging cadence may change on resume; the model may not.
    for (auto* j : {&current, &saved}) {
        for (const char* key : {"total_steps", "log_interval", "checkpoint_interval", "fmd_interval", "threads"}) {
            if ((*j).contains("train")) (*j)["train"].erase(key);
        }
    }
    if (current != saved) throw ConfigError("checkpoint was trained with a different configuration");
    restore_module(ckpt, "generator", *generator);
    restore_module(ckpt, "d_accessory", *d_accessory);
    restore_module(ckpt, "d_portrait", *d_portrait);
    restore_module(ckpt, "d_rgb", *d_rgb);
    restore_adam(ckpt, "opt_g", *opt_g_);
    restore_adam(ckpt, "opt_d_accessory", *opt_d_acc_);
    restore_adam(ckpt, "opt_d_portrait", *opt_d_por_);
    restore_adam(ckpt, "opt_d_rgb", *opt_d_rgb_);
    step_ = ckpt.meta.at("step").get<std::int64_t>();
    accs_probability_ = ckpt.meta.at("accs_probability").get<double>();
}

Checkpoint generator_checkpoint(const Pomo3DGenerator& generator, const Config& config) {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "generator"}, {"config", to_json(config)}};
    store_module(ckpt, "generator", *generator);
    return ckpt;
}

Pomo3DGenerator load_generator(const Checkpoint& ckpt, Config* config_out) {
    if (!ckpt.meta.contains("config")) throw CorruptionError("checkpoint has no config");
    const auto& cj = ckpt.meta.at("config");
    Config config = apply_json(Config::preset_named(cj.value("preset", "desk")), cj);
    config.validate();
    auto generator = make_generator(config, 0);
    restore_module(ckpt, "generator", *generator);
    generator->eval();
    if (config_out) *config_out = config;
    return generator;
}

}  // namespace pomo3d
