#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/optim/adam.h>
#include <torch/types.h>

#include "pomo3d/checkpoint.hpp"
#include "pomo3d/config.hpp"
#include "pomo3d/discriminator.hpp"
#include "pomo3d/generator.hpp"
#include "pomo3d/pacmask.hpp"
#include "pomo3d/rng.hpp"

namespace pomo3d {

/// Mean over the batch of softplus(-logit), summed over branches. Throws
/// TrainingFault when any logit is not finite.
torch::Tensor generator_loss(std::span<const torch::Tensor> fake_logits, std::int64_t step = -1);

/// E[||grad_x D(x)||^2] over the batch; `real_logits` must depend on `real_inputs`.
torch::Tensor r1_penalty(const torch::Tensor& real_logits, const torch::Tensor& real_inputs);

struct DiscriminatorLoss {
    torch::Tensor adversarial;  // mean softplus(-real) + mean softplus(fake)
    torch::Tensor r1;           // (gamma / 2) * E||grad||^2, zero when not applied
    torch::Tensor total;        // adversarial + r1_weight * r1
};

/// `real_inputs` enables the R1 term; `r1_weight` compensates lazy application.
DiscriminatorLoss discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                     const torch::Tensor* real_inputs, double gamma, double r1_weight = 1.0,
                                     std::int64_t step = -1);

/// Real samples of one data group, already in discriminator input form.
struct DataGroupBatch {
    DataGroup group = DataGroup::RgbImages;
    torch::Tensor samples;  // accessory [B,5,R,R], portrait [B,20,R,R] one-hot; rgb [B,3,H,W] in [-1,1]
    std::vector<CameraPose> poses;

    std::int64_t batch_size() const { return samples.size(0); }
};

/// In-memory training tensors for the three groups at model resolution.
class TrainingData {
public:
    TrainingData(const PacMaskGroups& groups, const Config& config);

    std::int64_t size(DataGroup group) const;
    /// Uniform sampling with replacement. Throws ConfigError if the group is empty.
    DataGroupBatch sample(DataGroup group, int batch, Rng& rng) const;
    DataGroupBatch take(DataGroup group, std::span<const std::int64_t> indices) const;
    /// Pose of a random RGB record, for generator conditioning.
    CameraPose sample_pose(Rng& rng) const;

    /// Share of source samples carrying at least one accessory.
    double accessory_ratio() const { return accessory_ratio_; }

private:
    RenderConfig render_;
    torch::Tensor accessory_labels_;  // [N, R, R] uint8
    torch::Tensor portrait_labels_;   // [N, R, R] uint8
    torch::Tensor rgb_;               // [N, 3, H, W] uint8
    std::vector<PoseLabel> accessory_poses_, portrait_poses_, rgb_poses_;
    double accessory_ratio_ = 0.0;
};

struct TrainingBatch {
    LatentNoise z;
    std::vector<CameraPose> poses;
    bool accs = false;
    RegionScheme scheme = RegionScheme::Empty;
    DataGroupBatch real_accessory;
    DataGroupBatch real_portrait;
    DataGroupBatch real_rgb;
};

bool sample_accs(Rng& rng, double accs_probability);

/// All three groups are drawn every step because the three discriminators are
/// stepped jointly.
TrainingBatch sample_training_batch(const TrainingData& data, const Config& config, double accs_probability, Rng& rng);

enum class TrainPhase : std::uint8_t { GeometryPretrain, Full };
std::string_view phase_name(TrainPhase phase);

struct LossRecord {
    std::int64_t step = 0;
    TrainPhase phase = TrainPhase::GeometryPretrain;
    bool accs = false;
    double g_accessory = 0, g_portrait = 0, g_rgb = 0, g_total = 0;
    double d_accessory = 0, d_portrait = 0, d_rgb = 0;
    double r1_accessory = 0, r1_portrait = 0, r1_rgb = 0;
    std::optional<double> fmd;

    nlohmann::json to_json() const;
    bool finite() const;
};

/// Owns generator, the three discriminators and their optimizers. Each step
/// draws its randomness from Rng::derive(seed, step), so a resumed run replays
/// an uninterrupted one.
class Trainer {
public:
    Trainer(const Config& config, std::shared_ptr<const TrainingData> data);

    LossRecord step();
    /// Runs until `until_step`; on a TrainingFault a diagnostic checkpoint is
    /// written to `fault_dir` (if set) before rethrowing.
    void run(std::int64_t until_step, const std::function<void(const LossRecord&)>& on_step = {},
             const std::optional<std::filesystem::path>& fault_dir = std::nullopt);

    std::int64_t current_step() const { return step_; }
    TrainPhase phase() const;
    double accs_probability() const { return accs_probability_; }

    /// FMD between accessory segmaps from a fixed noise set and real accessory
    /// maps, embedded by the early layers of `embedder` (default: the current
    /// accessory discriminator).
    double fmd(Discriminator* embedder = nullptr);
    /// Fixed-noise accessory probability maps [N, 5, R, R] used by fmd().
    torch::Tensor fmd_fake_maps();
    double fmd_between(const torch::Tensor& fake_maps, Discriminator& embedder);

    Checkpoint state();
    void load_state(const Checkpoint& ckpt);

    Pomo3DGenerator generator{nullptr};
    Discriminator d_accessory{nullptr};
    Discriminator d_portrait{nullptr};
    Discriminator d_rgb{nullptr};

    const Config& config() const { return config_; }

private:
    Config config_;
    std::shared_ptr<const TrainingData> data_;
    double accs_probability_;
    std::int64_t step_ = 0;
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_acc_;
    std::unique_ptr<torch::optim::Adam> opt_d_por_;
    std::unique_ptr<torch::optim::Adam> opt_d_rgb_;
    torch::Tensor fmd_real_;  // [N, 5, R, R]
};

/// Generator-only checkpoint content under "generator/".
Checkpoint generator_checkpoint(const Pomo3DGenerator& generator, const Config& config);
/// Rebuilds a generator from any checkpoint holding "generator/" tensors.
Pomo3DGenerator load_generator(const Checkpoint& ckpt, Config* config_out = nullptr);

}  // namespace pomo3d
