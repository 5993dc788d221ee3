#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/optim/adam.h>
#include <torch/types.h>

#include "pomo3d/checkpoint.hpp"
#include "pomo3d/generator.hpp"
#include "pomo3d/image_io.hpp"
#include "pomo3d/layers.hpp"

namespace pomo3d {

class TrainingData;

enum class ScribbleProvenance : std::uint8_t { Dataset, Generated, HandDrawn };

/// Accessory-class label map at render resolution.
struct ScribbleMap {
    LabelMap labels;
    ScribbleProvenance provenance = ScribbleProvenance::HandDrawn;

    /// Throws InvalidInput for ids outside the accessory class set.
    void validate() const;
};

/// [B, 5, R, R] one-hot batch.
torch::Tensor scribble_tensor(std::span<const ScribbleMap> scribbles);

/// Morphological dilation / erosion of every accessory class with a square
/// (2r+1) structuring element. Dilation never overwrites existing foreground.
LabelMap dilate_labels(const LabelMap& labels, int radius);
LabelMap erode_labels(const LabelMap& labels, int radius);

/// Erosion or dilation with equal probability, radius uniform in [1, max_radius].
ScribbleMap augment_scribble(const ScribbleMap& scribble, Rng& rng, int max_radius);

/// Scribble stream (two convolutions) plus 1x1 projection of f_por, added
/// element-wise, then strided convolutions and an MLP head.
class ScribbleEncoderImpl : public torch::nn::Module {
public:
    ScribbleEncoderImpl(int feature_channels, int resolution, int channels, int code_dim);

    /// scribble: [B, 5, R, R]; f_por: [B, C_f, R, R]. Returns [B, code_dim].
    torch::Tensor forward(const torch::Tensor& scribble, const torch::Tensor& f_por);

    int code_dim() const { return code_dim_; }

private:
    int feature_channels_;
    int resolution_;
    int code_dim_;
    nn::EqualConv2d scribble_a_{nullptr};
    nn::EqualConv2d scribble_b_{nullptr};
    nn::EqualConv2d feature_proj_{nullptr};
    torch::nn::ModuleList down_;
    nn::EqualLinear head_a_{nullptr};
    nn::EqualLinear head_b_{nullptr};
};
TORCH_MODULE(ScribbleEncoder);

struct Quantized {
    torch::Tensor straight_through;  // sg(e) + (w - sg(w)): forward value e, gradient to w
    torch::Tensor entries;           // exact codebook rows [B, D]
    torch::Tensor indices;           // [B] int64
    torch::Tensor distances;         // [B, K] squared L2
};

/// K learned accessory geometry codes with per-entry usage bookkeeping.
class AccessoryCodebookImpl : public torch::nn::Module {
public:
    AccessoryCodebookImpl(int size, int dim);

    /// Nearest entry under squared L2; ties go to the lowest index.
    Quantized quantize(const torch::Tensor& w) const;

    /// ||sg(e) - w||^2 + ||e - sg(w)||^2, batch mean.
    torch::Tensor commitment_loss(const torch::Tensor& w, const Quantized& q) const;

    void mark_used(const torch::Tensor& indices, std::int64_t step);
    /// Replaces entries unused for `patience` steps with rows of `candidates`.
    /// Returns the number of entries re-seeded.
    int reseed_dead(const torch::Tensor& candidates, std::int64_t step, std::int64_t patience, Rng& rng);

    std::int64_t size() const { return entries.size(0); }
    std::int64_t dim() const { return entries.size(1); }

    torch::Tensor entries;    // [K, D] parameter
    torch::Tensor last_used;  // [K] int64 buffer
};
TORCH_MODULE(AccessoryCodebook);

/// Cross-entropy of accessory logits [B, 5, R, R] against labels [B, R, R].
torch::Tensor reconstruction_loss(const torch::Tensor& logits, const torch::Tensor& labels);
/// Smooth-L1 (transition at 1), mean over elements.
torch::Tensor latent_loss(const torch::Tensor& w, const torch::Tensor& w_hat);

struct ScribbleLosses {
    double recon = 0.0;
    double commitment = 0.0;
    double latent = 0.0;
    double total = 0.0;
    int reseeded = 0;
};

/// Trains encoder and codebook through the frozen accessory branch with the
/// segmap cycle (a) and the latent cycle (b).
class ScribbleTrainer {
public:
    /// `data` may be null; path (a) then uses segmaps produced by the generator.
    ScribbleTrainer(Pomo3DGenerator generator, const Config& config, std::shared_ptr<const TrainingData> data);

    ScribbleLosses step();
    std::int64_t current_step() const { return step_; }

    Checkpoint state();
    void load_state(const Checkpoint& ckpt);

    ScribbleEncoder encoder{nullptr};
    AccessoryCodebook codebook{nullptr};

private:
    Pomo3DGenerator generator_;
    Config config_;
    std::shared_ptr<const TrainingData> data_;
    std::unique_ptr<torch::optim::Adam> optimizer_;
    std::int64_t step_ = 0;
};

/// Codebook initialised from identity-uncorrelated accessory codes of the mapper.
void init_codebook_from_mapper(AccessoryCodebook& codebook, Pomo3DGenerator& generator, Rng& rng);

struct ScribbleInversion {
    torch::Tensor code;  // [1, d_w], an exact codebook row
    std::int64_t index = 0;
    torch::Tensor pre_quantization;
};

/// Inference: encode, then snap to the nearest codebook entry.
ScribbleInversion invert_scribble(ScribbleEncoder& encoder, const AccessoryCodebook& codebook,
                                  const ScribbleMap& scribble, const ProjectedFeatures& f_por);

void store_scribble_modules(Checkpoint& ckpt, ScribbleEncoder& encoder, AccessoryCodebook& codebook);
/// Builds encoder + codebook matching `config` and restores them from "scribble/".
std::pair<ScribbleEncoder, AccessoryCodebook> load_scribble_modules(const Checkpoint& ckpt, const Config& config);

}  // namespace pomo3d
