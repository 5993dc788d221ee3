#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace pomo3d {

struct LatentConfig {
    int d_z = 128;
    int d_w = 64;
    double p_identity = 0.75;
    int n_identity_tokens = 4;
    int mapping_layers = 2;
    double mapping_lr_mul = 0.01;
};

struct GeometryConfig {
    int plane_channels = 16;
    int plane_resolution = 64;
    /// Modulated convolutions per resolution block of the tri-plane backbone.
    int backbone_depth = 2;
    int backbone_channels = 64;
};

struct RenderConfig {
    int n_samples = 12;
    /// Side length of the projected feature images and semantic maps.
    int resolution = 32;
    double near = 2.25;
    double far = 3.3;
    int feature_channels = 32;
    int decoder_hidden = 32;
    int classifier_hidden = 64;
    double camera_radius = 2.7;
    double focal = 4.2647;
    /// Half side length of the world-space box mapped onto [-1,1]^3.
    double box_half_extent = 0.5;
    std::uint64_t jitter_seed = 7;
};

struct TextureConfig {
    int n_blocks = 2;
    int base_channels = 32;
    int fused_channels = 16;
    int spade_hidden = 32;
    double decorative_prob = 0.5;
};

struct TrainConfig {
    int batch = 4;
    double lr = 2.5e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double r1_gamma = 1.0;
    int r1_interval = 16;
    int pretrain_steps = 500;
    int total_steps = 20000;
    /// Probability of Accs == true. Negative means "take it from dataset statistics".
    double accs_probability = -1.0;
    int disc_channels = 32;
    std::uint64_t seed = 1;
    int log_interval = 10;
    int fmd_interval = 500;
    int fmd_samples = 128;
    int checkpoint_interval = 1000;
    int threads = 1;
};

struct ScribbleConfig {
    int codebook_size = 64;
    int encoder_channels = 32;
    double alpha = 0.25;
    double beta = 1.0;
    int dead_code_steps = 1000;
    int max_morph_radius = 2;
    double lr = 1e-3;
    int batch = 4;
};

struct DatasetConfig {
    double balance_ratio = 0.5;
    double accessory_incidence = 0.37;
    double multi_accessory_prob = 0.15;
};

struct EvalConfig {
    int fid_segmaps = 200;
    int fid_textures = 3;
    int alignment_pairs = 100;
    int fvid_identities = 20;
    int fvid_poses = 8;
    int sig_pairs = 100;
    int fmd_samples = 256;
    std::uint64_t embedder_seed = 1234;
    std::uint64_t seed = 99;
};

/// Full model + pipeline configuration. Every field has a desk-scale default;
/// presets and JSON files override subsets of it.
struct Config {
    std::string preset = "desk";
    LatentConfig latent;
    GeometryConfig geometry;
    RenderConfig render;
    TextureConfig texture;
    TrainConfig train;
    ScribbleConfig scribble;
    DatasetConfig dataset;
    EvalConfig eval;

    int output_resolution() const { return render.resolution << texture.n_blocks; }

    /// Throws ConfigError on inconsistent values.
    void validate() const;

    static Config preset_named(const std::string& name);
    static Config desk() { return preset_named("desk"); }
    static Config paper() { return preset_named("paper"); }
    static Config reduced() { return preset_named("reduced"); }
};

nlohmann::json to_json(const Config& config);
/// Applies the keys present in `j` on top of `base`; unknown keys are rejected.
Config apply_json(Config base, const nlohmann::json& j);
Config load_config(const std::filesystem::path& path, const std::string& preset);

}  // namespace pomo3d
