#include "pomo3d/config.hpp"

#include <fstream>
#include <set>

#include "pomo3d/errors.hpp"

namespace pomo3d {
namespace {

// Visits every (section, key, field) triple. Keeping the table in one place
// means serialization and override parsing cannot drift apart.
template <class C, class F>
void visit_fields(C& c, F&& f) {
    f("latent", "d_z", c.latent.d_z);
    f("latent", "d_w", c.latent.d_w);
    f("latent", "p_identity", c.latent.p_identity);
    f("latent", "n_identity_tokens", c.latent.n_identity_tokens);
    f("latent", "mapping_layers", c.latent.mapping_layers);
    f("latent", "mapping_lr_mul", c.latent.mapping_lr_mul);

    f("geometry", "plane_channels", c.geometry.plane_channels);
    f("geometry", "plane_resolution", c.geometry.plane_resolution);
    f("geometry", "backbone_depth", c.geometry.backbone_depth);
    f("geometry", "backbone_channels", c.geometry.backbone_channels);

    f("render", "n_samples", c.render.n_samples);
    f("render", "resolution", c.render.resolution);
    f("render", "near", c.render.near);
    f("render", "far", c.render.far);
    f("render", "feature_channels", c.render.feature_channels);
    f("render", "decoder_hidden", c.render.decoder_hidden);
    f("render", "classifier_hidden", c.render.classifier_hidden);
    f("render", "camera_radius", c.render.camera_radius);
    f("render", "focal", c.render.focal);
    f("render", "box_half_extent", c.render.box_half_extent);
    f("render", "jitter_seed", c.render.jitter_seed);

    f("texture", "n_blocks", c.texture.n_blocks);
    f("texture", "base_channels", c.texture.base_channels);
    f("texture", "fused_channels", c.texture.fused_channels);
    f("texture", "spade_hidden", c.texture.spade_hidden);
    f("texture", "decorative_prob", c.texture.decorative_prob);

    f("train", "batch", c.train.batch);
    f("train", "lr", c.train.lr);
    f("train", "beta1", c.train.beta1);
    f("train", "beta2", c.train.beta2);
    f("train", "r1_gamma", c.train.r1_gamma);
    f("train", "r1_interval", c.train.r1_interval);
    f("train", "pretrain_steps", c.train.pretrain_steps);
    f("train", "total_steps", c.train.total_steps);
    f("train", "accs_probability", c.train.accs_probability);
    f("train", "disc_channels", c.train.disc_channels);
    f("train", "seed", c.train.seed);
    f("train", "log_interval", c.train.log_interval);
    f("train", "fmd_interval", c.train.fmd_interval);
    f("train", "fmd_samples", c.train.fmd_samples);
    f("train", "checkpoint_interval", c.train.checkpoint_interval);
    f("train", "threads", c.train.threads);

    f("scribble", "codebook_size", c.scribble.codebook_size);
    f("scribble", "encoder_channels", c.scribble.encoder_channels);
    f("scribble", "alpha", c.scribble.alpha);
    f("scribble", "beta", c.scribble.beta);
    f("scribble", "dead_code_steps", c.scribble.dead_code_steps);
    f("scribble", "max_morph_radius", c.scribble.max_morph_radius);
    f("scribble", "lr", c.scribble.lr);
    f("scribble", "batch", c.scribble.batch);

    f("dataset", "balance_ratio", c.dataset.balance_ratio);
    f("dataset", "accessory_incidence", c.dataset.accessory_incidence);
    f("dataset", "multi_accessory_prob", c.dataset.multi_accessory_prob);

    f("eval", "fid_segmaps", c.eval.fid_segmaps);
    f("eval", "fid_textures", c.eval.fid_textures);
    f("eval", "alignment_pairs", c.eval.alignment_pairs);
    f("eval", "fvid_identities", c.eval.fvid_identities);
    f("eval", "fvid_poses", c.eval.fvid_poses);
    f("eval", "sig_pairs", c.eval.sig_pairs);
    f("eval", "fmd_samples", c.eval.fmd_samples);
    f("eval", "embedder_seed", c.eval.embedder_seed);
    f("eval", "seed", c.eval.seed);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
}

}  // namespace

void Config::validate() const {
    require(latent.d_z > 0 && latent.d_w > 0, "latent dims must be positive");
    require(latent.p_identity >= 0.0 && latent.p_identity <= 1.0, "latent.p_identity outside [0,1]");
    require(latent.n_identity_tokens >= 1, "latent.n_identity_tokens < 1");
    require(latent.mapping_layers >= 1, "latent.mapping_layers < 1");
    require(geometry.plane_channels > 0, "geometry.plane_channels");
    require(geometry.plane_resolution >= 8 && (geometry.plane_resolution & (geometry.plane_resolution - 1)) == 0,
            "geometry.plane_resolution must be a power of two >= 8");
    require(geometry.backbone_depth >= 1, "geometry.backbone_depth < 1");
    require(render.n_samples >= 2, "render.n_samples < 2");
    require(render.resolution >= 4 && render.resolution % 4 == 0, "render.resolution must be a multiple of 4");
    require(render.near > 0.0 && render.far > render.near, "render.near/far");
    require(texture.n_blocks >= 1, "texture.n_blocks < 1");
    require(texture.decorative_prob >= 0.0 && texture.decorative_prob <= 1.0, "texture.decorative_prob");
    require(train.batch >= 1, "train.batch < 1");
    require(train.accs_probability <= 1.0, "train.accs_probability > 1");
    require(train.r1_interval >= 1, "train.r1_interval < 1");
    require(scribble.codebook_size >= 2, "scribble.codebook_size < 2");
    require(dataset.balance_ratio >= 0.0 && dataset.balance_ratio <= 1.0, "dataset.balance_ratio");
}

Config Config::preset_named(const std::string& name) {
    Config c;
    c.preset = name;
    if (name == "desk") {
        return c;
    }
    if (name == "paper") {
        c.latent.d_z = 512;
        c.latent.d_w = 256;
        c.geometry.plane_channels = 32;
        c.geometry.plane_resolution = 256;
        c.geometry.backbone_channels = 256;
        c.render.resolution = 128;
        c.render.feature_channels = 64;
        c.render.n_samples = 48;
        c.texture.fused_channels = 32;
        c.texture.base_channels = 128;
        c.texture.n_blocks = 2;
        c.train.batch = 16;
        c.train.lr = 2.5e-3;
        c.scribble.codebook_size = 512;
        c.eval.fid_segmaps = 2000;
        c.eval.fid_textures = 10;
        c.eval.alignment_pairs = 1000;
        c.eval.fvid_identities = 100;
        c.eval.fvid_poses = 12;
        c.eval.sig_pairs = 1000;
        c.eval.fmd_samples = 10000;
        return c;
    }
    if (name == "reduced") {
        c.latent.d_z = 64;
        c.latent.d_w = 32;
        c.geometry.plane_channels = 8;
        c.geometry.plane_resolution = 32;
        c.geometry.backbone_channels = 32;
        c.geometry.backbone_depth = 1;
        c.render.resolution = 16;
        c.render.n_samples = 8;
        c.render.feature_channels = 16;
        c.render.decoder_hidden = 32;
        c.render.classifier_hidden = 32;
        c.texture.n_blocks = 1;
        c.texture.base_channels = 16;
        c.texture.fused_channels = 8;
        c.texture.spade_hidden = 16;
        c.train.disc_channels = 16;
        c.train.pretrain_steps = 300;
        c.train.total_steps = 2000;
        c.scribble.encoder_channels = 16;
        c.eval.fid_segmaps = 64;
        c.eval.fid_textures = 2;
        c.eval.alignment_pairs = 32;
        c.eval.fvid_identities = 8;
        c.eval.fvid_poses = 4;
        c.eval.sig_pairs = 32;
        c.eval.fmd_samples = 256;
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (expected desk, paper or reduced)");
}

nlohmann::json to_json(const Config& config) {
    nlohmann::json j;
    j["preset"] = config.preset;
    visit_fields(config, [&](const char* section, const char* key, const auto& value) {
        j[section][key] = value;
    });
    return j;
}

Config apply_json(Config base, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    std::set<std::string> known;
    std::set<std::string> sections;
    try {
        visit_fields(base, [&](const char* section, const char* key, auto& value) {
            known.insert(std::string(section) + "." + key);
            sections.insert(section);
            auto s = j.find(section);
            if (s == j.end()) return;
            auto k = s->find(key);
            if (k == s->end()) return;
            k->get_to(value);
        });
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config type error: ") + e.what());
    }
    for (const auto& [section, body] : j.items()) {
        if (section == "preset") {
            base.preset = body.get<std::string>();
            continue;
        }
        if (!sections.count(section)) throw ConfigError("unknown config section '" + section + "'");
        for (const auto& [key, _] : body.items()) {
            if (!known.count(section + "." + key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
        }
    }
    base.validate();
    return base;
}

Config load_config(const std::filesystem::path& path, const std::string& preset) {
    Config base = Config::preset_named(preset);
    if (path.empty()) return base;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
    Config c = apply_json(base, j);
    c.preset = preset;
    return c;
}

}  // namespace pomo3d
