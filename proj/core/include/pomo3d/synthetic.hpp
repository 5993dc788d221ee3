#pragma once

#include <cstdint>
#include <vector>

#include "pomo3d/pacmask.hpp"

namespace pomo3d {

/// Latent description of a procedural face before rasterization.
struct SyntheticSpec {
    PoseLabel pose;
    AttributeFlags attributes;
    std::vector<AccessoryClass> accessories;
    bool beard = false;
    bool long_hair = false;
    int skin_tone = 0;
    int hair_color = 0;
    int cloth_color = 0;
    int accessory_color = 0;
    double face_scale = 1.0;
};

struct SyntheticOptions {
    int resolution = 128;
    double accessory_incidence = 0.37;
    double multi_accessory_prob = 0.15;
    std::uint64_t seed = 0;
};

/// Draws attributes, pose and accessories. Accessory types are correlated with
/// the gender-related attributes on purpose, so bias reports have signal.
SyntheticSpec draw_synthetic_spec(Rng& rng, const SyntheticOptions& options);

/// Rasterizes a spec into per-class masks and a flat-shaded RGB image.
RawAnnotatedSample rasterize_synthetic(const SyntheticSpec& spec, const std::string& id, int resolution);

/// Sample i of a seeded stream; independent of how many others are drawn.
RawAnnotatedSample synthetic_sample(const SyntheticOptions& options, std::int64_t index);

std::vector<RawAnnotatedSample> make_synthetic_raw(const SyntheticOptions& options, std::int64_t n);

/// Seeded procedural stand-in for the curated dataset. Records carry the
/// synthetic origin (mirrors and duplicates keep their own origins).
PacMaskGroups make_synthetic_dataset(const SyntheticOptions& options, std::int64_t n, const DatasetConfig& config,
                                     const BuildOptions& build);

}  // namespace pomo3d
