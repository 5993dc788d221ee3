#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "pomo3d/discriminator.hpp"
#include "pomo3d/generator.hpp"
#include "pomo3d/metrics.hpp"
#include "pomo3d/pacmask.hpp"

namespace pomo3d {

struct MetricValue {
    double value = 0.0;
    std::int64_t samples = 0;
    std::string embedder;
};

struct MetricReport {
    MetricValue fid, kid, fmd, miou, acc, fvid, sig_diversity;
    /// Raw KID values; multiply by kKidReportScale for the customary presentation.
    nlohmann::json to_json() const;
};

/// Nearest-colour stand-in for a face-parsing network: one mean colour per
/// portrait class, fitted on RGB and portrait records of the same source.
class ColorSegmenter {
public:
    /// Throws ConfigError when no paired records exist.
    static ColorSegmenter fit(const PacMaskGroups& groups, int resolution);
    /// Area-resamples to the fitted resolution, then labels every pixel.
    LabelMap segment(const RgbImage& image) const;
    int resolution() const { return resolution_; }

private:
    int resolution_ = 0;
    std::vector<int> classes_;
    std::vector<std::array<double, 3>> centroids_;
};

/// Poses on a yaw arc in [-max_yaw, max_yaw] at zero pitch.
std::vector<CameraPose> evaluation_poses(int n, const RenderConfig& render, double max_yaw = 0.5);

/// Mean pairwise cosine similarity of proxy embeddings of one identity rendered
/// at every pose, without accessories. Needs at least two poses.
double fvid(Pomo3DGenerator& generator, const torch::Tensor& w_por_g, const torch::Tensor& w_por_t,
            std::span<const CameraPose> poses, const ProxyEmbedder& embedder);

/// Distance between two accessory probability maps [5, R, R].
using SegmapDistance = std::function<double(const torch::Tensor&, const torch::Tensor&)>;

/// Per pair: two identity-uncorrelated accessory codes from `rng` for the fixed
/// portrait code, rendered frontally; returns the mean distance.
double sig_diversity(Pomo3DGenerator& generator, const torch::Tensor& w_por_g, std::int64_t n_pairs, Rng& rng,
                     const SegmapDistance& distance = patch_feature_distance);

/// Full desk evaluation against a PAC-Mask directory's records. With no mask
/// embedder, FMD falls back to a proxy embedder over 5-channel maps.
MetricReport evaluate(Pomo3DGenerator& generator, const Config& config, const PacMaskGroups& dataset,
                      Discriminator* mask_embedder = nullptr);

}  // namespace pomo3d
