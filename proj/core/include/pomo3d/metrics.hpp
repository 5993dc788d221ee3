#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

#include "pomo3d/image_io.hpp"

namespace pomo3d {

/// N x D embeddings plus the identifier of the embedder that produced them.
struct EmbeddingSet {
    torch::Tensor vectors;  // [N, D], converted to float64 for statistics
    std::string embedder_id;

    std::int64_t size() const { return vectors.size(0); }
    std::int64_t dim() const { return vectors.size(1); }
};

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The square root is taken
/// as S_a^{1/2} S_b S_a^{1/2} through symmetric eigendecompositions, with
/// negative eigenvalues clamped to zero. Throws InvalidInput for N < 2,
/// mismatched dimensions or embedders.
double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b);

/// Unbiased MMD^2 with the kernel k(x, y) = (x.y / D + 1)^3. Raw value; papers
/// usually print it x1e3.
double kernel_distance(const EmbeddingSet& a, const EmbeddingSet& b);
constexpr double kKidReportScale = 1e3;

struct Alignment {
    double miou = 0.0;
    double acc = 0.0;
};

/// Confusion-matrix mIoU over classes present in either map, and pixel accuracy.
Alignment alignment(const LabelMap& pred, const LabelMap& ref, int n_classes);

/// Mean pairwise cosine similarity of the rows of `embeddings` ([P, D], P >= 2).
double mean_pairwise_cosine(const torch::Tensor& embeddings);

/// Mean distance over pairs; `distance` is evaluated once per pair in order.
double mean_pair_distance(std::int64_t n_pairs, const std::function<double(std::int64_t)>& distance);

/// Fraction of differing labels.
double normalized_hamming(const LabelMap& a, const LabelMap& b);

/// Distance between two soft segmaps [C, H, W]: mean squared difference of
/// unit-normalized local patch features (3x3 average pooling at two scales).
double patch_feature_distance(const torch::Tensor& a, const torch::Tensor& b);

/// Fixed random-projection conv embedder standing in for Inception/ArcFace.
/// Weights are a function of (seed, in_channels) only; id() names that pair.
class ProxyEmbedder {
public:
    ProxyEmbedder(std::uint64_t seed, int in_channels, int width = 32);

    /// x: [N, C, H, W] -> [N, 2 * width] (spatially pooled mean and std).
    torch::Tensor embed(const torch::Tensor& x) const;
    const std::string& id() const { return id_; }

private:
    std::string id_;
    std::vector<torch::Tensor> weights_;
};

}  // namespace pomo3d
