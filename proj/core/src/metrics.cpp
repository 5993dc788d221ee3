#include "pomo3d/metrics.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "pomo3d/errors.hpp"
#include "pomo3d/rng.hpp"

namespace pomo3d {
namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix to_eigen(const torch::Tensor& t) {
    auto d = t.detach().to(torch::kFloat64).contiguous();
    const auto n = d.size(0), k = d.size(1);
    Matrix m(n, k);
    const double* p = d.data_ptr<double>();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < k; ++j) m(i, j) = p[i * k + j];
    }
    return m;
}

void check_pair(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.vectors.dim() != 2 || b.vectors.dim() != 2) throw InvalidInput("embedding sets must be N x D");
    if (a.size() < 2 || b.size() < 2) throw InvalidInput("at least two embeddings are needed per set");
    if (a.dim() != b.dim()) throw InvalidInput("embedding dimensions differ");
    if (a.embedder_id != b.embedder_id) throw InvalidInput("embedding sets come from different embedders");
}

Matrix covariance(const Matrix& x, const Vector& mean) {
    Matrix centered = x.rowwise() - mean.transpose();
    return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

Matrix sym_sqrt(const Matrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (s + s.transpose()));
    Vector vals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b) {
    check_pair(a, b);
    const Matrix xa = to_eigen(a.vectors), xb = to_eigen(b.vectors);
    const Vector ma = xa.colwise().mean(), mb = xb.colwise().mean();
    const Matrix sa = covariance(xa, ma), sb = covariance(xb, mb);
    const Matrix ra = sym_sqrt(sa);
    Matrix inner = ra * sb * ra;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    return (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

double kernel_distance(const EmbeddingSet& a, const EmbeddingSet& b) {
    check_pair(a, b);
    const Matrix xa = to_eigen(a.vectors), xb = to_eigen(b.vectors);
    const double d = static_cast<double>(xa.cols());
    auto kernel = [d](const Matrix& x, const Matrix& y) {
        Matrix k = (x * y.transpose()).array() / d + 1.0;
        return Matrix(k.array().cube());
    };
    const Matrix kaa = kernel(xa, xa), kbb = kernel(xb, xb), kab = kernel(xa, xb);
    const double m = static_cast<double>(xa.rows()), n = static_cast<double>(xb.rows());
    const double saa = (kaa.sum() - kaa.trace()) / (m * (m - 1));
    const double sbb = (kbb.sum() - kbb.trace()) / (n * (n - 1));
    const double sab = kab.sum() / (m * n);
    return saa + sbb - 2.0 * sab;
}

Alignment alignment(const LabelMap& pred, const LabelMap& ref, int n_classes) {
    if (pred.height != ref.height || pred.width != ref.width) throw InvalidInput("label maps differ in resolution");
    std::vector<std::int64_t> confusion(static_cast<size_t>(n_classes) * n_classes, 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        const int p = pred.labels[i], r = ref.labels[i];
        if (p >= n_classes || r >= n_classes) throw InvalidInput("label id outside the class set");
        ++confusion[static_cast<size_t>(r) * n_classes + p];
    }
    std::int64_t correct = 0, total = 0;
    double iou_sum = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::int64_t tp = confusion[static_cast<size_t>(c) * n_classes + c], row = 0, col = 0;
        for (int k = 0; k < n_classes; ++k) {
            row += confusion[static_cast<size_t>(c) * n_classes + k];
            col += confusion[static_cast<size_t>(k) * n_classes + c];
        }
        correct += tp;
        total += row;
        const std::int64_t uni = row + col - tp;
        if (uni > 0) {
            iou_sum += static_cast<double>(tp) / static_cast<double>(uni);
            ++present;
        }
    }
    Alignment out;
    out.acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    out.miou = present ? iou_sum / present : 0.0;
    return out;
}

double mean_pairwise_cosine(const torch::Tensor& embeddings) {
    if (embeddings.dim() != 2 || embeddings.size(0) < 2) throw InvalidInput("need at least two embeddings");
    auto e = embeddings.detach().to(torch::kFloat64);
    e = e / e.norm(2, 1, true).clamp_min(1e-300);
    auto sim = torch::mm(e, e.t());
    const auto p = e.size(0);
    double sum = 0.0;
    std::int64_t count = 0;
    auto acc = sim.accessor<double, 2>();
    for (std::int64_t i = 0; i < p; ++i) {
        for (std::int64_t j = i + 1; j < p; ++j) {
            sum += acc[i][j];
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

double mean_pair_distance(std::int64_t n_pairs, const std::function<double(std::int64_t)>& distance) {
    if (n_pairs < 1) throw InvalidInput("at least one pair is required");
    double sum = 0.0;
    for (std::int64_t i = 0; i < n_pairs; ++i) sum += distance(i);
    return sum / static_cast<double>(n_pairs);
}

double normalized_hamming(const LabelMap& a, const LabelMap& b) {
    if (a.height != b.height || a.width != b.width) throw InvalidInput("label maps differ in resolution");
    if (a.size() == 0) return 0.0;
    std::int64_t diff = 0;
    for (size_t i = 0; i < a.size(); ++i) diff += a.labels[i] != b.labels[i];
    return static_cast<double>(diff) / static_cast<double>(a.size());
}

double patch_feature_distance(const torch::Tensor& a, const torch::Tensor& b) {
    namespace F = torch::nn::functional;
    if (!a.sizes().equals(b.sizes()) || a.dim() != 3) throw InvalidInput("segmaps must share a [C, H, W] shape");
    double total = 0.0;
    auto xa = a.detach().to(torch::kFloat64).unsqueeze(0), xb = b.detach().to(torch::kFloat64).unsqueeze(0);
    for (int scale = 0; scale < 2; ++scale) {
        auto opts = F::AvgPool2dFuncOptions(3).stride(1).padding(1).count_include_pad(false);
        auto fa = F::avg_pool2d(xa, opts), fb = F::avg_pool2d(xb, opts);
        fa = fa / fa.norm(2, 1, true).clamp_min(1e-10);
        fb = fb / fb.norm(2, 1, true).clamp_min(1e-10);
        total += (fa - fb).square().sum(1).mean().item<double>();
        if (xa.size(2) >= 4) {
            xa = F::avg_pool2d(xa, F::AvgPool2dFuncOptions(2));
            xb = F::avg_pool2d(xb, F::AvgPool2dFuncOptions(2));
        }
    }
    return total / 2.0;
}

ProxyEmbedder::ProxyEmbedder(std::uint64_t seed, int in_channels, int width) {
    Rng rng(mix_seed(seed ^ (static_cast<std::uint64_t>(in_channels) << 32)));
    weights_.push_back(rng.normal({width, in_channels, 3, 3}, torch::kFloat64) / std::sqrt(9.0 * in_channels));
    weights_.push_back(rng.normal({width, width, 3, 3}, torch::kFloat64) / std::sqrt(9.0 * width));
    weights_.push_back(rng.normal({width, width, 3, 3}, torch::kFloat64) / std::sqrt(9.0 * width));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "proxy-conv3-w%d-c%d-s%llu", width, in_channels, static_cast<unsigned long long>(seed));
    id_ = buf;
}

torch::Tensor ProxyEmbedder::embed(const torch::Tensor& x) const {
    namespace F = torch::nn::functional;
    torch::NoGradGuard guard;
    auto h = x.detach().to(torch::kFloat64);
    for (size_t i = 0; i < weights_.size(); ++i) {
        h = F::conv2d(h, weights_[i], F::Conv2dFuncOptions().stride(2).padding(1));
        h = torch::relu(h);
    }
    auto mean = h.mean({2, 3});
    auto std = (h.square().mean({2, 3}) - mean.square()).clamp_min(0.0).sqrt();
    return torch::cat({mean, std}, 1);
}

}  // namespace pomo3d
