#include "oracles.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <stdexcept>

#include <torch/torch.h>

namespace oracle {

RayComposite composite_ray(const std::vector<double>& sigma, const std::vector<double>& delta,
                           const std::vector<double>& features, int channels) {
    const size_t s = sigma.size();
    RayComposite out;
    out.features.assign(channels, 0.0);
    out.weights.assign(s, 0.0);
    double transmittance = 1.0;
    for (size_t i = 0; i < s; ++i) {
        const double a = 1.0 - std::exp(-sigma[i] * delta[i]);
        const double w = transmittance * a;
        out.weights[i] = w;
        out.alpha += w;
        for (int c = 0; c < channels; ++c) out.features[c] += w * features[i * channels + c];
        transmittance *= 1.0 - a;
    }
    return out;
}

std::vector<double> bilinear(const std::vector<double>& plane, int channels, int height, int width, double u,
                             double v) {
    u = std::clamp(u, -1.0, 1.0);
    v = std::clamp(v, -1.0, 1.0);
    const double px = (u + 1.0) * 0.5 * (width - 1);
    const double py = (v + 1.0) * 0.5 * (height - 1);
    const int x0 = std::min(static_cast<int>(std::floor(px)), width - 1);
    const int y0 = std::min(static_cast<int>(std::floor(py)), height - 1);
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double fx = px - x0, fy = py - y0;
    std::vector<double> out(channels);
    for (int c = 0; c < channels; ++c) {
        auto at = [&](int y, int x) { return plane[(static_cast<size_t>(c) * height + y) * width + x]; };
        out[c] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
    }
    return out;
}

std::vector<double> triplane(const std::vector<double>& planes, int channels, int resolution, double x, double y,
                             double z) {
    const size_t stride = static_cast<size_t>(channels) * resolution * resolution;
    const std::array<std::pair<double, double>, 3> coords{{{x, y}, {x, z}, {z, y}}};
    std::vector<double> sum(channels, 0.0);
    for (int p = 0; p < 3; ++p) {
        std::vector<double> plane(planes.begin() + p * stride, planes.begin() + (p + 1) * stride);
        auto v = bilinear(plane, channels, resolution, resolution, coords[p].first, coords[p].second);
        for (int c = 0; c < channels; ++c) sum[c] += v[c];
    }
    return sum;
}

std::vector<double> softmax(const std::vector<double>& scores) {
    double m = -INFINITY;
    for (double s : scores) m = std::max(m, s);
    std::vector<double> out(scores.size());
    double total = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) total += out[i] = std::exp(scores[i] - m);
    for (auto& v : out) v /= total;
    return out;
}

std::int64_t nearest_row(const std::vector<std::vector<double>>& rows, const std::vector<double>& query) {
    std::int64_t best = -1;
    double best_d = INFINITY;
    for (size_t k = 0; k < rows.size(); ++k) {
        double d = 0.0;
        for (size_t i = 0; i < query.size(); ++i) d += (rows[k][i] - query[i]) * (rows[k][i] - query[i]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::int64_t>(k);
        }
    }
    return best;
}

AlignmentResult confusion_alignment(const pomo3d::LabelMap& pred, const pomo3d::LabelMap& ref, int n_classes) {
    std::vector<std::vector<double>> cm(n_classes, std::vector<double>(n_classes, 0.0));
    for (int r = 0; r < ref.height; ++r)
        for (int c = 0; c < ref.width; ++c) cm[ref.at(r, c)][pred.at(r, c)] += 1.0;
    double total = 0.0, diag = 0.0, iou_sum = 0.0;
    int present = 0;
    for (int i = 0; i < n_classes; ++i) {
        double row = 0.0, col = 0.0;
        for (int j = 0; j < n_classes; ++j) {
            row += cm[i][j];
            col += cm[j][i];
            total += cm[i][j];
        }
        diag += cm[i][i];
        const double uni = row + col - cm[i][i];
        if (uni > 0) {
            iou_sum += cm[i][i] / uni;
            ++present;
        }
    }
    return {present ? iou_sum / present : 0.0, total > 0 ? diag / total : 0.0};
}

double mutual_information(const std::vector<std::vector<double>>& joint) {
    double total = 0.0;
    for (const auto& row : joint)
        for (double v : row) total += v;
    std::vector<double> pa(joint.size(), 0.0), pb(joint[0].size(), 0.0);
    for (size_t i = 0; i < joint.size(); ++i)
        for (size_t j = 0; j < joint[i].size(); ++j) {
            pa[i] += joint[i][j] / total;
            pb[j] += joint[i][j] / total;
        }
    double mi = 0.0;
    for (size_t i = 0; i < joint.size(); ++i)
        for (size_t j = 0; j < joint[i].size(); ++j) {
            const double p = joint[i][j] / total;
            if (p > 0) mi += p * std::log(p / (pa[i] * pb[j]));
        }
    return mi;
}

namespace {

std::vector<std::uint8_t> window_filter(const std::vector<std::uint8_t>& img, int h, int w, int r, bool take_max) {
    std::vector<std::uint8_t> out(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::uint8_t v = take_max ? 0 : 1;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    const std::uint8_t s = (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0 : img[yy * w + xx];
                    v = take_max ? std::max(v, s) : std::min(v, s);
                }
            out[y * w + x] = v;
        }
    return out;
}

}  // namespace

std::vector<std::uint8_t> max_filter(const std::vector<std::uint8_t>& img, int h, int w, int r) {
    return window_filter(img, h, w, r, true);
}

std::vector<std::uint8_t> min_filter(const std::vector<std::uint8_t>& img, int h, int w, int r) {
    return window_filter(img, h, w, r, false);
}

std::vector<int> chebyshev_distance(const std::vector<std::uint8_t>& mask, int h, int w) {
    std::vector<std::pair<int, int>> set;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask[y * w + x]) set.emplace_back(y, x);
    std::vector<int> out(mask.size(), INT_MAX);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (const auto& [yy, xx] : set)
                out[y * w + x] = std::min(out[y * w + x], std::max(std::abs(yy - y), std::abs(xx - x)));
    return out;
}

int texture_reach(int input_radius, int blocks) {
    int r = input_radius;
    for (int b = 0; b < blocks; ++b) r = r < 0 ? 0 : 2 * r + 2;
    return r;
}

std::vector<std::uint8_t> upsample_mask(const std::vector<std::uint8_t>& mask, int h, int w, int levels) {
    const int f = 1 << levels;
    std::vector<std::uint8_t> out(static_cast<size_t>(h) * w * f * f);
    for (int y = 0; y < h * f; ++y)
        for (int x = 0; x < w * f; ++x) out[static_cast<size_t>(y) * w * f + x] = mask[(y / f) * w + x / f];
    return out;
}

std::vector<GradProbe> gradient_probes(const std::function<torch::Tensor()>& loss, torch::Tensor param, int probes,
                                       pomo3d::Rng& rng, double h) {
    if (param.scalar_type() != torch::kFloat64) throw std::invalid_argument("gradient probes need float64");
    auto value = loss();
    auto grad = torch::autograd::grad({value}, {param})[0].contiguous();
    auto flat = param.view(-1);
    std::vector<GradProbe> out;
    // probe entries the loss depends on; untouched entries would pass trivially
    auto live = (grad.view(-1) != 0).nonzero().view(-1);
    for (int i = 0; i < probes; ++i) {
        const auto idx = live.numel() > 0 ? live[rng.uniform_int(live.numel())].item<std::int64_t>()
                                          : rng.uniform_int(flat.numel());
        GradProbe p;
        p.analytic = grad.view(-1)[idx].item<double>();
        double plus, minus;
        {
            torch::NoGradGuard guard;
            const double orig = flat[idx].item<double>();
            flat[idx] = orig + h;
            plus = loss().item<double>();
            flat[idx] = orig - h;
            minus = loss().item<double>();
            flat[idx] = orig;
        }
        p.numeric = (plus - minus) / (2 * h);
        const double scale = std::max({std::abs(p.analytic), std::abs(p.numeric), 1e-6});
        p.rel_error = std::abs(p.analytic - p.numeric) / scale;
        out.push_back(p);
    }
    return out;
}

double max_rel_error(const std::vector<GradProbe>& probes) {
    double m = 0.0;
    for (const auto& p : probes) m = std::max(m, p.rel_error);
    return m;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

std::vector<double> to_vector(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat64).contiguous();
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace oracle
