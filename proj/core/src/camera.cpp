#include "pomo3d/camera.hpp"

#include <cmath>

#include <torch/torch.h>

#include "pomo3d/config.hpp"
#include "pomo3d/errors.hpp"

namespace pomo3d {
namespace {

using Vec3 = std::array<double, 3>;

Vec3 normalized(Vec3 v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

CameraPose CameraPose::orbit(double yaw, double pitch, double radius, double focal) {
    const Vec3 position{radius * std::sin(yaw) * std::cos(pitch), radius * std::sin(pitch),
                        radius * std::cos(yaw) * std::cos(pitch)};
    const Vec3 forward = normalized({-position[0], -position[1], -position[2]});
    const Vec3 right = normalized(cross(forward, {0.0, 1.0, 0.0}));
    const Vec3 down = cross(forward, right);

    CameraPose pose;
    for (int r = 0; r < 3; ++r) {
        pose.extrinsics[r * 4 + 0] = right[r];
        pose.extrinsics[r * 4 + 1] = down[r];
        pose.extrinsics[r * 4 + 2] = forward[r];
        pose.extrinsics[r * 4 + 3] = position[r];
    }
    pose.extrinsics[15] = 1.0;
    pose.intrinsics = {focal, 0.0, 0.5, 0.0, focal, 0.5, 0.0, 0.0, 1.0};
    return pose;
}

CameraPose CameraPose::orbit(double yaw, double pitch, const RenderConfig& render) {
    return orbit(yaw, pitch, render.camera_radius, render.focal);
}

std::array<double, 25> CameraPose::conditioning() const {
    std::array<double, 25> out{};
    std::copy(extrinsics.begin(), extrinsics.end(), out.begin());
    std::copy(intrinsics.begin(), intrinsics.end(), out.begin() + 16);
    return out;
}

CameraPose CameraPose::mirrored() const {
    // Reflect world x and camera x: M = diag(-1,1,1) R diag(-1,1,1), t' = diag(-1,1,1) t.
    CameraPose m = *this;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            const double sign = ((r == 0) != (c == 0)) ? -1.0 : 1.0;
            m.extrinsics[r * 4 + c] = extrinsics[r * 4 + c] * sign;
        }
    }
    return m;
}

void CameraPose::validate() const {
    constexpr double tol = 1e-5;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += rotation(k, i) * rotation(k, j);
            if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol || !std::isfinite(dot)) {
                throw InvalidInput("camera extrinsics rotation is not orthonormal");
            }
        }
    }
    const double det = rotation(0, 0) * (rotation(1, 1) * rotation(2, 2) - rotation(1, 2) * rotation(2, 1)) -
                       rotation(0, 1) * (rotation(1, 0) * rotation(2, 2) - rotation(1, 2) * rotation(2, 0)) +
                       rotation(0, 2) * (rotation(1, 0) * rotation(2, 1) - rotation(1, 1) * rotation(2, 0));
    if (std::abs(det - 1.0) > tol) throw InvalidInput("camera extrinsics rotation is a reflection");
    if (extrinsics[12] != 0.0 || extrinsics[13] != 0.0 || extrinsics[14] != 0.0 || extrinsics[15] != 1.0) {
        throw InvalidInput("camera extrinsics bottom row must be (0,0,0,1)");
    }
    for (int r = 0; r < 3; ++r) {
        if (!std::isfinite(translation(r))) throw InvalidInput("camera translation is not finite");
    }
    if (!(intrinsics[0] > 0.0) || !(intrinsics[4] > 0.0)) throw InvalidInput("camera focal lengths must be positive");
}

torch::Tensor conditioning_tensor(std::span<const CameraPose> poses, torch::Dtype dtype) {
    auto out = torch::empty({static_cast<long>(poses.size()), 25}, torch::kFloat64);
    auto acc = out.accessor<double, 2>();
    for (size_t b = 0; b < poses.size(); ++b) {
        const auto c = poses[b].conditioning();
        for (int i = 0; i < 25; ++i) acc[b][i] = c[i];
    }
    return out.to(dtype);
}

RayBundle generate_rays(std::span<const CameraPose> poses, int resolution, torch::Dtype dtype) {
    const long batch = static_cast<long>(poses.size());
    const long n = static_cast<long>(resolution) * resolution;
    auto origins = torch::empty({batch, n, 3}, torch::kFloat64);
    auto directions = torch::empty({batch, n, 3}, torch::kFloat64);
    auto o = origins.accessor<double, 3>();
    auto d = directions.accessor<double, 3>();
    for (long b = 0; b < batch; ++b) {
        const CameraPose& pose = poses[b];
        pose.validate();
        const double fx = pose.intrinsics[0], fy = pose.intrinsics[4];
        const double cx = pose.intrinsics[2], cy = pose.intrinsics[5];
        for (int i = 0; i < resolution; ++i) {
            for (int j = 0; j < resolution; ++j) {
                const double u = (j + 0.5) / resolution;
                const double v = (i + 0.5) / resolution;
                const Vec3 cam{(u - cx) / fx, (v - cy) / fy, 1.0};
                Vec3 world{};
                for (int r = 0; r < 3; ++r) {
                    world[r] = pose.rotation(r, 0) * cam[0] + pose.rotation(r, 1) * cam[1] + pose.rotation(r, 2) * cam[2];
                }
                world = normalized(world);
                const long k = static_cast<long>(i) * resolution + j;
                for (int r = 0; r < 3; ++r) {
                    o[b][k][r] = pose.translation(r);
                    d[b][k][r] = world[r];
                }
            }
        }
    }
    return {origins.to(dtype), directions.to(dtype)};
}

}  // namespace pomo3d
