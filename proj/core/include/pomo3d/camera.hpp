#pragma once

#include <array>
#include <span>
#include <vector>

#include <torch/types.h>

namespace pomo3d {

struct RenderConfig;

/// Pinhole camera: 4x4 camera-to-world matrix (OpenCV axes: x right, y down,
/// z forward) and 3x3 intrinsics in normalized image coordinates.
struct CameraPose {
    std::array<double, 16> extrinsics{};  // row-major
    std::array<double, 9> intrinsics{};   // row-major

    /// Orbit camera looking at the origin. Yaw rotates about the world up axis,
    /// pitch raises the camera; both in radians.
    static CameraPose orbit(double yaw, double pitch, double radius, double focal);
    static CameraPose orbit(double yaw, double pitch, const RenderConfig& render);
    static CameraPose frontal(const RenderConfig& render) { return orbit(0.0, 0.0, render); }

    /// Flattened 16 extrinsic + 9 intrinsic entries.
    std::array<double, 25> conditioning() const;

    /// Same camera reflected through the x = 0 plane.
    CameraPose mirrored() const;

    /// Throws InvalidInput unless the rotation block is orthonormal with det +1
    /// (within 1e-5), the bottom row is (0,0,0,1) and focal entries are positive.
    void validate() const;

    double rotation(int r, int c) const { return extrinsics[r * 4 + c]; }
    double translation(int r) const { return extrinsics[r * 4 + 3]; }

    bool operator==(const CameraPose&) const = default;
};

/// [B, 25] float tensor of conditioning vectors.
torch::Tensor conditioning_tensor(std::span<const CameraPose> poses, torch::Dtype dtype = torch::kFloat32);

/// Rays through pixel centers of a res x res image.
struct RayBundle {
    torch::Tensor origins;     // [B, res*res, 3]
    torch::Tensor directions;  // [B, res*res, 3], unit norm
};

RayBundle generate_rays(std::span<const CameraPose> poses, int resolution, torch::Dtype dtype = torch::kFloat32);

}  // namespace pomo3d
