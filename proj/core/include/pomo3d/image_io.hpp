#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/types.h>

namespace pomo3d {

/// Single-channel map of class indices, row-major.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(int h, int w, std::uint8_t fill = 0) : height(h), width(w), labels(static_cast<size_t>(h) * w, fill) {}

    std::uint8_t& at(int row, int col) { return labels[static_cast<size_t>(row) * width + col]; }
    std::uint8_t at(int row, int col) const { return labels[static_cast<size_t>(row) * width + col]; }
    size_t size() const { return labels.size(); }

    bool operator==(const LabelMap&) const = default;
};

/// 8-bit RGB image, row-major interleaved.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0) {}

    std::uint8_t* pixel(int row, int col) { return &data[(static_cast<size_t>(row) * width + col) * 3]; }
    const std::uint8_t* pixel(int row, int col) const { return &data[(static_cast<size_t>(row) * width + col) * 3]; }

    bool operator==(const RgbImage&) const = default;
};

std::vector<std::uint8_t> encode_png(const LabelMap& map);
std::vector<std::uint8_t> encode_png(const RgbImage& image);
/// Throws InvalidInput if the bytes are not a single-channel 8-bit PNG.
LabelMap decode_label_png(std::span<const std::uint8_t> bytes);
/// Throws InvalidInput if the bytes are not a decodable PNG.
RgbImage decode_rgb_png(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Horizontal flip without touching class ids.
LabelMap flip_horizontal(const LabelMap& map);
RgbImage flip_horizontal(const RgbImage& image);

/// Nearest-neighbour resampling at pixel centres.
LabelMap resize_nearest(const LabelMap& map, int height, int width);
RgbImage resize_area(const RgbImage& image, int height, int width);

/// [3, H, W] tensor in [-1, 1] <-> 8-bit image.
RgbImage tensor_to_rgb(const torch::Tensor& chw);
torch::Tensor rgb_to_tensor(const RgbImage& image);

/// [H, W] integer tensor <-> label map.
LabelMap tensor_to_labels(const torch::Tensor& hw);
torch::Tensor labels_to_tensor(const LabelMap& map);
/// [N, H, W] float one-hot encoding. Throws InvalidInput for ids >= n_classes.
torch::Tensor one_hot(const LabelMap& map, int n_classes);

}  // namespace pomo3d
