#include "pomo3d/image_io.hpp"

#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "pomo3d/errors.hpp"

namespace pomo3d {
namespace {

const std::vector<int> kPngParams{cv::IMWRITE_PNG_COMPRESSION, 6};

std::vector<std::uint8_t> encode(const cv::Mat& mat) {
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", mat, out, kPngParams)) throw Error("PNG encoding failed");
    return out;
}

cv::Mat decode(std::span<const std::uint8_t> bytes, int flags) {
    if (bytes.empty()) throw InvalidInput("empty PNG payload");
    static constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() < 8 || !std::equal(std::begin(kSignature), std::end(kSignature), bytes.begin())) {
        throw InvalidInput("payload is not a PNG file");
    }
    cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat mat = cv::imdecode(buffer, flags);
    if (mat.empty()) throw InvalidInput("PNG payload could not be decoded");
    return mat;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const LabelMap& map) {
    cv::Mat mat(map.height, map.width, CV_8UC1, const_cast<std::uint8_t*>(map.labels.data()));
    return encode(mat);
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
    cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.data.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return encode(bgr);
}

LabelMap decode_label_png(std::span<const std::uint8_t> bytes) {
    cv::Mat mat = decode(bytes, cv::IMREAD_UNCHANGED);
    if (mat.type() != CV_8UC1) throw InvalidInput("label PNG must be single-channel 8-bit");
    LabelMap map(mat.rows, mat.cols);
    for (int r = 0; r < mat.rows; ++r) std::memcpy(&map.at(r, 0), mat.ptr<std::uint8_t>(r), mat.cols);
    return map;
}

RgbImage decode_rgb_png(std::span<const std::uint8_t> bytes) {
    cv::Mat bgr = decode(bytes, cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    RgbImage image(rgb.rows, rgb.cols);
    for (int r = 0; r < rgb.rows; ++r) std::memcpy(image.pixel(r, 0), rgb.ptr<std::uint8_t>(r), rgb.cols * 3);
    return image;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

LabelMap flip_horizontal(const LabelMap& map) {
    LabelMap out(map.height, map.width);
    for (int r = 0; r < map.height; ++r) {
        for (int c = 0; c < map.width; ++c) out.at(r, c) = map.at(r, map.width - 1 - c);
    }
    return out;
}

RgbImage flip_horizontal(const RgbImage& image) {
    RgbImage out(image.height, image.width);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            std::memcpy(out.pixel(r, c), image.pixel(r, image.width - 1 - c), 3);
        }
    }
    return out;
}

LabelMap resize_nearest(const LabelMap& map, int height, int width) {
    if (map.height == height && map.width == width) return map;
    LabelMap out(height, width);
    for (int r = 0; r < height; ++r) {
        const int sr = static_cast<int>((r + 0.5) * map.height / height);
        for (int c = 0; c < width; ++c) {
            const int sc = static_cast<int>((c + 0.5) * map.width / width);
            out.at(r, c) = map.at(sr, sc);
        }
    }
    return out;
}

RgbImage resize_area(const RgbImage& image, int height, int width) {
    if (image.height == height && image.width == width) return image;
    cv::Mat src(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.data.data()));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_AREA);
    RgbImage out(height, width);
    for (int r = 0; r < height; ++r) std::memcpy(out.pixel(r, 0), dst.ptr<std::uint8_t>(r), width * 3);
    return out;
}

RgbImage tensor_to_rgb(const torch::Tensor& chw) {
    auto t = ((chw.detach().to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0) * 127.5)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
    RgbImage image(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
    std::memcpy(image.data.data(), t.data_ptr<std::uint8_t>(), image.data.size());
    return image;
}

torch::Tensor rgb_to_tensor(const RgbImage& image) {
    auto t = torch::from_blob(const_cast<std::uint8_t*>(image.data.data()), {image.height, image.width, 3},
                              torch::kUInt8)
                 .permute({2, 0, 1})
                 .to(torch::kFloat32);
    return t / 127.5 - 1.0;
}

LabelMap tensor_to_labels(const torch::Tensor& hw) {
    auto t = hw.detach().to(torch::kUInt8).contiguous();
    LabelMap map(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
    std::memcpy(map.labels.data(), t.data_ptr<std::uint8_t>(), map.labels.size());
    return map;
}

torch::Tensor labels_to_tensor(const LabelMap& map) {
    return torch::from_blob(const_cast<std::uint8_t*>(map.labels.data()), {map.height, map.width}, torch::kUInt8)
        .to(torch::kInt64);
}

torch::Tensor one_hot(const LabelMap& map, int n_classes) {
    for (auto v : map.labels) {
        if (v >= n_classes) throw InvalidInput("label id outside the class set");
    }
    return torch::one_hot(labels_to_tensor(map), n_classes).permute({2, 0, 1}).to(torch::kFloat32).contiguous();
}

}  // namespace pomo3d
