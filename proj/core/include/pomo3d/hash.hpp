#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/nn/module.h>

namespace pomo3d {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

/// Incremental SHA-256.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, size_t size);
    Digest finish();

private:
    void* ctx_;
};

/// SHA-256 over names, shapes and raw bytes of every parameter and buffer.
std::string module_hash(const torch::nn::Module& module);
std::string tensors_hash(const std::vector<torch::Tensor>& tensors);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws InvalidInput on malformed input. Whitespace is not accepted.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace pomo3d
