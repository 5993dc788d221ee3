#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/optim/adam.h>
#include <torch/types.h>

namespace pomo3d {

constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors plus JSON metadata (config echo, step, ...).
///
/// File layout: "POMO3DCK", u32 version, u64 length + metadata JSON, u32 count,
/// then per tensor: u32 name length, name, i8 dtype, u8 rank, i64 dims, u64 byte
/// count, raw bytes; finally the SHA-256 of everything before it.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;

    const torch::Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors.count(name) > 0; }
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CorruptionError (bad magic, truncation, hash mismatch) or VersionError.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Adds every parameter and buffer of `module` under "<prefix>/<name>".
void store_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module);
/// Copies tensors back in place. Missing names raise CorruptionError, shape
/// mismatches ConfigError.
void restore_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module);

/// Adam moments and step counts, keyed by parameter order.
void store_adam(Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& optimizer);
void restore_adam(const Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& optimizer);

}  // namespace pomo3d
