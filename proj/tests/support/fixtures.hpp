#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "pomo3d/config.hpp"
#include "pomo3d/generator.hpp"
#include "pomo3d/pacmask.hpp"
#include "pomo3d/training.hpp"

namespace fixture {

/// Smallest preset, used by every model-level test.
pomo3d::Config small_config();

/// Seeded synthetic PAC-Mask groups built at the resolutions of `config`.
pomo3d::PacMaskGroups synthetic_groups(const pomo3d::Config& config, std::int64_t n, std::uint64_t seed);
std::shared_ptr<const pomo3d::TrainingData> training_data(const pomo3d::Config& config, std::int64_t n,
                                                          std::uint64_t seed);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
private:
    std::filesystem::path path_;
};

/// SHA-256 over relative paths and contents of every file under `dir`.
std::string directory_digest(const std::filesystem::path& dir);

}  // namespace fixture
