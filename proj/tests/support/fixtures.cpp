#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <vector>

#include <unistd.h>

#include "pomo3d/hash.hpp"
#include "pomo3d/synthetic.hpp"

namespace fixture {

pomo3d::Config small_config() {
    auto c = pomo3d::Config::reduced();
    c.train.threads = 1;
    return c;
}

pomo3d::PacMaskGroups synthetic_groups(const pomo3d::Config& config, std::int64_t n, std::uint64_t seed) {
    pomo3d::SyntheticOptions opts;
    opts.seed = seed;
    opts.resolution = config.output_resolution();
    pomo3d::BuildOptions build;
    build.label_resolution = config.render.resolution;
    build.rgb_resolution = config.output_resolution();
    return pomo3d::make_synthetic_dataset(opts, n, config.dataset, build);
}

std::shared_ptr<const pomo3d::TrainingData> training_data(const pomo3d::Config& config, std::int64_t n,
                                                          std::uint64_t seed) {
    return std::make_shared<const pomo3d::TrainingData>(synthetic_groups(config, n, seed), config);
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("pomo3d-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string directory_digest(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    pomo3d::Sha256 h;
    for (const auto& f : files) {
        const auto rel = std::filesystem::relative(f, dir).generic_string();
        h.update(rel.data(), rel.size() + 1);
        std::ifstream in(f, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        const auto bytes = ss.str();
        h.update(bytes.data(), bytes.size());
    }
    const auto d = h.finish();
    return pomo3d::to_hex(d);
}

}  // namespace fixture
