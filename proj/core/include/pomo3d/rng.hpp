#pragma once

#include <cstdint>
#include <random>

#include <ATen/core/Generator.h>
#include <torch/types.h>

namespace pomo3d {

/// Seeded random source. Scalars come from a 64-bit Mersenne twister; tensors are
/// drawn from a fresh torch CPU generator seeded from that stream, so a single
/// seed reproduces every draw regardless of how tensor ops are scheduled.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for a (seed, index) pair, e.g. per training step.
    static Rng derive(std::uint64_t seed, std::uint64_t index);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    bool bernoulli(double p) { return uniform() < p; }
    /// Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n);

    at::Generator tensor_generator();
    torch::Tensor normal(at::IntArrayRef sizes, torch::Dtype dtype = torch::kFloat32);
    torch::Tensor uniform_tensor(at::IntArrayRef sizes, torch::Dtype dtype = torch::kFloat32);

private:
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace pomo3d
