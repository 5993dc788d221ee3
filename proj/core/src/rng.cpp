#include "pomo3d/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace pomo3d {

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix_seed(mix_seed(seed) ^ (index * 0xd1342543de82ef95ULL + 1)));
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n <= 1) return 0;
    return static_cast<std::int64_t>(uniform() * static_cast<double>(n)) % n;
}

at::Generator Rng::tensor_generator() {
    return at::make_generator<at::CPUGeneratorImpl>(engine_());
}

torch::Tensor Rng::normal(at::IntArrayRef sizes, torch::Dtype dtype) {
    auto gen = tensor_generator();
    return torch::randn(sizes, gen, torch::TensorOptions().dtype(dtype));
}

torch::Tensor Rng::uniform_tensor(at::IntArrayRef sizes, torch::Dtype dtype) {
    auto gen = tensor_generator();
    return torch::rand(sizes, gen, torch::TensorOptions().dtype(dtype));
}

}  // namespace pomo3d
