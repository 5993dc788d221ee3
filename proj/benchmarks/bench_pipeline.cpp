#include <memory>
#include <vector>

#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "pomo3d/generator.hpp"
#include "pomo3d/metrics.hpp"
#include "pomo3d/scribble.hpp"
#include "pomo3d/service.hpp"
#include "pomo3d/synthetic.hpp"
#include "pomo3d/training.hpp"

using namespace pomo3d;

namespace {

Config bench_config(int preset) { return preset == 0 ? Config::reduced() : Config::desk(); }

std::shared_ptr<const TrainingData> bench_data(const Config& c) {
    SyntheticOptions opts;
    opts.seed = 3;
    opts.resolution = c.output_resolution();
    return std::make_shared<const TrainingData>(
        make_synthetic_dataset(opts, 80, c.dataset, {c.render.resolution, c.output_resolution()}), c);
}

void BM_Composite(benchmark::State& state) {
    Rng rng(1);
    const auto rays = state.range(0);
    auto f = rng.normal({rays, 12, 32});
    auto s = rng.uniform_tensor({rays, 12}) * 4;
    auto d = rng.uniform_tensor({rays, 12}) * 0.1;
    for (auto _ : state) benchmark::DoNotOptimize(composite(f, s, d).features);
    state.SetItemsProcessed(state.iterations() * rays);
}
BENCHMARK(BM_Composite)->Arg(1024)->Arg(4096);

void BM_TriplaneQuery(benchmark::State& state) {
    Rng rng(2);
    auto planes = rng.normal({1, 3, 16, 64, 64});
    auto pts = rng.uniform_tensor({1, state.range(0), 3}) * 2 - 1;
    for (auto _ : state) benchmark::DoNotOptimize(sample_triplane(planes, pts));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TriplaneQuery)->Arg(4096)->Arg(16384);

void BM_Compose(benchmark::State& state) {
    const auto c = bench_config(static_cast<int>(state.range(0)));
    auto g = make_generator(c, 4);
    g->eval();
    Rng rng(5);
    torch::NoGradGuard ng;
    auto codes = g->mapper->inference_condition(LatentNoise::sample(1, c.latent.d_z, rng), CameraPose::frontal(c.render));
    ComposeRequest req;
    req.w_por_g = codes.w_por_g;
    req.w_por_t = codes.w_por_t;
    req.poses = {CameraPose::frontal(c.render)};
    for (int k = 0; k < state.range(1); ++k) req.accessories.push_back({codes.w_acc_g, codes.w_acc_t});
    for (auto _ : state) benchmark::DoNotOptimize(g->compose(req).rgb);
}
BENCHMARK(BM_Compose)->Args({0, 1})->Args({1, 1})->Args({1, 2})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    auto c = Config::reduced();
    c.train.fmd_interval = 0;
    c.train.pretrain_steps = state.range(0) ? 0 : 1000000;
    Trainer t(c, bench_data(c));
    for (auto _ : state) benchmark::DoNotOptimize(t.step().g_total);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Quantize(benchmark::State& state) {
    torch::manual_seed(6);
    AccessoryCodebook cb(state.range(0), 64);
    Rng rng(7);
    auto w = rng.normal({256, 64});
    for (auto _ : state) benchmark::DoNotOptimize(cb->quantize(w).indices);
}
BENCHMARK(BM_Quantize)->Arg(64)->Arg(512);

void BM_Frechet(benchmark::State& state) {
    Rng rng(8);
    const EmbeddingSet a{rng.normal({512, state.range(0)}, torch::kFloat64), "b"};
    const EmbeddingSet b{rng.normal({512, state.range(0)}, torch::kFloat64) + 0.1, "b"};
    for (auto _ : state) benchmark::DoNotOptimize(frechet_distance(a, b));
}
BENCHMARK(BM_Frechet)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ServiceRender(benchmark::State& state) {
    const auto c = Config::desk();
    auto engine = std::make_shared<Engine>(make_generator(c, 9), c);
    Service svc(engine);
    svc.handle("POST", "/sessions", R"({"seed": 1})");
    svc.handle("POST", "/sessions/s1/accessories", R"({"seed": 2, "texture_seed": 3})");
    for (auto _ : state) benchmark::DoNotOptimize(svc.handle("POST", "/sessions/s1/render", R"({"pose": {"yaw": 0.2, "pitch": 0.0}})"));
}
BENCHMARK(BM_ServiceRender)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
