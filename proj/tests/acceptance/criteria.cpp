#include "criteria.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "fixtures.hpp"
#include "gradchecks.hpp"
#include "oracles.hpp"
#include "pomo3d/hash.hpp"
#include "pomo3d/metrics.hpp"
#include "pomo3d/pacmask.hpp"
#include "pomo3d/scribble.hpp"
#include "pomo3d/synthetic.hpp"
#include "pomo3d/texture.hpp"
#include "pomo3d/training.hpp"

namespace acceptance {
namespace {

using namespace pomo3d;

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

BinaryMask box_mask(int res, int r0, int r1, int c0, int c1) {
    auto m = torch::zeros({1, 1, res, res});
    m.slice(2, r0, r1).slice(3, c0, c1).fill_(1.0);
    return {m};
}

std::vector<std::uint8_t> mask_bytes(const BinaryMask& m) {
    auto t = m.m[0][0].to(torch::kUInt8).contiguous();
    return {t.data_ptr<std::uint8_t>(), t.data_ptr<std::uint8_t>() + t.numel()};
}

Outcome texture_locality() {
    auto c = Config::desk();
    torch::manual_seed(1);
    TextureRenderer tex(c.texture, c.texture.fused_channels, c.latent.d_w);
    Rng rng(2);
    const int r = c.render.resolution;
    torch::NoGradGuard ng;
    int identical = 0;
    for (int probe = 0; probe < 20; ++probe) {
        auto f = rng.normal({1, c.texture.fused_channels, r, r});
        auto sem = torch::softmax(rng.normal({1, kPortraitClasses + kAccessoryClasses, r, r}), 1);
        auto w_por = rng.normal({1, c.latent.d_w});
        auto w_acc = rng.normal({1, c.latent.d_w});
        auto zero = BinaryMask::zeros_like(f);
        BinaryMask one{torch::ones({1, 1, r, r})};
        // empty mask: accessory style irrelevant
        auto a = tex->forward(f, w_por, single_region(zero, w_acc), sem);
        auto b = tex->forward(f, w_por, single_region(zero, rng.normal({1, c.latent.d_w})), sem);
        // full mask: portrait style irrelevant
        auto x = tex->forward(f, w_por, single_region(one, w_acc), sem);
        auto y = tex->forward(f, rng.normal({1, c.latent.d_w}), single_region(one, w_acc), sem);
        identical += torch::equal(a, b) && torch::equal(x, y);
    }
    return {identical == 20, std::to_string(identical) + "/20 probes bit-identical for m=0 and m=1"};
}

Outcome volume_render_oracle() {
    Rng rng(3);
    const int rays = 100, s = 4, ch = 3;
    auto sigma = rng.uniform_tensor({rays, s}) * 5.0;
    auto delta = rng.uniform_tensor({rays, s}) * 0.5 + 0.01;
    auto feats = rng.normal({rays, s, ch});
    auto res = composite(feats, sigma, delta);
    double worst = 0.0;
    for (int i = 0; i < rays; ++i) {
        auto o = oracle::composite_ray(oracle::to_vector(sigma[i]), oracle::to_vector(delta[i]),
                                       oracle::to_vector(feats[i]), ch);
        for (int k = 0; k < ch; ++k)
            worst = std::max(worst, std::abs(res.features[i][k].item<double>() - o.features[k]));
        worst = std::max(worst, std::abs(res.alpha[i].item<double>() - o.alpha));
    }
    auto empty = composite(feats, torch::zeros({rays, s}), delta);
    const bool zeros = empty.features.abs().max().item<float>() == 0.0f && empty.alpha.abs().max().item<float>() == 0.0f;
    return {worst <= 1e-5 && zeros,
            fmt("max |err| %.2e over 100 rays; ", worst) + (zeros ? "sigma=0 exact zeros" : "sigma=0 NOT zero")};
}

Outcome triplane_oracle() {
    Rng rng(4);
    const int ch = 8, res = 16;
    auto planes = rng.normal({1, 3, ch, res, res}, torch::kFloat64);
    auto points = rng.uniform_tensor({1, 1000, 3}, torch::kFloat64) * 2.2 - 1.1;
    auto got = sample_triplane(planes, points);
    auto pv = oracle::to_vector(planes[0]);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        auto p = oracle::to_vector(points[0][i]);
        auto e = oracle::triplane(pv, ch, res, p[0], p[1], p[2]);
        for (int k = 0; k < ch; ++k) worst = std::max(worst, std::abs(got[0][i][k].item<double>() - e[k]));
    }
    return {worst <= 1e-6, fmt("max |err| %.2e over 1000 points", worst)};
}

Outcome gradient_checks() {
    auto targets = gradcheck::run_all(5, 2024);
    bool pass = true;
    std::ostringstream out;
    for (const auto& t : targets) {
        const double e = oracle::max_rel_error(t.probes);
        pass &= t.probes.size() >= 5 && e <= 2e-3;
        out << t.name << " " << fmt("%.1e", e) << " (" << t.probes.size() << " probes); ";
    }
    return {pass, out.str()};
}

Outcome identity_sampling() {
    auto c = fixture::small_config();
    torch::manual_seed(5);
    LatentMapper mapper(c.latent);
    torch::NoGradGuard ng;
    Rng zr(6), pr(7);
    const int n = 10000;
    auto z = LatentNoise::sample(n, c.latent.d_z, zr);
    std::vector<CameraPose> poses(n, CameraPose::frontal(c.render));
    auto bundle = mapper->map_latents(z, conditioning_tensor(poses), 0.75, pr);
    std::int64_t hits = 0;
    for (auto s : bundle.acc_g_source) hits += s == AccessorySource::IdentityCorrelated;
    const double f = static_cast<double>(hits) / n;
    return {f >= 0.737 && f <= 0.763, fmt("identity-correlated fraction %.4f over 10^4 draws", f)};
}

Outcome vector_quantization() {
    auto c = fixture::small_config();
    torch::manual_seed(8);
    AccessoryCodebook cb(64, c.latent.d_w);
    Rng rng(9);
    auto w = rng.normal({1000, c.latent.d_w});
    auto q = cb->quantize(w);
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < 64; ++k) rows.push_back(oracle::to_vector(cb->entries[k]));
    int nn_match = 0;
    for (int i = 0; i < 1000; ++i)
        nn_match += q.indices[i].item<std::int64_t>() == oracle::nearest_row(rows, oracle::to_vector(w[i]));

    auto g = make_generator(c, 10);
    const auto before = module_hash(*g);
    auto data = fixture::training_data(c, 60, 11);
    ScribbleTrainer trainer(g, c, data);
    bool finite = true;
    for (int i = 0; i < 100; ++i) finite &= std::isfinite(trainer.step().total);
    const auto after = module_hash(*g);

    // inference codes on dataset scribbles are codebook rows
    int exact = 0, checked = 0;
    torch::NoGradGuard ng;
    const std::int64_t acc = data->size(DataGroup::AccessorySegmaps);
    for (std::int64_t i = 0; i < std::min<std::int64_t>(acc, 20); ++i) {
        std::vector<std::int64_t> idx{i};
        auto real = data->take(DataGroup::AccessorySegmaps, idx);
        ScribbleMap s{tensor_to_labels(real.samples[0].argmax(0)), ScribbleProvenance::Dataset};
        auto por = g->render_portrait(rng.normal({1, c.latent.d_w}), real.poses);
        auto inv = invert_scribble(trainer.encoder, trainer.codebook, s, por.features);
        exact += torch::equal(inv.code[0], trainer.codebook->entries[inv.index]);
        ++checked;
    }
    const bool pass = nn_match == 1000 && exact == checked && checked > 0 && before == after && finite;
    return {pass, std::to_string(nn_match) + "/1000 nearest-neighbour matches (K=64); " + std::to_string(exact) + "/" +
                      std::to_string(checked) + " inference codes exact rows; generator hash " +
                      (before == after ? "unchanged" : "CHANGED") + " over 100 scribble steps"};
}

Outcome training_trend() {
    auto c = Config::reduced();
    c.train.batch = 4;
    c.train.total_steps = 2000;
    c.train.fmd_interval = 500;
    c.train.threads = 1;
    auto data = fixture::training_data(c, 400, 12);
    Trainer t(c, data);
    auto initial_maps = t.fmd_fake_maps();
    bool finite = true;
    std::int64_t steps = 0;
    std::vector<std::pair<std::int64_t, double>> curve;
    t.run(c.train.total_steps, [&](const LossRecord& r) {
        finite &= r.finite();
        ++steps;
        if (r.fmd) curve.emplace_back(r.step, *r.fmd);
    });
    const double fmd0 = t.fmd_between(initial_maps, t.d_accessory);
    const double fmd_end = t.fmd_between(t.fmd_fake_maps(), t.d_accessory);
    std::ostringstream out;
    out << steps << " steps at batch " << c.train.batch << (finite ? ", losses finite" : ", NON-FINITE loss")
        << fmt("; FMD(0)=%.4g FMD(2000)=%.4g", fmd0, fmd_end) << fmt(" ratio %.3f", fmd_end / fmd0)
        << "; running FMD:";
    for (const auto& [s, v] : curve) out << " " << s << ":" << fmt("%.3g", v);
    return {finite && steps == 2000 && fmd_end < 0.5 * fmd0, out.str()};
}

Outcome multi_accessory() {
    Rng rng(13);
    const int ch = 6, res = 12;
    ProjectedFeatures por{rng.normal({1, ch, res, res})};
    ProjectedFeatures acc{rng.normal({1, ch, res, res})};
    auto m = (rng.uniform_tensor({1, 1, res, res}) > 0.5).to(torch::kFloat32);
    std::vector<AccessoryLayer> one{{acc, {m}}};
    auto got = oracle::to_vector(combine_features(por, one));
    auto fp = oracle::to_vector(por.features), fa = oracle::to_vector(acc.features), mv = oracle::to_vector(m);
    int mismatches = 0;
    for (int k = 0; k < ch; ++k)
        for (int p = 0; p < res * res; ++p)
            mismatches += got[k * res * res + p] != (1.0 - mv[p]) * fp[k * res * res + p] + mv[p] * fa[k * res * res + p];

    auto c = Config::desk();
    torch::manual_seed(14);
    StructureEncoder structure(c.render.feature_channels, c.texture.fused_channels);
    TextureRenderer tex(c.texture, c.texture.fused_channels, c.latent.d_w);
    const int r = c.render.resolution, fc = c.render.feature_channels;
    ProjectedFeatures base{rng.normal({1, fc, r, r})};
    ProjectedFeatures a1{rng.normal({1, fc, r, r})};
    auto m1 = box_mask(r, 4, 12, 2, 9), m2 = box_mask(r, 18, 28, 22, 30);
    auto w_por = rng.normal({1, c.latent.d_w}), w1 = rng.normal({1, c.latent.d_w});
    auto sem = torch::softmax(rng.normal({1, kPortraitClasses + kAccessoryClasses, r, r}), 1);
    torch::NoGradGuard ng;
    auto render = [&](const ProjectedFeatures& a2, const torch::Tensor& w2, const torch::Tensor& sem2) {
        std::vector<AccessoryLayer> layers{{a1, m1}, {a2, m2}};
        std::vector<TextureRegion> regions{{m1, w1}, {m2, w2}};
        return tex->forward(structure->fuse(base, layers).fused, w_por, regions, torch::where(m2.m > 0.5, sem2, sem));
    };
    auto variant = [&] {
        ProjectedFeatures a2{rng.normal({1, fc, r, r})};
        auto w2 = rng.normal({1, c.latent.d_w});
        auto sem2 = torch::softmax(rng.normal({1, kPortraitClasses + kAccessoryClasses, r, r}), 1);
        return render(a2, w2, sem2);
    };
    auto ra = variant();
    auto rb = variant();
    const int levels = c.texture.n_blocks, out = r << levels;
    const int reach = oracle::texture_reach(oracle::kStructureReach, levels);
    auto dist = oracle::chebyshev_distance(oracle::upsample_mask(mask_bytes(m2), r, r, levels), out, out);
    auto changed = (ra != rb).any(1)[0].to(torch::kUInt8).contiguous();
    const auto* ch_ptr = changed.data_ptr<std::uint8_t>();
    int far = 0, far_changed = 0, near_changed = 0;
    for (int p = 0; p < out * out; ++p) {
        if (dist[p] > reach) {
            ++far;
            far_changed += ch_ptr[p];
        } else {
            near_changed += ch_ptr[p];
        }
    }
    const bool pass = mismatches == 0 && far_changed == 0 && near_changed > 0;
    return {pass, "N=1 fusion " + std::to_string(mismatches) + " mismatches; " + std::to_string(far_changed) + "/" +
                      std::to_string(far) + " pixels beyond reach " + std::to_string(reach) +
                      " px changed when accessory 2 is replaced"};
}

Outcome metric_oracles() {
    Rng rng(15);
    const int n = 500, d = 6;
    auto x = rng.normal({n, d}, torch::kFloat64);
    x = x - x.mean(0, true);
    auto l = torch::linalg_cholesky(x.t().matmul(x) / (n - 1));
    x = torch::linalg_solve_triangular(l, x.t(), false).t();
    auto shift = rng.normal({1, d}, torch::kFloat64);
    const double fd = frechet_distance({x, "e"}, {x + shift, "e"});
    const double expect = oracle::squared_distance(oracle::to_vector(shift), std::vector<double>(d, 0.0));
    const double fd_err = std::abs(fd - expect);

    const double mi = mutual_information({{50, 0}, {0, 50}});
    const double mi_err = std::abs(mi - std::log(2.0));

    double align_err = 0.0;
    for (int i = 0; i < 20; ++i) {
        const int k = 5 + static_cast<int>(rng.uniform_int(20));
        LabelMap ref(24, 24), pred(24, 24);
        for (size_t p = 0; p < ref.size(); ++p) {
            ref.labels[p] = static_cast<std::uint8_t>(rng.uniform_int(k));
            pred.labels[p] = rng.bernoulli(0.6) ? ref.labels[p] : static_cast<std::uint8_t>(rng.uniform_int(k));
        }
        auto a = alignment(pred, ref, k);
        auto o = oracle::confusion_alignment(pred, ref, k);
        align_err = std::max({align_err, std::abs(a.miou - o.miou), std::abs(a.acc - o.acc)});
    }
    const bool pass = fd_err <= 1e-6 && mi_err <= 1e-12 && align_err <= 1e-12;
    return {pass, fmt("Frechet |err| %.1e; ", fd_err) + fmt("MI |err| %.1e; ", mi_err) +
                      fmt("mIoU/Acc |err| %.1e over 20 pairs", align_err)};
}

Outcome dataset_invariants() {
    auto c = fixture::small_config();
    SyntheticOptions opts;
    opts.seed = 16;
    opts.resolution = c.output_resolution();
    auto raw = make_synthetic_raw(opts, 200);
    BuildOptions build{c.render.resolution, c.output_resolution()};

    // accessory pixels survive the priority reorder and the per-type extraction
    std::int64_t conservation_failures = 0;
    for (const auto& s : raw) {
        std::int64_t union_count = 0;
        for (int r = 0; r < s.masks.height; ++r)
            for (int col = 0; col < s.masks.width; ++col) {
                bool any = false;
                for (int cls = kRawEyewear; cls <= kRawNecklace; ++cls) any |= s.masks.at(cls, r, col) != 0;
                union_count += any;
            }
        auto parsed = split_nose(reorder_semantics(s.masks));
        std::int64_t reordered = 0, extracted = 0;
        for (auto v : parsed.labels) reordered += is_parsed_accessory(v);
        for (auto t : accessories_present(parsed))
            for (auto v : extract_accessory(parsed, t).labels) extracted += v != kNone;
        conservation_failures += reordered != union_count || extracted != union_count;
    }

    Rng rng_a(17), rng_b(17);
    auto groups = build_pacmask(raw, c.dataset, build, rng_a);
    std::set<std::string> por_src, acc_src;
    std::int64_t portrait_acc_pixels = 0;
    for (const auto& r : groups.portrait) {
        por_src.insert(r.source_id);
        portrait_acc_pixels += r.source_accessories.empty() ? 0 : 1;
        for (auto v : r.labels.labels) portrait_acc_pixels += v >= kPortraitClasses;
    }
    for (const auto& r : groups.accessory) acc_src.insert(r.source_id);
    std::int64_t shared = 0;
    for (const auto& s : por_src) shared += acc_src.count(s);

    fixture::TempDir da("acc-a"), db("acc-b");
    write_pacmask(da.path(), groups);
    write_pacmask(db.path(), build_pacmask(raw, c.dataset, build, rng_b));
    const bool identical = fixture::directory_digest(da.path()) == fixture::directory_digest(db.path());

    const bool pass = conservation_failures == 0 && portrait_acc_pixels == 0 && shared == 0 && identical &&
                      !groups.portrait.empty() && !groups.accessory.empty();
    return {pass, std::to_string(shared) + " sources shared by portrait and accessory groups; " +
                      std::to_string(portrait_acc_pixels) + " accessory pixels in portrait maps; " +
                      std::to_string(conservation_failures) + " conservation failures; rebuild " +
                      (identical ? "byte-identical" : "DIFFERS")};
}

Outcome determinism() {
    const auto here = render_digest();
    const auto again = render_digest();
    std::string child;
    const auto exe = std::filesystem::read_symlink("/proc/self/exe").string();
    if (FILE* p = popen(("'" + exe + "' --render-digest").c_str(), "r")) {
        char buf[256];
        while (fgets(buf, sizeof buf, p)) child += buf;
        pclose(p);
    }
    while (!child.empty() && (child.back() == '\n' || child.back() == '\r')) child.pop_back();

    auto c = fixture::small_config();
    c.train.fmd_interval = 0;
    c.train.pretrain_steps = 25;
    auto data = fixture::training_data(c, 80, 18);
    auto curve = [&] {
        Trainer t(c, data);
        std::vector<std::string> out;
        t.run(50, [&](const LossRecord& r) { out.push_back(r.to_json().dump()); });
        return out;
    };
    const bool replay = curve() == curve();
    const bool pass = here == again && here == child && replay;
    return {pass, std::string("render digest ") + here.substr(0, 16) + (here == again ? " stable in-process" : " UNSTABLE") +
                      (here == child ? ", matches a fresh process" : ", DIFFERS across processes") +
                      (replay ? "; 50-step loss curve replays identically" : "; loss curve DIFFERS")};
}

}  // namespace

std::string render_digest() {
    auto c = fixture::small_config();
    auto g = make_generator(c, 77);
    g->eval();
    Rng rng(78);
    torch::NoGradGuard ng;
    auto z = LatentNoise::sample(1, c.latent.d_z, rng);
    auto codes = g->mapper->inference_condition(z, CameraPose::frontal(c.render));
    ComposeRequest req;
    req.w_por_g = codes.w_por_g;
    req.w_por_t = codes.w_por_t;
    req.poses = {CameraPose::orbit(0.35, -0.1, c.render)};
    for (int k = 0; k < 2; ++k) {
        auto za = LatentNoise::sample(1, c.latent.d_z, rng);
        auto a = g->mapper->inference_condition(za, CameraPose::frontal(c.render));
        req.accessories.push_back({a.w_acc_g, a.w_acc_t});
    }
    auto res = g->compose(req);
    auto png = encode_png(tensor_to_rgb(res.rgb[0]));
    auto labels = encode_png(tensor_to_labels(res.accessory_semantics.labels()[0]));
    png.insert(png.end(), labels.begin(), labels.end());
    return to_hex(sha256(png));
}

std::vector<Criterion> criteria() {
    return {
        {"texture-locality", texture_locality},
        {"volume-render-oracle", volume_render_oracle},
        {"triplane-query-oracle", triplane_oracle},
        {"gradient-checks", gradient_checks},
        {"identity-sampling", identity_sampling},
        {"vector-quantization", vector_quantization},
        {"training-trend", training_trend},
        {"multi-accessory", multi_accessory},
        {"metric-oracles", metric_oracles},
        {"dataset-invariants", dataset_invariants},
        {"determinism", determinism},
    };
}

}  // namespace acceptance
