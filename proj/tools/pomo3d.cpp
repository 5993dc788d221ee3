#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "pomo3d/checkpoint.hpp"
#include "pomo3d/config.hpp"
#include "pomo3d/errors.hpp"
#include "pomo3d/evaluation.hpp"
#include "pomo3d/image_io.hpp"
#include "pomo3d/pacmask.hpp"
#include "pomo3d/scribble.hpp"
#include "pomo3d/service.hpp"
#include "pomo3d/synthetic.hpp"
#include "pomo3d/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pomo3d;

namespace {

constexpr const char* kCheckpointEnv = "POMO3D_CKPT";

/// POMO3D_CKPT, when set, takes precedence over --ckpt.
fs::path checkpoint_path(const std::string& flag) {
    if (const char* env = std::getenv(kCheckpointEnv); env && *env) return env;
    if (flag.empty()) throw InvalidInput(std::string("no checkpoint given (use --ckpt or ") + kCheckpointEnv + ")");
    return flag;
}

CameraPose pose_from(const std::string& text, const RenderConfig& render) {
    double yaw = 0.0, pitch = 0.0;
    char comma = 0;
    std::istringstream in(text);
    if (!(in >> yaw >> comma >> pitch) || comma != ',' || !(in >> std::ws).eof())
        throw InvalidInput("pose must be 'yaw,pitch' in radians, got '" + text + "'");
    return CameraPose::orbit(yaw, pitch, render);
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

void write_render(const fs::path& dir, const RenderOutput& r) {
    fs::create_directories(dir);
    write_file(dir / "rgb.png", encode_png(r.rgb));
    write_file(dir / "portrait_labels.png", encode_png(r.portrait_labels));
    write_file(dir / "accessory_labels.png", encode_png(r.accessory_labels));
}

PacMaskGroups dataset_for(const std::string& dir, std::int64_t synthetic_n, std::uint64_t seed, const Config& c) {
    if (!dir.empty()) return load_pacmask(dir);
    SyntheticOptions opts;
    opts.seed = seed;
    opts.resolution = c.output_resolution();
    opts.accessory_incidence = c.dataset.accessory_incidence;
    opts.multi_accessory_prob = c.dataset.multi_accessory_prob;
    return make_synthetic_dataset(opts, synthetic_n, c.dataset, {c.render.resolution, c.output_resolution()});
}

struct TrainArgs {
    std::string config, preset = "desk", resume, data, out = "runs/train";
    std::int64_t steps = -1, synthetic_n = 2000;
};

int run_train(const TrainArgs& a) {
    Config c = a.config.empty() ? Config::preset_named(a.preset) : load_config(a.config, a.preset);
    if (a.steps >= 0) c.train.total_steps = static_cast<int>(a.steps);
    c.validate();
    torch::set_num_threads(std::max(1, c.train.threads));
    const fs::path out = a.out;
    fs::create_directories(out);
    auto data = std::make_shared<const TrainingData>(dataset_for(a.data, a.synthetic_n, c.train.seed, c), c);
    Trainer trainer(c, data);
    if (!a.resume.empty()) {
        trainer.load_state(load_checkpoint(a.resume));
        std::cerr << "resumed at step " << trainer.current_step() << "\n";
    }
    std::ofstream log(out / "losses.jsonl", std::ios::app);
    const auto start = std::chrono::steady_clock::now();
    trainer.run(
        c.train.total_steps,
        [&](const LossRecord& r) {
            log << r.to_json().dump() << "\n";
            if (c.train.log_interval > 0 && r.step % c.train.log_interval == 0) {
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                std::cerr << "step " << r.step << " [" << phase_name(r.phase) << "] g " << r.g_total << " d_acc "
                          << r.d_accessory << " d_por " << r.d_portrait << " d_rgb " << r.d_rgb
                          << (r.fmd ? " fmd " + std::to_string(*r.fmd) : "") << " (" << secs << "s)\n";
            }
            if (c.train.checkpoint_interval > 0 && (r.step + 1) % c.train.checkpoint_interval == 0)
                save_checkpoint(out / "state.ckpt", trainer.state());
        },
        out / "fault");
    save_checkpoint(out / "state.ckpt", trainer.state());
    save_checkpoint(out / "generator.ckpt", generator_checkpoint(trainer.generator, c));
    std::cout << (out / "generator.ckpt").string() << "\n";
    return 0;
}

struct ScribbleArgs {
    std::string ckpt, data, out = "runs/scribble.ckpt";
    std::int64_t steps = 1000, synthetic_n = 500, seed = 1;
};

int run_train_scribble(const ScribbleArgs& a) {
    const auto ckpt = load_checkpoint(checkpoint_path(a.ckpt));
    Config c;
    auto generator = load_generator(ckpt, &c);
    auto data = std::make_shared<const TrainingData>(dataset_for(a.data, a.synthetic_n, a.seed, c), c);
    ScribbleTrainer trainer(generator, c, data);
    for (std::int64_t i = 0; i < a.steps; ++i) {
        const auto l = trainer.step();
        if (c.train.log_interval > 0 && i % c.train.log_interval == 0)
            std::cerr << "step " << i << " recon " << l.recon << " commit " << l.commitment << " latent " << l.latent
                      << " reseeded " << l.reseeded << "\n";
    }
    auto outckpt = generator_checkpoint(generator, c);
    store_scribble_modules(outckpt, trainer.encoder, trainer.codebook);
    save_checkpoint(a.out, outckpt);
    std::cout << a.out << "\n";
    return 0;
}

int run_pacmask_build(const std::string& in, const std::string& out, const std::string& preset, std::uint64_t seed) {
    const auto c = Config::preset_named(preset);
    const auto raw = load_raw_samples(in);
    Rng rng(seed);
    const auto groups = build_pacmask(raw, c.dataset, {c.render.resolution, c.output_resolution()}, rng);
    write_pacmask(out, groups);
    std::cout << json{{"accessory", groups.accessory.size()}, {"portrait", groups.portrait.size()}, {"rgb", groups.rgb.size()}}.dump()
              << "\n";
    return 0;
}

int run_pacmask_synth(const std::string& out, std::int64_t n, std::uint64_t seed, const std::string& preset, bool raw) {
    const auto c = Config::preset_named(preset);
    SyntheticOptions opts;
    opts.seed = seed;
    opts.resolution = c.output_resolution();
    opts.accessory_incidence = c.dataset.accessory_incidence;
    opts.multi_accessory_prob = c.dataset.multi_accessory_prob;
    if (raw) {
        write_raw_samples(out, make_synthetic_raw(opts, n));
        return 0;
    }
    const auto groups = make_synthetic_dataset(opts, n, c.dataset, {c.render.resolution, c.output_resolution()});
    write_pacmask(out, groups);
    std::cout << json{{"accessory", groups.accessory.size()}, {"portrait", groups.portrait.size()}, {"rgb", groups.rgb.size()}}.dump()
              << "\n";
    return 0;
}

int run_bias_report(const std::string& in, const std::string& out) {
    const auto groups = load_pacmask(in);
    const auto r = mutual_information_report(groups.rgb);
    json mi = json::object();
    for (size_t i = 0; i < r.accessories.size(); ++i)
        for (size_t j = 0; j < r.attributes.size(); ++j) mi[r.accessories[i]][r.attributes[j]] = r.mi[i][j];
    write_json(out, {{"samples", r.samples}, {"unit", "nats"}, {"accessories", r.accessories},
                     {"attributes", r.attributes}, {"mutual_information", mi}});
    return 0;
}

int run_evaluate(const std::string& ckpt_flag, const std::string& dataset, const std::string& out) {
    const auto ckpt = load_checkpoint(checkpoint_path(ckpt_flag));
    Config c;
    auto generator = load_generator(ckpt, &c);
    std::optional<Discriminator> d_acc;
    if (ckpt.meta.value("kind", "") == "train_state") {
        d_acc = Discriminator(kAccessoryClasses, c.render.resolution, c.train.disc_channels);
        restore_module(ckpt, "d_accessory", **d_acc);
    }
    const auto report = evaluate(generator, c, load_pacmask(dataset), d_acc ? &*d_acc : nullptr);
    auto j = report.to_json();
    j["config"] = to_json(c);
    write_json(out, j);
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct GenerateArgs {
    std::string ckpt, pose = "0,0", out = "out";
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> accessory_seeds;
    std::uint64_t texture_seed = 0;
    bool no_accs = false;
};

int run_generate(const GenerateArgs& a) {
    const auto engine = Engine::from_checkpoint(load_checkpoint(checkpoint_path(a.ckpt)));
    const auto pose = pose_from(a.pose, engine->config().render);
    auto session = engine->create_session("cli", a.seed, pose);
    session.accs = !a.no_accs;
    for (size_t i = 0; i < a.accessory_seeds.size(); ++i)
        session.accessories.push_back(engine->sample_accessory(a.accessory_seeds[i], a.texture_seed + i));
    write_render(a.out, engine->render(session, pose));
    Service describe(engine);
    write_json(fs::path(a.out) / "session.json", describe.describe(session));
    std::cout << a.out << "\n";
    return 0;
}

struct Scribble2AccArgs {
    std::string ckpt, scribble, pose = "0,0", out = "out";
    std::uint64_t portrait_seed = 0, texture_seed = 0;
};

int run_scribble2acc(const Scribble2AccArgs& a) {
    const auto engine = Engine::from_checkpoint(load_checkpoint(checkpoint_path(a.ckpt)));
    const auto pose = pose_from(a.pose, engine->config().render);
    auto session = engine->create_session("cli", a.portrait_seed, pose);
    const ScribbleMap scribble{decode_label_png(read_file(a.scribble)), ScribbleProvenance::HandDrawn};
    session.accessories.push_back(engine->scribble_accessory(session, scribble, a.texture_seed));
    write_render(a.out, engine->render(session, pose));
    Service describe(engine);
    write_json(fs::path(a.out) / "session.json", describe.describe(session));
    std::cout << a.out << "\n";
    return 0;
}

int run_serve(const std::string& ckpt_flag, const std::string& host, int port) {
    const auto engine = Engine::from_checkpoint(load_checkpoint(checkpoint_path(ckpt_flag)));
    Service service(engine);
    HttpServer server(service);
    const int bound = server.bind(host, port);
    std::cerr << "listening on " << host << ":" << bound << " (weights " << engine->weights_hash().substr(0, 12)
              << ")\n";
    server.listen();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pomo3d: compositional 3D portrait generation with accessories"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Intra-op threads")->default_val(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Adversarial training of the generator");
    t->add_option("--config", train.config, "JSON config applied on top of the preset");
    t->add_option("--preset", train.preset, "Base preset")->check(CLI::IsMember({"desk", "paper", "reduced"}));
    t->add_option("--resume", train.resume, "Training-state checkpoint to continue from");
    t->add_option("--data", train.data, "PAC-Mask directory (default: synthetic shapes)");
    t->add_option("--synthetic-n", train.synthetic_n, "Synthetic source samples when --data is absent");
    t->add_option("--steps", train.steps, "Override train.total_steps");
    t->add_option("--out", train.out, "Run directory");

    ScribbleArgs scr;
    auto* ts = app.add_subcommand("train-scribble", "Train the scribble encoder and codebook on a frozen generator");
    ts->add_option("--ckpt", scr.ckpt, "Generator checkpoint");
    ts->add_option("--data", scr.data, "PAC-Mask directory (default: synthetic shapes)");
    ts->add_option("--steps", scr.steps);
    ts->add_option("--synthetic-n", scr.synthetic_n);
    ts->add_option("--seed", scr.seed);
    ts->add_option("--out", scr.out, "Output checkpoint");

    auto* pm = app.add_subcommand("pacmask", "Dataset tools");
    pm->require_subcommand(1);
    std::string pm_in, pm_out, pm_preset = "desk";
    std::int64_t pm_n = 1000;
    std::uint64_t pm_seed = 0;
    bool pm_raw = false;
    auto* pb = pm->add_subcommand("build", "Build the three groups from raw annotated samples");
    pb->add_option("--in", pm_in)->required();
    pb->add_option("--out", pm_out)->required();
    pb->add_option("--preset", pm_preset);
    pb->add_option("--seed", pm_seed);
    auto* ps = pm->add_subcommand("synth", "Write a seeded synthetic dataset");
    ps->add_option("--out", pm_out)->required();
    ps->add_option("--n", pm_n)->required();
    ps->add_option("--seed", pm_seed)->required();
    ps->add_option("--preset", pm_preset);
    ps->add_flag("--raw", pm_raw, "Write raw annotated samples instead of built groups");
    auto* pr = pm->add_subcommand("bias-report", "Accessory/attribute mutual information");
    pr->add_option("--in", pm_in)->required();
    pr->add_option("--out", pm_out)->required();

    std::string ev_ckpt, ev_data, ev_out = "report.json";
    auto* ev = app.add_subcommand("evaluate", "FID/KID/FMD/alignment/FV-ID/diversity report");
    ev->add_option("--ckpt", ev_ckpt);
    ev->add_option("--dataset", ev_data)->required();
    ev->add_option("--out", ev_out);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Render a portrait with sampled accessories");
    g->add_option("--ckpt", gen.ckpt);
    g->add_option("--seed", gen.seed, "Portrait identity seed");
    g->add_option("--accessory-seed", gen.accessory_seeds, "Repeat to stack accessories");
    g->add_option("--texture-seed", gen.texture_seed);
    g->add_option("--pose", gen.pose, "yaw,pitch in radians");
    g->add_flag("--no-accs", gen.no_accs, "Render the bare portrait");
    g->add_option("--out", gen.out, "Output directory");

    Scribble2AccArgs s2a;
    auto* sa = app.add_subcommand("scribble2acc", "Turn an accessory scribble into a 3D accessory");
    sa->add_option("--ckpt", s2a.ckpt);
    sa->add_option("--portrait-seed", s2a.portrait_seed)->required();
    sa->add_option("--scribble", s2a.scribble, "8-bit label PNG with accessory ids 0..4 at render resolution")->required();
    sa->add_option("--texture-seed", s2a.texture_seed);
    sa->add_option("--pose", s2a.pose, "yaw,pitch in radians");
    sa->add_option("--out", s2a.out, "Output directory");

    std::string sv_ckpt, sv_host = "127.0.0.1";
    int sv_port = 8080;
    auto* sv = app.add_subcommand("serve", "HTTP API for interactive editing");
    sv->add_option("--ckpt", sv_ckpt);
    sv->add_option("--port", sv_port);
    sv->add_option("--host", sv_host);

    CLI11_PARSE(app, argc, argv);
    torch::set_num_threads(std::max(1, threads));
    try {
        if (t->parsed()) return run_train(train);
        if (ts->parsed()) return run_train_scribble(scr);
        if (pb->parsed()) return run_pacmask_build(pm_in, pm_out, pm_preset, pm_seed);
        if (ps->parsed()) return run_pacmask_synth(pm_out, pm_n, pm_seed, pm_preset, pm_raw);
        if (pr->parsed()) return run_bias_report(pm_in, pm_out);
        if (ev->parsed()) return run_evaluate(ev_ckpt, ev_data, ev_out);
        if (g->parsed()) return run_generate(gen);
        if (sa->parsed()) return run_scribble2acc(s2a);
        if (sv->parsed()) return run_serve(sv_ckpt, sv_host, sv_port);
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
