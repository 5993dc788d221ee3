#include "pomo3d/service.hpp"

#include <cmath>
#include <regex>

#include <httplib.h>
#include <torch/torch.h>

#include "pomo3d/errors.hpp"
#include "pomo3d/hash.hpp"
#include "pomo3d/training.hpp"

namespace pomo3d {
using nlohmann::json;

namespace {

constexpr std::uint64_t kIdentityStream = 0x1D;
constexpr std::uint64_t kAccessoryStream = 0xACC;
constexpr std::uint64_t kTextureStream = 0x7E;

LatentBundle inference_codes(Pomo3DGenerator g, const Config& config, std::uint64_t seed, std::uint64_t stream) {
    Rng rng = Rng::derive(seed, stream);
    const auto z = LatentNoise::sample(1, config.latent.d_z, rng);
    return g->mapper->inference_condition(z, CameraPose::frontal(config.render));
}

std::uint64_t seed_from(const json& j, const char* key) {
    if (!j.contains(key)) throw InvalidInput(std::string("missing field '") + key + "'");
    const auto& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw InvalidInput(std::string("field '") + key + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

json pose_json(const CameraPose& pose) {
    return {{"extrinsics", pose.extrinsics}, {"intrinsics", pose.intrinsics}};
}

}  // namespace

CameraPose parse_pose(const json& j, const RenderConfig& render) {
    if (!j.is_object()) throw InvalidInput("pose must be an object");
    CameraPose pose;
    if (j.contains("extrinsics") || j.contains("intrinsics")) {
        const auto e = j.at("extrinsics"), k = j.at("intrinsics");
        if (!e.is_array() || e.size() != 16 || !k.is_array() || k.size() != 9) {
            throw InvalidInput("pose matrices must have 16 and 9 entries");
        }
        for (size_t i = 0; i < 16; ++i) pose.extrinsics[i] = e[i].get<double>();
        for (size_t i = 0; i < 9; ++i) pose.intrinsics[i] = k[i].get<double>();
    } else {
        const double yaw = j.value("yaw", 0.0), pitch = j.value("pitch", 0.0);
        if (!std::isfinite(yaw) || !std::isfinite(pitch) || std::abs(pitch) >= 1.5) {
            throw InvalidInput("pose yaw/pitch out of range");
        }
        pose = CameraPose::orbit(yaw, pitch, render);
    }
    pose.validate();
    return pose;
}

Engine::Engine(Pomo3DGenerator generator, const Config& config, std::optional<ScribbleEncoder> encoder,
               std::optional<AccessoryCodebook> codebook)
    : generator_(std::move(generator)), config_(config), encoder_(std::move(encoder)), codebook_(std::move(codebook)) {
    if (encoder_.has_value() != codebook_.has_value()) throw ConfigError("scribble encoder and codebook come together");
    generator_->eval();
    weights_hash_ = module_hash(*generator_);
}

std::shared_ptr<Engine> Engine::from_checkpoint(const Checkpoint& ckpt) {
    Config config;
    auto generator = load_generator(ckpt, &config);
    if (ckpt.contains("scribble/codebook/entries")) {
        auto [encoder, codebook] = load_scribble_modules(ckpt, config);
        return std::make_shared<Engine>(generator, config, encoder, codebook);
    }
    return std::make_shared<Engine>(generator, config);
}

SessionState Engine::create_session(const std::string& id, std::uint64_t seed, const CameraPose& pose) const {
    torch::NoGradGuard guard;
    const auto codes = inference_codes(generator_, config_, seed, kIdentityStream);
    SessionState s;
    s.id = id;
    s.seed = seed;
    s.w_por_g = codes.w_por_g;
    s.w_por_t = codes.w_por_t;
    s.pose = pose;
    return s;
}

torch::Tensor Engine::texture_code(std::uint64_t texture_seed) const {
    torch::NoGradGuard guard;
    return inference_codes(generator_, config_, texture_seed, kTextureStream).w_acc_t;
}

SessionAccessory Engine::sample_accessory(std::uint64_t seed, std::uint64_t texture_seed) const {
    torch::NoGradGuard guard;
    SessionAccessory a;
    a.origin = CodeOrigin::Sampled;
    a.seed = seed;
    a.texture_seed = texture_seed;
    a.w_acc_g = inference_codes(generator_, config_, seed, kAccessoryStream).w_acc_g;
    a.w_acc_t = texture_code(texture_seed);
    return a;
}

SessionAccessory Engine::scribble_accessory(const SessionState& session, const ScribbleMap& scribble,
                                            std::uint64_t texture_seed) const {
    if (!encoder_) throw Unavailable("the checkpoint has no scribble encoder");
    const int r = config_.render.resolution;
    if (scribble.labels.height != r || scribble.labels.width != r) {
        throw InvalidInput("scribble must be " + std::to_string(r) + "x" + std::to_string(r));
    }
    scribble.validate();
    torch::NoGradGuard guard;
    auto g = generator_;
    const auto portrait = g->render_portrait(session.w_por_g, std::span<const CameraPose>(&session.pose, 1));
    auto encoder = *encoder_;
    const auto inv = invert_scribble(encoder, *codebook_, scribble, portrait.features);
    SessionAccessory a;
    a.origin = CodeOrigin::Scribble;
    a.codebook_index = inv.index;
    a.texture_seed = texture_seed;
    a.w_acc_g = inv.code;
    a.w_acc_t = texture_code(texture_seed);
    return a;
}

ComposeRequest Engine::compose_request(const SessionState& session, const CameraPose& pose) const {
    ComposeRequest req;
    req.w_por_g = session.w_por_g;
    req.w_por_t = session.w_por_t;
    req.poses = {pose};
    req.accs = session.accs;
    for (const auto& a : session.accessories) req.accessories.push_back({a.w_acc_g, a.w_acc_t});
    return req;
}

RenderOutput Engine::render(const SessionState& session, const CameraPose& pose) const {
    pose.validate();
    torch::NoGradGuard guard;
    auto g = generator_;
    const auto res = g->compose(compose_request(session, pose));
    RenderOutput out;
    out.rgb = tensor_to_rgb(res.rgb[0]);
    out.portrait_labels = tensor_to_labels(res.portrait.semantics.labels()[0]);
    out.accessory_labels = tensor_to_labels(res.accessory_semantics.labels()[0]);
    return out;
}

Service::Service(std::shared_ptr<const Engine> engine) : engine_(std::move(engine)) {}

json Service::describe(const SessionState& s) const {
    json accs = json::array();
    for (size_t k = 0; k < s.accessories.size(); ++k) {
        const auto& a = s.accessories[k];
        json item{{"index", k},
                  {"source", a.origin == CodeOrigin::Sampled ? "sampled" : "scribble"},
                  {"texture_seed", a.texture_seed}};
        if (a.origin == CodeOrigin::Sampled) item["seed"] = a.seed;
        if (a.codebook_index) item["codebook_index"] = *a.codebook_index;
        accs.push_back(item);
    }
    return {{"id", s.id}, {"seed", s.seed}, {"accs", s.accs}, {"pose", pose_json(s.pose)}, {"accessories", accs}};
}

std::shared_ptr<Service::Entry> Service::find(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    return it->second;
}

ServiceResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
    {
        std::lock_guard lock(mutex_);
        log_.push_back({method, path, body});
    }
    static const std::regex kSession(R"(^/sessions/([A-Za-z0-9_-]+)/(accessories|render|scribble)$)");
    static const std::regex kAccessory(R"(^/sessions/([A-Za-z0-9_-]+)/accessories/([^/]+)$)");
    try {
        json j = json::object();
        if (!body.empty()) {
            try {
                j = json::parse(body);
            } catch (const json::exception& e) {
                throw InvalidInput(std::string("malformed JSON body: ") + e.what());
            }
            if (!j.is_object()) throw InvalidInput("request body must be a JSON object");
        }
        std::smatch m;
        if (method == "GET" && path == "/healthz") return health();
        if (method == "POST" && path == "/sessions") return create_session(j);
        if (std::regex_match(path, m, kSession)) {
            if (method != "POST") return {405, {{"error", "method not allowed"}}};
            if (m[2] == "accessories") return add_accessory(m[1], j, false);
            if (m[2] == "scribble") return add_accessory(m[1], j, true);
            return render(m[1], j);
        }
        if (std::regex_match(path, m, kAccessory)) {
            if (method != "DELETE") return {405, {{"error", "method not allowed"}}};
            return remove_accessory(m[1], m[2]);
        }
        return {404, {{"error", "no route for " + method + " " + path}}};
    } catch (const NotFound& e) {
        return {404, {{"error", e.what()}}};
    } catch (const InvalidInput& e) {
        return {400, {{"error", e.what()}}};
    } catch (const json::exception& e) {
        return {400, {{"error", e.what()}}};
    } catch (const Unavailable& e) {
        return {503, {{"error", e.what()}}};
    } catch (const Error& e) {
        return {500, {{"error", e.what()}}};
    }
}

ServiceResponse Service::health() const {
    const auto& c = engine_->config();
    return {200,
            {{"status", "ok"},
             {"weights_sha256", engine_->weights_hash()},
             {"preset", c.preset},
             {"render_resolution", c.render.resolution},
             {"output_resolution", c.output_resolution()},
             {"scribble", engine_->has_scribble()}}};
}

ServiceResponse Service::create_session(const json& body) {
    const auto seed = seed_from(body, "seed");
    const auto& render = engine_->config().render;
    const CameraPose pose = body.contains("pose") ? parse_pose(body.at("pose"), render) : CameraPose::frontal(render);
    std::string id;
    {
        std::lock_guard lock(mutex_);
        id = "s" + std::to_string(next_id_++);
    }
    auto entry = std::make_shared<Entry>();
    entry->state = engine_->create_session(id, seed, pose);
    if (body.contains("accs")) entry->state.accs = body.at("accs").get<bool>();
    auto response = describe(entry->state);
    {
        std::lock_guard lock(mutex_);
        sessions_[id] = entry;
    }
    return {201, response};
}

ServiceResponse Service::add_accessory(const std::string& id, const json& body, bool scribble_only) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    const auto texture_seed = seed_from(body, "texture_seed");
    SessionAccessory acc;
    if (body.contains("scribble_png")) {
        const auto bytes = base64_decode(body.at("scribble_png").get<std::string>());
        ScribbleMap scribble{decode_label_png(bytes), ScribbleProvenance::HandDrawn};
        acc = engine_->scribble_accessory(entry->state, scribble, texture_seed);
    } else if (scribble_only) {
        throw InvalidInput("missing field 'scribble_png'");
    } else {
        acc = engine_->sample_accessory(seed_from(body, "seed"), texture_seed);
    }
    entry->state.accessories.push_back(std::move(acc));
    auto d = describe(entry->state);
    return {200, d};
}

ServiceResponse Service::remove_accessory(const std::string& id, const std::string& index) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    std::size_t k = 0;
    try {
        size_t used = 0;
        const auto v = std::stoull(index, &used);
        if (used != index.size()) throw std::invalid_argument("trailing");
        k = static_cast<size_t>(v);
    } catch (const std::exception&) {
        throw InvalidInput("accessory index must be a non-negative integer");
    }
    if (k >= entry->state.accessories.size()) throw NotFound("session has no accessory " + index);
    entry->state.accessories.erase(entry->state.accessories.begin() + static_cast<std::ptrdiff_t>(k));
    return {200, describe(entry->state)};
}

ServiceResponse Service::render(const std::string& id, const json& body) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    if (body.contains("pose")) entry->state.pose = parse_pose(body.at("pose"), engine_->config().render);
    if (body.contains("accs")) entry->state.accs = body.at("accs").get<bool>();
    const auto out = engine_->render(entry->state, entry->state.pose);
    return {200,
            {{"session", describe(entry->state)},
             {"rgb_png", base64_encode(encode_png(out.rgb))},
             {"portrait_png", base64_encode(encode_png(out.portrait_labels))},
             {"accessory_png", base64_encode(encode_png(out.accessory_labels))}}};
}

std::vector<LoggedRequest> Service::request_log() const {
    std::lock_guard lock(mutex_);
    return log_;
}

std::vector<ServiceResponse> Service::replay(std::shared_ptr<const Engine> engine, const std::vector<LoggedRequest>& log) {
    Service service(std::move(engine));
    std::vector<ServiceResponse> out;
    for (const auto& r : log) out.push_back(service.handle(r.method, r.path, r.body));
    return out;
}

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>()) {
    auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
        const auto response = service.handle(req.method, req.path, req.body);
        res.status = response.status;
        res.set_content(response.body.dump(), "application/json");
    };
    impl_->server.Get(".*", handler);
    impl_->server.Post(".*", handler);
    impl_->server.Delete(".*", handler);
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw Error("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::listen() {
    if (!impl_->server.listen_after_bind()) throw Error("HTTP server stopped with an error");
}

void HttpServer::stop() { impl_->server.stop(); }

void serve_http(Service& service, const std::string& host, int port) {
    HttpServer server(service);
    server.bind(host, port);
    server.listen();
}

}  // namespace pomo3d
