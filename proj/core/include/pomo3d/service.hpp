#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "pomo3d/checkpoint.hpp"
#include "pomo3d/generator.hpp"
#include "pomo3d/pacmask.hpp"
#include "pomo3d/scribble.hpp"

namespace pomo3d {

enum class CodeOrigin : std::uint8_t { Sampled, Scribble };

struct SessionAccessory {
    CodeOrigin origin = CodeOrigin::Sampled;
    std::uint64_t seed = 0;  // sampled accessories
    std::optional<std::int64_t> codebook_index;  // scribble accessories
    std::uint64_t texture_seed = 0;
    torch::Tensor w_acc_g;  // [1, d_w]
    torch::Tensor w_acc_t;  // [1, d_w]
};

struct SessionState {
    std::string id;
    std::uint64_t seed = 0;
    torch::Tensor w_por_g;  // [1, d_w]
    torch::Tensor w_por_t;  // [1, d_w]
    /// Later entries take precedence where masks overlap.
    std::vector<SessionAccessory> accessories;
    CameraPose pose;
    bool accs = true;
};

struct RenderOutput {
    RgbImage rgb;
    LabelMap portrait_labels;   // portrait class ids
    LabelMap accessory_labels;  // accessory class ids, composited through the masks
};

/// Immutable model bundle shared by all sessions.
class Engine {
public:
    Engine(Pomo3DGenerator generator, const Config& config, std::optional<ScribbleEncoder> encoder = std::nullopt,
           std::optional<AccessoryCodebook> codebook = std::nullopt);
    /// Generator plus, when present, the scribble encoder and codebook.
    static std::shared_ptr<Engine> from_checkpoint(const Checkpoint& ckpt);

    /// Portrait identity from `seed` through the fixed-pose inference mapping.
    SessionState create_session(const std::string& id, std::uint64_t seed, const CameraPose& pose) const;
    SessionAccessory sample_accessory(std::uint64_t seed, std::uint64_t texture_seed) const;
    /// Throws Unavailable if no scribble modules are loaded.
    SessionAccessory scribble_accessory(const SessionState& session, const ScribbleMap& scribble,
                                        std::uint64_t texture_seed) const;
    torch::Tensor texture_code(std::uint64_t texture_seed) const;

    ComposeRequest compose_request(const SessionState& session, const CameraPose& pose) const;
    RenderOutput render(const SessionState& session, const CameraPose& pose) const;

    bool has_scribble() const { return encoder_.has_value(); }
    const Config& config() const { return config_; }
    Pomo3DGenerator generator() const { return generator_; }
    const std::string& weights_hash() const { return weights_hash_; }

private:
    Pomo3DGenerator generator_;
    Config config_;
    std::optional<ScribbleEncoder> encoder_;
    std::optional<AccessoryCodebook> codebook_;
    std::string weights_hash_;
};

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

struct LoggedRequest {
    std::string method;
    std::string path;
    std::string body;
};

/// Transport-independent request handling: JSON in, JSON out. Session ids are
/// sequential, so replaying a request log against the same checkpoint
/// reproduces every response.
class Service {
public:
    explicit Service(std::shared_ptr<const Engine> engine);

    ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

    std::vector<LoggedRequest> request_log() const;
    static std::vector<ServiceResponse> replay(std::shared_ptr<const Engine> engine,
                                               const std::vector<LoggedRequest>& log);

    nlohmann::json describe(const SessionState& session) const;

private:
    struct Entry {
        std::mutex mutex;
        SessionState state;
    };
    std::shared_ptr<Entry> find(const std::string& id);

    ServiceResponse create_session(const nlohmann::json& body);
    ServiceResponse add_accessory(const std::string& id, const nlohmann::json& body, bool scribble_only);
    ServiceResponse remove_accessory(const std::string& id, const std::string& index);
    ServiceResponse render(const std::string& id, const nlohmann::json& body);
    ServiceResponse health() const;

    std::shared_ptr<const Engine> engine_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::uint64_t next_id_ = 1;
    std::vector<LoggedRequest> log_;
};

/// Pose from {"yaw","pitch"} (radians) or {"extrinsics":[16],"intrinsics":[9]}.
CameraPose parse_pose(const nlohmann::json& j, const RenderConfig& render);

/// HTTP transport for a Service.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;
    /// Binds host:port; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called from another thread.
    void listen();
    void stop();
private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Blocking HTTP server on host:port.
void serve_http(Service& service, const std::string& host, int port);

}  // namespace pomo3d
