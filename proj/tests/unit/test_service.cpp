#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <torch/torch.h>

#include "fixtures.hpp"
#include "pomo3d/errors.hpp"
#include "pomo3d/hash.hpp"
#include "pomo3d/service.hpp"

using namespace pomo3d;
using nlohmann::json;

namespace {

std::shared_ptr<const Engine> engine(bool with_scribble) {
    auto c = fixture::small_config();
    auto g = make_generator(c, 21);
    if (!with_scribble) return std::make_shared<Engine>(g, c);
    torch::manual_seed(22);
    ScribbleEncoder enc(c.render.feature_channels, c.render.resolution, c.scribble.encoder_channels, c.latent.d_w);
    AccessoryCodebook cb(c.scribble.codebook_size, c.latent.d_w);
    return std::make_shared<Engine>(g, c, enc, cb);
}

std::string scribble_b64(int res) {
    LabelMap m(res, res, kNone);
    for (int r = 4; r < 8; ++r)
        for (int c = 3; c < 13; ++c) m.at(r, c) = kEyewear;
    return base64_encode(encode_png(m));
}

ServiceResponse call(Service& s, const std::string& method, const std::string& path, const json& body = nullptr) {
    return s.handle(method, path, body.is_null() ? "" : body.dump());
}

}  // namespace

TEST(Service, HealthReportsWeights) {
    auto e = engine(false);
    Service s(e);
    auto r = call(s, "GET", "/healthz");
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["status"], "ok");
    EXPECT_EQ(r.body["weights_sha256"], e->weights_hash());
    EXPECT_EQ(r.body["scribble"], false);
}

TEST(Service, SessionLifecycle) {
    Service s(engine(true));
    auto created = call(s, "POST", "/sessions", {{"seed", 5}});
    ASSERT_EQ(created.status, 201);
    const std::string id = created.body["id"];
    EXPECT_EQ(id, "s1");

    auto added = call(s, "POST", "/sessions/" + id + "/accessories", {{"seed", 9}, {"texture_seed", 3}});
    ASSERT_EQ(added.status, 200) << added.body.dump();
    EXPECT_EQ(added.body["accessories"].size(), 1u);
    EXPECT_EQ(added.body["accessories"][0]["source"], "sampled");

    auto scribbled = call(s, "POST", "/sessions/" + id + "/scribble",
                          {{"scribble_png", scribble_b64(16)}, {"texture_seed", 4}});
    ASSERT_EQ(scribbled.status, 200) << scribbled.body.dump();
    EXPECT_EQ(scribbled.body["accessories"][1]["source"], "scribble");
    EXPECT_TRUE(scribbled.body["accessories"][1].contains("codebook_index"));

    auto rendered = call(s, "POST", "/sessions/" + id + "/render", {{"pose", {{"yaw", 0.3}, {"pitch", 0.05}}}});
    ASSERT_EQ(rendered.status, 200) << rendered.body.dump();
    auto rgb = decode_rgb_png(base64_decode(rendered.body["rgb_png"].get<std::string>()));
    EXPECT_EQ(rgb.height, 32);
    auto por = decode_label_png(base64_decode(rendered.body["portrait_png"].get<std::string>()));
    EXPECT_EQ(por.height, 16);
    for (auto v : por.labels) ASSERT_LT(v, kPortraitClasses);
    auto acc = decode_label_png(base64_decode(rendered.body["accessory_png"].get<std::string>()));
    for (auto v : acc.labels) ASSERT_LT(v, kAccessoryClasses);

    auto removed = call(s, "DELETE", "/sessions/" + id + "/accessories/0");
    ASSERT_EQ(removed.status, 200);
    EXPECT_EQ(removed.body["accessories"].size(), 1u);
    EXPECT_EQ(removed.body["accessories"][0]["source"], "scribble");
}

TEST(Service, ErrorsMapToStatusCodes) {
    Service s(engine(false));
    EXPECT_EQ(call(s, "POST", "/sessions/nope/render").status, 404);
    EXPECT_EQ(call(s, "GET", "/nowhere").status, 404);
    EXPECT_EQ(s.handle("POST", "/sessions", "{not json").status, 400);
    EXPECT_EQ(call(s, "POST", "/sessions", {{"seed", -1}}).status, 400);
    EXPECT_EQ(call(s, "POST", "/sessions", json::object()).status, 400);
    EXPECT_EQ(call(s, "POST", "/sessions", {{"seed", 1}, {"pose", {{"pitch", 2.0}}}}).status, 400);
    ASSERT_EQ(call(s, "POST", "/sessions", {{"seed", 1}}).status, 201);
    EXPECT_EQ(call(s, "GET", "/sessions/s1/render").status, 405);
    EXPECT_EQ(call(s, "DELETE", "/sessions/s1/accessories/0").status, 404);
    EXPECT_EQ(call(s, "DELETE", "/sessions/s1/accessories/x").status, 400);
    EXPECT_EQ(call(s, "POST", "/sessions/s1/scribble", {{"scribble_png", scribble_b64(16)}, {"texture_seed", 1}}).status,
              503);
    EXPECT_EQ(call(s, "POST", "/sessions/s1/accessories", {{"seed", 1}}).status, 400);
    EXPECT_EQ(call(s, "POST", "/sessions/s1/accessories", {{"scribble_png", "%%%"}, {"texture_seed", 1}}).status, 400);
}

TEST(Service, WrongScribbleResolutionIsRejected) {
    Service s(engine(true));
    ASSERT_EQ(call(s, "POST", "/sessions", {{"seed", 1}}).status, 201);
    EXPECT_EQ(call(s, "POST", "/sessions/s1/scribble", {{"scribble_png", scribble_b64(32)}, {"texture_seed", 1}}).status,
              400);
}

TEST(Service, SessionsAreIsolated) {
    Service s(engine(false));
    call(s, "POST", "/sessions", {{"seed", 7}});
    call(s, "POST", "/sessions", {{"seed", 7}});
    auto before = call(s, "POST", "/sessions/s2/render");
    call(s, "POST", "/sessions/s1/accessories", {{"seed", 3}, {"texture_seed", 3}});
    call(s, "POST", "/sessions/s1/render", {{"pose", {{"yaw", -0.4}}}});
    auto after = call(s, "POST", "/sessions/s2/render");
    EXPECT_EQ(before.body["rgb_png"], after.body["rgb_png"]);
    EXPECT_EQ(after.body["session"]["accessories"].size(), 0u);
}

TEST(Service, RemovingAnAccessoryRestoresThePreviousRender) {
    Service s(engine(false));
    call(s, "POST", "/sessions", {{"seed", 8}});
    auto plain = call(s, "POST", "/sessions/s1/render");
    call(s, "POST", "/sessions/s1/accessories", {{"seed", 4}, {"texture_seed", 2}});
    call(s, "DELETE", "/sessions/s1/accessories/0");
    auto again = call(s, "POST", "/sessions/s1/render");
    EXPECT_EQ(plain.body["rgb_png"], again.body["rgb_png"]);
}

TEST(Service, ReplayReproducesResponses) {
    auto e = engine(true);
    Service s(e);
    std::vector<ServiceResponse> live;
    live.push_back(call(s, "POST", "/sessions", {{"seed", 11}}));
    live.push_back(call(s, "POST", "/sessions/s1/accessories", {{"seed", 2}, {"texture_seed", 5}}));
    live.push_back(call(s, "POST", "/sessions/s1/scribble", {{"scribble_png", scribble_b64(16)}, {"texture_seed", 6}}));
    live.push_back(call(s, "POST", "/sessions/s1/render", {{"pose", {{"yaw", 0.2}}}}));
    live.push_back(call(s, "DELETE", "/sessions/s1/accessories/1"));
    live.push_back(call(s, "POST", "/sessions/s1/render"));
    auto replayed = Service::replay(e, s.request_log());
    ASSERT_EQ(replayed.size(), live.size());
    for (size_t i = 0; i < live.size(); ++i) {
        EXPECT_EQ(replayed[i].status, live[i].status) << i;
        EXPECT_EQ(replayed[i].body, live[i].body) << i;
    }
}

TEST(Service, CheckpointedEngineMatchesInMemoryEngine) {
    auto c = fixture::small_config();
    auto g = make_generator(c, 21);
    auto ckpt = generator_checkpoint(g, c);
    auto loaded = Engine::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(ckpt)));
    auto direct = engine(false);
    EXPECT_EQ(loaded->weights_hash(), direct->weights_hash());
    auto session = direct->create_session("a", 3, CameraPose::frontal(c.render));
    EXPECT_EQ(loaded->render(session, session.pose).rgb, direct->render(session, session.pose).rgb);
}

TEST(Service, PoseParsing) {
    RenderConfig r;
    auto p = parse_pose({{"yaw", 0.1}, {"pitch", -0.2}}, r);
    EXPECT_EQ(p, CameraPose::orbit(0.1, -0.2, r));
    auto q = parse_pose({{"extrinsics", p.extrinsics}, {"intrinsics", p.intrinsics}}, r);
    EXPECT_EQ(q, p);
    auto bad = p.extrinsics;
    bad[0] = 5;
    EXPECT_THROW(parse_pose({{"extrinsics", bad}, {"intrinsics", p.intrinsics}}, r), InvalidInput);
    EXPECT_THROW(parse_pose({{"extrinsics", {1, 2}}, {"intrinsics", p.intrinsics}}, r), InvalidInput);
}

TEST(Http, RoundTripOverLoopback) {
    Service s(engine(false));
    HttpServer server(s);
    const int port = server.bind("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    std::thread worker([&] { server.listen(); });
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(120, 0);

    auto health = client.Get("/healthz");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    auto created = client.Post("/sessions", json{{"seed", 3}}.dump(), "application/json");
    ASSERT_TRUE(created);
    EXPECT_EQ(created->status, 201);
    auto body = json::parse(created->body);
    const std::string id = body["id"];
    auto added = client.Post("/sessions/" + id + "/accessories", json{{"seed", 1}, {"texture_seed", 2}}.dump(),
                             "application/json");
    ASSERT_TRUE(added);
    EXPECT_EQ(added->status, 200);
    auto rendered = client.Post("/sessions/" + id + "/render", "{}", "application/json");
    ASSERT_TRUE(rendered);
    EXPECT_EQ(rendered->status, 200);
    auto img = json::parse(rendered->body);
    EXPECT_NO_THROW(decode_rgb_png(base64_decode(img["rgb_png"].get<std::string>())));
    auto removed = client.Delete("/sessions/" + id + "/accessories/0");
    ASSERT_TRUE(removed);
    EXPECT_EQ(removed->status, 200);
    auto missing = client.Delete("/sessions/zzz/accessories/0");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);

    server.stop();
    worker.join();
}
