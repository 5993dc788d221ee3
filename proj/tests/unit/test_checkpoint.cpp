#include <cstring>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "fixtures.hpp"
#include "pomo3d/checkpoint.hpp"
#include "pomo3d/errors.hpp"
#include "pomo3d/hash.hpp"
#include "pomo3d/training.hpp"

using namespace pomo3d;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint c;
    c.meta = {{"step", 12}, {"note", "x"}};
    c.tensors["a/f32"] = torch::arange(12, torch::kFloat32).view({3, 4});
    c.tensors["b/i64"] = torch::tensor({-1, 5, 7}, torch::kInt64);
    c.tensors["c/f64"] = torch::randn({2, 2, 2}, torch::kFloat64);
    c.tensors["d/scalar"] = torch::tensor(3.5);
    return c;
}

}  // namespace

TEST(Checkpoint, SerializeRoundTrip) {
    auto c = sample_checkpoint();
    auto bytes = serialize_checkpoint(c);
    auto back = deserialize_checkpoint(bytes);
    EXPECT_EQ(back.meta, c.meta);
    ASSERT_EQ(back.tensors.size(), c.tensors.size());
    for (const auto& [name, t] : c.tensors) {
        EXPECT_EQ(back.at(name).scalar_type(), t.scalar_type()) << name;
        EXPECT_TRUE(torch::equal(back.at(name), t)) << name;
    }
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    EXPECT_THROW(back.at("missing"), Error);
}

TEST(Checkpoint, DetectsEverySingleByteFlip) {
    auto bytes = serialize_checkpoint(sample_checkpoint());
    for (size_t i = 0; i < bytes.size(); i += 7) {
        auto bad = bytes;
        bad[i] ^= 0x5A;
        EXPECT_ANY_THROW(deserialize_checkpoint(bad)) << "offset " << i;
    }
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 1;
    EXPECT_THROW(deserialize_checkpoint(flipped), CorruptionError);
}

TEST(Checkpoint, DetectsTruncationAndBadMagic) {
    auto bytes = serialize_checkpoint(sample_checkpoint());
    std::vector<std::uint8_t> half(bytes.begin(), bytes.begin() + bytes.size() / 2);
    EXPECT_THROW(deserialize_checkpoint(half), CorruptionError);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(deserialize_checkpoint(bad), CorruptionError);
    EXPECT_THROW(deserialize_checkpoint(std::vector<std::uint8_t>{}), CorruptionError);
}

TEST(Checkpoint, NewerVersionIsRejected) {
    auto bytes = serialize_checkpoint(sample_checkpoint());
    std::uint32_t v = kCheckpointVersion + 1;
    std::memcpy(bytes.data() + 8, &v, sizeof v);
    // re-seal so that only the version is wrong
    std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 32);
    auto digest = sha256(body);
    std::copy(digest.begin(), digest.end(), bytes.end() - 32);
    EXPECT_THROW(deserialize_checkpoint(bytes), VersionError);
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
    fixture::TempDir dir("ckpt");
    auto c = sample_checkpoint();
    save_checkpoint(dir / "m.ckpt", c);
    auto back = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(back.meta, c.meta);
    EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), NotFound);
}

TEST(Checkpoint, GeneratorRestoresBitExactly) {
    auto config = fixture::small_config();
    auto g = make_generator(config, 5);
    auto ckpt = generator_checkpoint(g, config);
    Config loaded_config;
    auto back = load_generator(deserialize_checkpoint(serialize_checkpoint(ckpt)), &loaded_config);
    EXPECT_EQ(module_hash(*back), module_hash(*g));
    EXPECT_EQ(to_json(loaded_config), to_json(config));
    auto other = make_generator(config, 6);
    EXPECT_NE(module_hash(*other), module_hash(*g));
}

TEST(Checkpoint, RestoreRejectsShapeMismatchAndMissingTensors) {
    auto config = fixture::small_config();
    auto g = make_generator(config, 1);
    Checkpoint c;
    store_module(c, "generator", *g);
    auto wide = config;
    wide.latent.d_w *= 2;
    auto other = make_generator(wide, 1);
    EXPECT_THROW(restore_module(c, "generator", *other), ConfigError);
    auto first = c.tensors.begin()->first;
    c.tensors.erase(first);
    auto same = make_generator(config, 1);
    EXPECT_THROW(restore_module(c, "generator", *same), CorruptionError);
}

TEST(Checkpoint, MakeGeneratorIsAFunctionOfTheSeed) {
    auto config = fixture::small_config();
    EXPECT_EQ(module_hash(*make_generator(config, 9)), module_hash(*make_generator(config, 9)));
}
