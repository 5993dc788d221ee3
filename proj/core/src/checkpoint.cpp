#include "pomo3d/checkpoint.hpp"

#include <cstring>
#include <span>

#include <torch/torch.h>

#include "pomo3d/errors.hpp"
#include "pomo3d/hash.hpp"
#include "pomo3d/image_io.hpp"

namespace pomo3d {
namespace {

constexpr char kMagic[8] = {'P', 'O', 'M', 'O', '3', 'D', 'C', 'K'};

class Writer {
public:
    template <typename T>
    void put(const T& v) {
        raw(&v, sizeof(T));
    }
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    template <typename T>
    T get() {
        T v;
        raw(&v, sizeof(T));
        return v;
    }
    void raw(void* p, size_t n) {
        if (pos_ + n > bytes_.size()) throw CorruptionError("checkpoint is truncated");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }

private:
    std::span<const std::uint8_t> bytes_;
    size_t pos_ = 0;
};

}  // namespace

const torch::Tensor& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CorruptionError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.put(kCheckpointVersion);
    const std::string meta = ckpt.meta.dump();
    w.put(static_cast<std::uint64_t>(meta.size()));
    w.raw(meta.data(), meta.size());
    w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        auto t = tensor.detach().cpu().contiguous();
        w.put(static_cast<std::uint32_t>(name.size()));
        w.raw(name.data(), name.size());
        w.put(static_cast<std::int8_t>(t.scalar_type()));
        w.put(static_cast<std::uint8_t>(t.dim()));
        for (auto s : t.sizes()) w.put(static_cast<std::int64_t>(s));
        w.put(static_cast<std::uint64_t>(t.nbytes()));
        w.raw(t.data_ptr(), t.nbytes());
    }
    const auto digest = sha256(w.out);
    w.raw(digest.data(), digest.size());
    return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < sizeof(kMagic) + 4 + 32 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CorruptionError("not a checkpoint file");
    }
    const auto body = bytes.first(bytes.size() - 32);
    const auto digest = sha256(body);
    if (std::memcmp(digest.data(), bytes.data() + body.size(), 32) != 0) {
        throw CorruptionError("checkpoint hash mismatch");
    }
    Reader r(body);
    char magic[8];
    r.raw(magic, sizeof(magic));
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ckpt;
    std::string meta(r.get<std::uint64_t>(), '\0');
    r.raw(meta.data(), meta.size());
    try {
        ckpt.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint metadata: ") + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(r.get<std::uint32_t>(), '\0');
        r.raw(name.data(), name.size());
        const auto dtype = static_cast<c10::ScalarType>(r.get<std::int8_t>());
        std::vector<std::int64_t> sizes(r.get<std::uint8_t>());
        for (auto& s : sizes) s = r.get<std::int64_t>();
        const auto nbytes = r.get<std::uint64_t>();
        auto t = torch::empty(sizes, torch::TensorOptions().dtype(dtype));
        if (t.nbytes() != nbytes) throw CorruptionError("tensor '" + name + "' has an inconsistent size");
        r.raw(t.data_ptr(), nbytes);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    write_file(tmp, serialize_checkpoint(ckpt));
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw NotFound("checkpoint not found: " + path.string());
    return deserialize_checkpoint(read_file(path));
}

void store_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& item : module.named_parameters(true)) ckpt.tensors[prefix + "/" + item.key()] = item.value().detach().clone();
    for (const auto& item : module.named_buffers(true)) ckpt.tensors[prefix + "/" + item.key()] = item.value().detach().clone();
}

namespace {

void copy_into(const Checkpoint& ckpt, const std::string& name, torch::Tensor& dst) {
    const auto& src = ckpt.at(name);
    if (!src.sizes().equals(dst.sizes())) {
        throw ConfigError("tensor '" + name + "' has shape " + c10::str(src.sizes()) + ", model expects " +
                          c10::str(dst.sizes()));
    }
    dst.copy_(src);
}

}  // namespace

void restore_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard guard;
    for (auto& item : module.named_parameters(true)) copy_into(ckpt, prefix + "/" + item.key(), item.value());
    for (auto& item : module.named_buffers(true)) copy_into(ckpt, prefix + "/" + item.key(), item.value());
}

void store_adam(Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& optimizer) {
    size_t index = 0;
    for (auto& group : optimizer.param_groups()) {
        for (auto& p : group.params()) {
            const std::string base = prefix + "/" + std::to_string(index++);
            auto it = optimizer.state().find(p.unsafeGetTensorImpl());
            if (it == optimizer.state().end()) continue;
            auto& st = static_cast<torch::optim::AdamParamState&>(*it->second);
            ckpt.tensors[base + "/exp_avg"] = st.exp_avg().clone();
            ckpt.tensors[base + "/exp_avg_sq"] = st.exp_avg_sq().clone();
            ckpt.tensors[base + "/step"] = torch::tensor(st.step(), torch::kInt64);
        }
    }
}

void restore_adam(const Checkpoint& ckpt, const std::string& prefix, torch::optim::Adam& optimizer) {
    size_t index = 0;
    optimizer.state().clear();
    for (auto& group : optimizer.param_groups()) {
        for (auto& p : group.params()) {
            const std::string base = prefix + "/" + std::to_string(index++);
            if (!ckpt.contains(base + "/step")) continue;
            auto st = std::make_unique<torch::optim::AdamParamState>();
            st->step(ckpt.at(base + "/step").item<std::int64_t>());
            st->exp_avg(ckpt.at(base + "/exp_avg").clone());
            st->exp_avg_sq(ckpt.at(base + "/exp_avg_sq").clone());
            if (!st->exp_avg().sizes().equals(p.sizes())) throw ConfigError("optimizer state shape mismatch at " + base);
            optimizer.state()[p.unsafeGetTensorImpl()] = std::move(st);
        }
    }
}

}  // namespace pomo3d
