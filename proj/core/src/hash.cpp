#include "pomo3d/hash.hpp"

#include <openssl/evp.h>
#include <torch/torch.h>

#include "pomo3d/errors.hpp"

namespace pomo3d {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 initialisation failed");
    }
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(const void* data, size_t size) {
    if (size) EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size);
}

Digest Sha256::finish() {
    Digest d{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), d.data(), &len);
    return d;
}

Digest sha256(std::span<const std::uint8_t> bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.finish();
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 15]);
    }
    return out;
}

namespace {

void hash_tensor(Sha256& h, const torch::Tensor& t) {
    auto c = t.detach().cpu().contiguous();
    for (auto s : c.sizes()) h.update(&s, sizeof(s));
    const auto st = static_cast<std::int8_t>(c.scalar_type());
    h.update(&st, 1);
    h.update(c.data_ptr(), c.nbytes());
}

}  // namespace

std::string module_hash(const torch::nn::Module& module) {
    Sha256 h;
    for (const auto& item : module.named_parameters(true)) {
        h.update(item.key().data(), item.key().size());
        hash_tensor(h, item.value());
    }
    for (const auto& item : module.named_buffers(true)) {
        h.update(item.key().data(), item.key().size());
        hash_tensor(h, item.value());
    }
    const auto d = h.finish();
    return to_hex(d);
}

std::string tensors_hash(const std::vector<torch::Tensor>& tensors) {
    Sha256 h;
    for (const auto& t : tensors) hash_tensor(h, t);
    const auto d = h.finish();
    return to_hex(d);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(static_cast<size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw InvalidInput("base64 length must be a multiple of 4");
    for (char c : text) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/' || c == '=')) {
            throw InvalidInput("invalid base64 character");
        }
    }
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw InvalidInput("malformed base64");
    size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<size_t>(n) - pad);
    return out;
}

}  // namespace pomo3d
