#include "tierkv/hash.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace tierkv {

Sha256::Sha256() {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("EVP_DigestInit_ex failed");
    ctx_ = ctx;
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(ByteSpan data) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data.data(), data.size()) != 1)
        throw std::runtime_error("EVP_DigestUpdate failed");
}

Digest Sha256::finish() {
    Digest d;
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), d.data(), &len) != 1 || len != d.size())
        throw std::runtime_error("EVP_DigestFinal_ex failed");
    return d;
}

Digest sha256(ByteSpan data) {
    Sha256 h;
    h.update(data);
    return h.finish();
}

Digest sha256(const std::string& s) {
    return sha256(ByteSpan(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

uint64_t model_tag_hash(const std::string& tag) {
    Digest d = sha256(tag);
    return get_le<uint64_t>(d.data());
}

}  // namespace tierkv
