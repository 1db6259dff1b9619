#pragma once

#include <array>
#include <cstdint>
#include <cstring>

#include "tierkv/common.hpp"

namespace tierkv {

using Digest = std::array<uint8_t, 32>;

inline constexpr Digest kZeroDigest{};

// SHA-256 over one or more byte regions.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(ByteSpan data);
    void update(const std::string& s) {
        update(ByteSpan(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
    }
    Digest finish();

private:
    void* ctx_;
};

Digest sha256(ByteSpan data);
Digest sha256(const std::string& s);

// 64-bit tag for a model identifier, used in file and wire headers.
uint64_t model_tag_hash(const std::string& tag);

struct DigestHasher {
    size_t operator()(const Digest& d) const {
        uint64_t v;
        std::memcpy(&v, d.data(), sizeof(v));
        return static_cast<size_t>(v);
    }
};

inline std::string digest_hex(const Digest& d) { return to_hex(ByteSpan(d.data(), d.size())); }

}  // namespace tierkv
