#include "tierkv/codec.hpp"

#include <cmath>
#include <cstring>

namespace tierkv {

namespace {

class IdentityCodec final : public Codec {
public:
    const char* name() const override { return "identity"; }
    bool lossless() const override { return true; }
    std::vector<uint8_t> encode(ByteSpan payload) const override {
        return {payload.begin(), payload.end()};
    }
    Result<std::vector<uint8_t>> decode(ByteSpan blob) const override {
        return std::vector<uint8_t>{blob.begin(), blob.end()};
    }
};

int16_t lane_at(ByteSpan payload, size_t i) {
    return int16_t(uint16_t(payload[2 * i]) | (uint16_t(payload[2 * i + 1]) << 8));
}

// Blob layout: u32 original_len, f32 scale, int8 lanes, raw odd tail byte.
class Q8ScaleCodec final : public Codec {
public:
    const char* name() const override { return "q8-scale"; }
    bool lossless() const override { return false; }

    std::vector<uint8_t> encode(ByteSpan payload) const override {
        size_t lanes = payload.size() / 2;
        float scale = float(q8_scale_of(payload));
        std::vector<uint8_t> out;
        out.reserve(8 + lanes + (payload.size() & 1));
        put_le(out, uint32_t(payload.size()));
        uint32_t scale_bits;
        std::memcpy(&scale_bits, &scale, 4);
        put_le(out, scale_bits);
        for (size_t i = 0; i < lanes; ++i) {
            double q = scale > 0 ? std::round(double(lane_at(payload, i)) / scale) : 0.0;
            q = std::min(127.0, std::max(-127.0, q));
            out.push_back(uint8_t(int8_t(q)));
        }
        if (payload.size() & 1) out.push_back(payload[payload.size() - 1]);
        return out;
    }

    Result<std::vector<uint8_t>> decode(ByteSpan blob) const override {
        if (blob.size() < 8) return Status{Errc::corrupt_chunk, "q8 blob truncated"};
        ByteReader reader(blob);
        uint32_t original_len = reader.read<uint32_t>();
        uint32_t scale_bits = reader.read<uint32_t>();
        float scale;
        std::memcpy(&scale, &scale_bits, 4);
        size_t lanes = original_len / 2;
        if (blob.size() != 8 + lanes + (original_len & 1)) {
            return Status{Errc::corrupt_chunk, "q8 blob size mismatch"};
        }
        std::vector<uint8_t> out(original_len);
        for (size_t i = 0; i < lanes; ++i) {
            int8_t q = int8_t(blob[8 + i]);
            double v = std::round(double(q) * double(scale));
            v = std::min(32767.0, std::max(-32768.0, v));
            auto lane = int16_t(v);
            out[2 * i] = uint8_t(uint16_t(lane) & 0xff);
            out[2 * i + 1] = uint8_t(uint16_t(lane) >> 8);
        }
        if (original_len & 1) out[original_len - 1] = blob[blob.size() - 1];
        return out;
    }
};

const IdentityCodec kIdentity;
const Q8ScaleCodec kQ8;

}  // namespace

const Codec& identity_codec() { return kIdentity; }
const Codec& q8_scale_codec() { return kQ8; }

double q8_scale_of(ByteSpan payload) {
    size_t lanes = payload.size() / 2;
    int32_t max_abs = 0;
    for (size_t i = 0; i < lanes; ++i) {
        int32_t v = lane_at(payload, i);
        max_abs = std::max(max_abs, v < 0 ? -v : v);
    }
    return double(max_abs) / 127.0;
}

double q8_max_lane_error(double scale) { return scale / 2.0 + 1.0; }

const Codec* find_codec(const std::string& name) {
    if (name == kIdentity.name()) return &kIdentity;
    if (name == kQ8.name()) return &kQ8;
    return nullptr;
}

}  // namespace tierkv
