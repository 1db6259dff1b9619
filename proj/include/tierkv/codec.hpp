#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tierkv/common.hpp"

namespace tierkv {

// Payload transcoder for at-rest compression. decode(encode(x)) must return
// a buffer of x's exact size; only lossy codecs may alter content, within
// their documented bound.
class Codec {
public:
    virtual ~Codec() = default;
    virtual const char* name() const = 0;
    virtual std::vector<uint8_t> encode(ByteSpan payload) const = 0;
    virtual Result<std::vector<uint8_t>> decode(ByteSpan blob) const = 0;
    virtual bool lossless() const = 0;
};

// Pass-through.
const Codec& identity_codec();

// Payload viewed as signed 16-bit little-endian lanes; one scale per chunk
// (max |lane| / 127), lanes stored as int8. An odd trailing byte is kept raw.
// Bound: per-lane reconstruction error ≤ scale/2 + 1; byte ratio tends to
// 0.5 for large payloads.
const Codec& q8_scale_codec();
double q8_scale_of(ByteSpan payload);
double q8_max_lane_error(double scale);

// nullptr for unknown names.
const Codec* find_codec(const std::string& name);

}  // namespace tierkv
