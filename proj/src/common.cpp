#include "tierkv/common.hpp"

namespace tierkv {

const char* errc_name(Errc e) {
    switch (e) {
        case Errc::ok: return "ok";
        case Errc::not_found: return "not_found";
        case Errc::tier_full: return "tier_full";
        case Errc::out_of_pages: return "out_of_pages";
        case Errc::duplicate_key: return "duplicate_key";
        case Errc::corrupt_chunk: return "corrupt_chunk";
        case Errc::size_mismatch: return "size_mismatch";
        case Errc::unpopulated_page: return "unpopulated_page";
        case Errc::unknown_codec: return "unknown_codec";
        case Errc::unknown_instance: return "unknown_instance";
        case Errc::unknown_query: return "unknown_query";
        case Errc::inconsistent_alloc: return "inconsistent_alloc";
        case Errc::chunk_missing: return "chunk_missing";
        case Errc::pinned: return "pinned";
        case Errc::protocol_error: return "protocol_error";
        case Errc::io_error: return "io_error";
        case Errc::invalid_argument: return "invalid_argument";
    }
    return "unknown";
}

std::string Status::to_string() const {
    std::string s = errc_name(code);
    if (!detail.empty()) {
        s += ": ";
        s += detail;
    }
    return s;
}

std::string to_hex(ByteSpan data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

}  // namespace tierkv
