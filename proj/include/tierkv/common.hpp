#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace tierkv {

enum class Errc {
    ok = 0,
    not_found,
    tier_full,
    out_of_pages,
    duplicate_key,
    corrupt_chunk,
    size_mismatch,
    unpopulated_page,
    unknown_codec,
    unknown_instance,
    unknown_query,
    inconsistent_alloc,
    chunk_missing,
    pinned,
    protocol_error,
    io_error,
    invalid_argument,
};

const char* errc_name(Errc e);

struct Status {
    Errc code = Errc::ok;
    std::string detail;

    bool ok() const { return code == Errc::ok; }
    explicit operator bool() const { return ok(); }

    static Status success() { return {}; }
    static Status error(Errc c, std::string d = {}) { return {c, std::move(d)}; }

    std::string to_string() const;
};

// Minimal value-or-status wrapper for recoverable failures.
template <typename T>
class Result {
public:
    Result(T value) : v_(std::move(value)) {}
    Result(Status status) : v_(std::move(status)) {
        if (std::get<Status>(v_).ok())
            throw std::logic_error("Result error constructed with ok status");
    }
    Result(Errc code, std::string detail = {}) : Result(Status::error(code, std::move(detail))) {}

    bool ok() const { return std::holds_alternative<T>(v_); }
    explicit operator bool() const { return ok(); }

    T& value() { return std::get<T>(v_); }
    const T& value() const { return std::get<T>(v_); }
    T& operator*() { return value(); }
    const T& operator*() const { return value(); }
    T* operator->() { return &value(); }
    const T* operator->() const { return &value(); }

    const Status& status() const {
        static const Status ok_status{};
        return ok() ? ok_status : std::get<Status>(v_);
    }
    Errc code() const { return ok() ? Errc::ok : status().code; }

    // Throws on error; for call sites where failure is a bug.
    T take() {
        if (!ok()) throw std::runtime_error("Result::take on error: " + status().to_string());
        return std::move(std::get<T>(v_));
    }

private:
    std::variant<T, Status> v_;
};

using ByteSpan = std::span<const uint8_t>;
using MutByteSpan = std::span<uint8_t>;

using QueryId = uint64_t;

// --- little-endian scalar IO ------------------------------------------------

template <typename T>
inline void put_le(std::string& out, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
inline void put_le(std::vector<uint8_t>& out, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (size_t i = 0; i < sizeof(T); ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xff));
}

template <typename T>
inline T get_le(const uint8_t* p) {
    static_assert(std::is_unsigned_v<T>);
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

// Cursor over a byte buffer; throws std::out_of_range past the end.
class ByteReader {
public:
    explicit ByteReader(ByteSpan data) : data_(data) {}

    template <typename T>
    T read() {
        need(sizeof(T));
        T v = get_le<T>(data_.data() + pos_);
        pos_ += sizeof(T);
        return v;
    }

    ByteSpan read_bytes(size_t n) {
        need(n);
        ByteSpan s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::string read_string16() {
        uint16_t n = read<uint16_t>();
        ByteSpan s = read_bytes(n);
        return std::string(reinterpret_cast<const char*>(s.data()), s.size());
    }

    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(size_t n) const {
        if (data_.size() - pos_ < n) throw std::out_of_range("ByteReader: truncated payload");
    }
    ByteSpan data_;
    size_t pos_ = 0;
};

inline void put_string16(std::string& out, const std::string& s) {
    if (s.size() > 0xffff) throw std::length_error("string16 overflow");
    put_le<uint16_t>(out, static_cast<uint16_t>(s.size()));
    out.append(s);
}

inline void put_bytes(std::string& out, ByteSpan b) {
    out.append(reinterpret_cast<const char*>(b.data()), b.size());
}

inline void put_string16(std::vector<uint8_t>& out, const std::string& s) {
    if (s.size() > 0xffff) throw std::length_error("string16 overflow");
    put_le<uint16_t>(out, static_cast<uint16_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

inline void put_bytes(std::vector<uint8_t>& out, ByteSpan b) {
    out.insert(out.end(), b.begin(), b.end());
}

// --- small hashing / mixing utilities ---------------------------------------

inline uint64_t fnv1a64(ByteSpan data, uint64_t seed = 0xcbf29ce484222325ull) {
    uint64_t h = seed;
    for (uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::string to_hex(ByteSpan data);

}  // namespace tierkv
