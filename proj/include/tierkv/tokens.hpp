#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tierkv/common.hpp"
#include "tierkv/hash.hpp"

namespace tierkv {

using TokenId = uint32_t;
using TokenSpanView = std::span<const TokenId>;

// Half-open token index range [start, end).
struct ChunkSpan {
    size_t start = 0;
    size_t end = 0;

    size_t length() const { return end - start; }
    bool operator==(const ChunkSpan&) const = default;
};

// Content identity of one chunk. The digest chains over the whole token
// prefix, so digest equality implies byte-equal prefixes up to and including
// this chunk.
struct ChunkKey {
    Digest digest = kZeroDigest;
    std::string model_tag;
    uint32_t chunk_index = 0;

    bool operator==(const ChunkKey& o) const { return digest == o.digest; }
};

// Tiles [0, tokens.size()) into spans of chunk_size; only the final span may
// be shorter. Empty input yields an empty list.
std::vector<ChunkSpan> chunk_tokens(TokenSpanView tokens, size_t chunk_size);

// Incremental prefix-chained key derivation: feed one chunk's tokens at a
// time, in order.
class KeyChain {
public:
    KeyChain(std::string model_tag, size_t chunk_size);

    ChunkKey next(TokenSpanView chunk_tokens);

    const Digest& parent() const { return parent_; }
    uint32_t next_index() const { return index_; }
    const std::string& model_tag() const { return model_tag_; }
    size_t chunk_size() const { return chunk_size_; }

    // Resumes chaining mid-sequence (e.g. decode continuing after prefill).
    void reset(const Digest& parent, uint32_t next_index);

private:
    std::string model_tag_;
    size_t chunk_size_;
    Digest parent_ = kZeroDigest;
    uint32_t index_ = 0;
};

std::vector<ChunkKey> chunk_keys(TokenSpanView tokens, size_t chunk_size,
                                 const std::string& model_tag);

// Membership oracle over stored chunk keys.
using KeyIndex = std::function<bool(const ChunkKey&)>;

// Number of leading tokens whose chunks are all present in the index.
// Returns k * chunk_size for k leading full chunks, plus the final partial
// chunk's length when that partial is present too.
size_t longest_prefix_match(TokenSpanView tokens, size_t chunk_size,
                            const std::string& model_tag, const KeyIndex& index);

}  // namespace tierkv
