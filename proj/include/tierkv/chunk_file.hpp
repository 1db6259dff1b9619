#pragma once

#include <string>
#include <vector>

#include "tierkv/common.hpp"
#include "tierkv/hash.hpp"
#include "tierkv/kv_chunk.hpp"

namespace tierkv {

// On-disk / on-wire chunk record, little-endian throughout:
//   magic "LMCK" | version u16 | model_tag hash u64 | digest 32B |
//   token_count u16 | num_layers u16 | bytes_per_token_per_layer u32 |
//   payload (layer-major) | fnv1a64(payload) u64
inline constexpr char kChunkMagic[4] = {'L', 'M', 'C', 'K'};
inline constexpr uint16_t kChunkVersion = 1;
inline constexpr size_t kChunkHeaderBytes = 4 + 2 + 8 + 32 + 2 + 2 + 4;

struct ChunkRecordInfo {
    Digest digest = kZeroDigest;
    uint64_t model_tag_hash = 0;
    uint16_t token_count = 0;
    uint16_t num_layers = 0;
    uint32_t bytes_per_token = 0;

    size_t payload_bytes() const {
        return size_t(token_count) * num_layers * bytes_per_token;
    }
};

void append_chunk_record(std::vector<uint8_t>& out, const KVChunk& chunk);
std::vector<uint8_t> encode_chunk_record(const KVChunk& chunk);

// Header-only peek, no payload copy or checksum verification.
Result<ChunkRecordInfo> peek_chunk_record(ByteSpan bytes);
inline size_t chunk_record_bytes(const ChunkRecordInfo& info) {
    return kChunkHeaderBytes + info.payload_bytes() + 8;
}

// Full parse with checksum verification. The record stores only the digest,
// so the returned key carries the given model_tag and chunk_index 0; storage
// identity is digest-only.
Result<KVChunk> parse_chunk_record(ByteSpan bytes, const std::string& model_tag = {});

// Container form: same header and trailing checksum, but the body may be a
// codec blob whose length differs from the header geometry. `bytes` must be
// exactly one record.
std::vector<uint8_t> encode_chunk_container(const ChunkRecordInfo& info, ByteSpan body);
struct ChunkContainer {
    ChunkRecordInfo info;
    ByteSpan body;
};
Result<ChunkContainer> parse_chunk_container(ByteSpan bytes);

}  // namespace tierkv
