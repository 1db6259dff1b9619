#include "tierkv/chunk_file.hpp"

#include <cstring>

namespace tierkv {

void append_chunk_record(std::vector<uint8_t>& out, const KVChunk& chunk) {
    out.insert(out.end(), kChunkMagic, kChunkMagic + 4);
    put_le(out, kChunkVersion);
    put_le(out, model_tag_hash(chunk.key().model_tag));
    out.insert(out.end(), chunk.key().digest.begin(), chunk.key().digest.end());
    put_le(out, uint16_t(chunk.token_count()));
    put_le(out, uint16_t(chunk.num_layers()));
    put_le(out, uint32_t(chunk.bytes_per_token()));
    auto payload = chunk.payload();
    out.insert(out.end(), payload.begin(), payload.end());
    put_le(out, fnv1a64(payload));
}

std::vector<uint8_t> encode_chunk_record(const KVChunk& chunk) {
    std::vector<uint8_t> out;
    out.reserve(kChunkHeaderBytes + chunk.payload_bytes() + 8);
    append_chunk_record(out, chunk);
    return out;
}

Result<ChunkRecordInfo> peek_chunk_record(ByteSpan bytes) {
    if (bytes.size() < kChunkHeaderBytes) {
        return Status{Errc::corrupt_chunk, "record shorter than header"};
    }
    if (std::memcmp(bytes.data(), kChunkMagic, 4) != 0) {
        return Status{Errc::corrupt_chunk, "bad magic"};
    }
    ByteReader reader(bytes.subspan(4));
    uint16_t version = reader.read<uint16_t>();
    if (version != kChunkVersion) {
        return Status{Errc::corrupt_chunk, "unsupported version " + std::to_string(version)};
    }
    ChunkRecordInfo info;
    info.model_tag_hash = reader.read<uint64_t>();
    auto digest = reader.read_bytes(32);
    std::memcpy(info.digest.data(), digest.data(), 32);
    info.token_count = reader.read<uint16_t>();
    info.num_layers = reader.read<uint16_t>();
    info.bytes_per_token = reader.read<uint32_t>();
    if (info.token_count == 0 || info.num_layers == 0 || info.bytes_per_token == 0) {
        return Status{Errc::corrupt_chunk, "empty geometry"};
    }
    return info;
}

Result<KVChunk> parse_chunk_record(ByteSpan bytes, const std::string& model_tag) {
    auto container = parse_chunk_container(bytes);
    if (!container.ok()) return container.status();
    const auto& [info, body] = container.value();
    if (body.size() != info.payload_bytes()) {
        return Status{Errc::corrupt_chunk,
                      "payload size " + std::to_string(body.size()) + " != geometry " +
                          std::to_string(info.payload_bytes())};
    }
    ChunkKey key;
    key.digest = info.digest;
    key.model_tag = model_tag;
    return KVChunk::from_payload(key, info.token_count, info.num_layers, info.bytes_per_token,
                                 std::vector<uint8_t>(body.begin(), body.end()));
}

std::vector<uint8_t> encode_chunk_container(const ChunkRecordInfo& info, ByteSpan body) {
    std::vector<uint8_t> out;
    out.reserve(kChunkHeaderBytes + body.size() + 8);
    out.insert(out.end(), kChunkMagic, kChunkMagic + 4);
    put_le(out, kChunkVersion);
    put_le(out, info.model_tag_hash);
    out.insert(out.end(), info.digest.begin(), info.digest.end());
    put_le(out, info.token_count);
    put_le(out, info.num_layers);
    put_le(out, info.bytes_per_token);
    out.insert(out.end(), body.begin(), body.end());
    put_le(out, fnv1a64(body));
    return out;
}

Result<ChunkContainer> parse_chunk_container(ByteSpan bytes) {
    auto info = peek_chunk_record(bytes);
    if (!info.ok()) return info.status();
    if (bytes.size() < kChunkHeaderBytes + 8) {
        return Status{Errc::corrupt_chunk, "record shorter than header + checksum"};
    }
    ByteSpan body = bytes.subspan(kChunkHeaderBytes, bytes.size() - kChunkHeaderBytes - 8);
    uint64_t stored = get_le<uint64_t>(bytes.data() + bytes.size() - 8);
    if (stored != fnv1a64(body)) {
        return Status{Errc::corrupt_chunk, "payload checksum mismatch"};
    }
    return ChunkContainer{info.value(), body};
}

}  // namespace tierkv
