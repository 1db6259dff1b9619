#pragma once

#include <memory>
#include <vector>

#include "tierkv/common.hpp"
#include "tierkv/model.hpp"
#include "tierkv/tokens.hpp"

namespace tierkv {

// Per-layer KV payload for one token chunk. Layer-major contiguous layout:
// layer 0's token_count * bytes_per_token bytes, then layer 1, and so on.
// Immutable once built; copies share the payload.
class KVChunk {
public:
    KVChunk() = default;

    const ChunkKey& key() const { return key_; }
    uint32_t token_count() const { return token_count_; }
    uint32_t num_layers() const { return num_layers_; }
    uint32_t bytes_per_token() const { return bytes_per_token_; }

    size_t layer_bytes() const { return size_t(token_count_) * bytes_per_token_; }
    size_t payload_bytes() const { return size_t(num_layers_) * layer_bytes(); }

    ByteSpan payload() const {
        return payload_ ? ByteSpan(payload_->data(), payload_->size()) : ByteSpan{};
    }
    ByteSpan layer(uint32_t layer_id) const {
        return payload().subspan(size_t(layer_id) * layer_bytes(), layer_bytes());
    }
    // Contiguous payload slice for layers [lo, hi].
    ByteSpan layer_range(uint32_t lo, uint32_t hi) const {
        return payload().subspan(size_t(lo) * layer_bytes(), size_t(hi - lo + 1) * layer_bytes());
    }

    std::shared_ptr<const std::vector<uint8_t>> shared_payload() const { return payload_; }

    bool empty() const { return payload_ == nullptr; }

    friend class KVChunkBuilder;
    static KVChunk from_payload(ChunkKey key, uint32_t token_count, uint32_t num_layers,
                                uint32_t bytes_per_token, std::vector<uint8_t> payload);

private:
    ChunkKey key_;
    uint32_t token_count_ = 0;
    uint32_t num_layers_ = 0;
    uint32_t bytes_per_token_ = 0;
    std::shared_ptr<const std::vector<uint8_t>> payload_;
};

// Accumulates per-layer bytes, then seals into an immutable KVChunk.
class KVChunkBuilder {
public:
    KVChunkBuilder(ChunkKey key, uint32_t token_count, uint32_t num_layers,
                   uint32_t bytes_per_token);

    MutByteSpan layer(uint32_t layer_id);
    void set_layer(uint32_t layer_id, ByteSpan bytes);

    KVChunk seal() &&;

private:
    ChunkKey key_;
    uint32_t token_count_;
    uint32_t num_layers_;
    uint32_t bytes_per_token_;
    std::vector<uint8_t> payload_;
};

}  // namespace tierkv
