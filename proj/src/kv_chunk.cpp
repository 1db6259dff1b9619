#include "tierkv/kv_chunk.hpp"

#include <cstring>
#include <stdexcept>

namespace tierkv {

KVChunk KVChunk::from_payload(ChunkKey key, uint32_t token_count, uint32_t num_layers,
                              uint32_t bytes_per_token, std::vector<uint8_t> payload) {
    if (payload.size() != size_t(num_layers) * token_count * bytes_per_token)
        throw std::invalid_argument("KVChunk payload size mismatch");
    KVChunk c;
    c.key_ = std::move(key);
    c.token_count_ = token_count;
    c.num_layers_ = num_layers;
    c.bytes_per_token_ = bytes_per_token;
    c.payload_ = std::make_shared<const std::vector<uint8_t>>(std::move(payload));
    return c;
}

KVChunkBuilder::KVChunkBuilder(ChunkKey key, uint32_t token_count, uint32_t num_layers,
                               uint32_t bytes_per_token)
    : key_(std::move(key)),
      token_count_(token_count),
      num_layers_(num_layers),
      bytes_per_token_(bytes_per_token),
      payload_(size_t(num_layers) * token_count * bytes_per_token) {
    if (token_count == 0 || num_layers == 0 || bytes_per_token == 0)
        throw std::invalid_argument("KVChunkBuilder dimensions must be positive");
}

MutByteSpan KVChunkBuilder::layer(uint32_t layer_id) {
    if (layer_id >= num_layers_) throw std::out_of_range("layer id out of range");
    size_t lb = size_t(token_count_) * bytes_per_token_;
    return MutByteSpan(payload_.data() + size_t(layer_id) * lb, lb);
}

void KVChunkBuilder::set_layer(uint32_t layer_id, ByteSpan bytes) {
    MutByteSpan dst = layer(layer_id);
    if (bytes.size() != dst.size()) throw std::invalid_argument("layer byte size mismatch");
    std::memcpy(dst.data(), bytes.data(), bytes.size());
}

KVChunk KVChunkBuilder::seal() && {
    return KVChunk::from_payload(std::move(key_), token_count_, num_layers_, bytes_per_token_,
                                 std::move(payload_));
}

}  // namespace tierkv
