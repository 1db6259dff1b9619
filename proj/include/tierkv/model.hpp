#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tierkv {

// Layout of the simulated model's KV data. The desk-scale default keeps page
// sizes in the tens-of-KB range typical of paged-attention engines.
struct ModelSpec {
    uint32_t num_layers = 8;
    uint32_t bytes_per_token_per_layer = 4096;
    uint32_t page_tokens = 16;
    std::string model_tag = "sim-8l";
    uint32_t vocab_size = 32000;

    size_t page_bytes() const { return size_t(page_tokens) * bytes_per_token_per_layer; }
    size_t chunk_layer_bytes(size_t chunk_size) const {
        return chunk_size * bytes_per_token_per_layer;
    }
    size_t chunk_bytes(size_t chunk_size) const {
        return size_t(num_layers) * chunk_layer_bytes(chunk_size);
    }

    void validate(size_t chunk_size) const {
        if (num_layers == 0 || bytes_per_token_per_layer == 0 || page_tokens == 0)
            throw std::invalid_argument("ModelSpec fields must be positive");
        if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
        if (chunk_size % page_tokens != 0)
            throw std::invalid_argument("page_tokens must divide chunk_size");
    }
};

}  // namespace tierkv
