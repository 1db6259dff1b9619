#include "tierkv/synth.hpp"

#include <cstring>

namespace tierkv {

void synth_token_kv(uint64_t model_seed, TokenId token, uint32_t layer, uint64_t position,
                    MutByteSpan out) {
    uint64_t base = splitmix64(model_seed ^ (uint64_t(token) << 32) ^ (uint64_t(layer) << 16) ^
                               splitmix64(position));
    size_t i = 0;
    for (; i + 8 <= out.size(); i += 8) {
        uint64_t word = splitmix64(base + i);
        std::memcpy(out.data() + i, &word, 8);
    }
    if (i < out.size()) {
        uint64_t word = splitmix64(base + i);
        std::memcpy(out.data() + i, &word, out.size() - i);
    }
}

void synth_layer_kv(uint64_t model_seed, TokenSpanView tokens, uint32_t layer, uint64_t first_pos,
                    uint32_t bytes_per_token, MutByteSpan out) {
    if (out.size() != tokens.size() * size_t(bytes_per_token))
        throw std::invalid_argument("synth_layer_kv: output span size mismatch");
    for (size_t t = 0; t < tokens.size(); ++t) {
        synth_token_kv(model_seed, tokens[t], layer, first_pos + t,
                       out.subspan(t * size_t(bytes_per_token), bytes_per_token));
    }
}

uint64_t prompt_fingerprint(uint64_t model_seed, TokenSpanView prompt) {
    uint64_t h = splitmix64(model_seed ^ 0x70726f6d7074ull);
    for (TokenId t : prompt) h = splitmix64(h ^ t);
    return h;
}

TokenId synth_output_token(uint64_t fingerprint, uint64_t index, uint32_t vocab_size) {
    return static_cast<TokenId>(splitmix64(fingerprint ^ (index * 0x9e3779b97f4a7c15ull)) %
                                vocab_size);
}

}  // namespace tierkv
