#pragma once

#include "tierkv/common.hpp"
#include "tierkv/model.hpp"
#include "tierkv/tokens.hpp"

namespace tierkv {

// Deterministic stand-ins for model computation. KV bytes and output tokens
// are pure functions of (model, tokens, positions), so any two runs of the
// same query must agree byte-for-byte regardless of caching or transport.

// Fills `out` (bytes_per_token bytes) with the KV payload of one token at one
// layer and absolute sequence position.
void synth_token_kv(uint64_t model_seed, TokenId token, uint32_t layer, uint64_t position,
                    MutByteSpan out);

// Fills a contiguous layer slab for tokens [first_pos, first_pos + n).
void synth_layer_kv(uint64_t model_seed, TokenSpanView tokens, uint32_t layer, uint64_t first_pos,
                    uint32_t bytes_per_token, MutByteSpan out);

uint64_t prompt_fingerprint(uint64_t model_seed, TokenSpanView prompt);

// Output token at output position `index` (0-based) for the given prompt.
TokenId synth_output_token(uint64_t fingerprint, uint64_t index, uint32_t vocab_size);

inline uint64_t model_seed_of(const ModelSpec& spec) {
    return fnv1a64(ByteSpan(reinterpret_cast<const uint8_t*>(spec.model_tag.data()),
                            spec.model_tag.size()));
}

}  // namespace tierkv
