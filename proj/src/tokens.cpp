#include "tierkv/tokens.hpp"

#include <stdexcept>

namespace tierkv {

std::vector<ChunkSpan> chunk_tokens(TokenSpanView tokens, size_t chunk_size) {
    if (chunk_size < 1) throw std::invalid_argument("chunk_size must be >= 1");
    std::vector<ChunkSpan> spans;
    spans.reserve((tokens.size() + chunk_size - 1) / chunk_size);
    for (size_t start = 0; start < tokens.size(); start += chunk_size) {
        spans.push_back({start, std::min(start + chunk_size, tokens.size())});
    }
    return spans;
}

KeyChain::KeyChain(std::string model_tag, size_t chunk_size)
    : model_tag_(std::move(model_tag)), chunk_size_(chunk_size) {
    if (chunk_size_ < 1) throw std::invalid_argument("chunk_size must be >= 1");
}

ChunkKey KeyChain::next(TokenSpanView tokens) {
    if (tokens.empty() || tokens.size() > chunk_size_)
        throw std::invalid_argument("chunk token count out of range");
    std::string header;
    put_string16(header, model_tag_);
    Sha256 h;
    h.update(header);
    h.update(ByteSpan(parent_.data(), parent_.size()));
    std::string body;
    body.reserve(tokens.size() * sizeof(TokenId));
    for (TokenId t : tokens) put_le<uint32_t>(body, t);
    h.update(body);

    ChunkKey key;
    key.digest = h.finish();
    key.model_tag = model_tag_;
    key.chunk_index = index_;
    parent_ = key.digest;
    ++index_;
    return key;
}

void KeyChain::reset(const Digest& parent, uint32_t next_index) {
    parent_ = parent;
    index_ = next_index;
}

std::vector<ChunkKey> chunk_keys(TokenSpanView tokens, size_t chunk_size,
                                 const std::string& model_tag) {
    KeyChain chain(model_tag, chunk_size);
    std::vector<ChunkKey> keys;
    for (const ChunkSpan& span : chunk_tokens(tokens, chunk_size)) {
        keys.push_back(chain.next(tokens.subspan(span.start, span.length())));
    }
    return keys;
}

size_t longest_prefix_match(TokenSpanView tokens, size_t chunk_size,
                            const std::string& model_tag, const KeyIndex& index) {
    KeyChain chain(model_tag, chunk_size);
    size_t matched = 0;
    for (const ChunkSpan& span : chunk_tokens(tokens, chunk_size)) {
        ChunkKey key = chain.next(tokens.subspan(span.start, span.length()));
        if (!index(key)) break;
        matched = span.end;
    }
    return matched;
}

}  // namespace tierkv
