#include "tierkv/paged_store.hpp"

#include <algorithm>
#include <cstring>

namespace tierkv {

PagedKVStore::PagedKVStore(ModelSpec spec, uint32_t num_pages) : spec_(std::move(spec)) {
    pool_.resize(size_t(num_pages) * spec_.page_bytes());
    pages_.resize(num_pages);
    free_list_.reserve(num_pages);
    // Stack order: page 0 is handed out first.
    for (uint32_t i = num_pages; i > 0; --i) free_list_.push_back(i - 1);
}

Result<std::vector<PageId>> PagedKVStore::alloc_pages(QueryId query, size_t n) {
    std::lock_guard lock(mu_);
    if (free_list_.size() < n) {
        return Status{Errc::out_of_pages,
                      "need " + std::to_string(n) + " pages, " +
                          std::to_string(free_list_.size()) + " free"};
    }
    std::vector<PageId> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        PageId id = free_list_.back();
        free_list_.pop_back();
        pages_[id] = PageMeta{query, kNoLayer, false};
        out.push_back(id);
    }
    auto& owned = owned_[query];
    owned.insert(owned.end(), out.begin(), out.end());
    return out;
}

void PagedKVStore::bind_layer(QueryId query, uint32_t layer, const std::vector<PageId>& pages) {
    std::lock_guard lock(mu_);
    auto& table = page_table_[query];
    if (table.size() <= layer) table.resize(layer + 1);
    table[layer] = pages;
    for (PageId id : pages) pages_[id].layer = layer;
}

std::vector<PageId> PagedKVStore::layer_pages(QueryId query, uint32_t layer) const {
    std::lock_guard lock(mu_);
    auto it = page_table_.find(query);
    if (it == page_table_.end() || it->second.size() <= layer) return {};
    return it->second[layer];
}

std::vector<PageId> PagedKVStore::release_query(QueryId query) {
    std::lock_guard lock(mu_);
    auto it = owned_.find(query);
    if (it == owned_.end()) return {};
    std::vector<PageId> freed = std::move(it->second);
    owned_.erase(it);
    page_table_.erase(query);
    for (PageId id : freed) {
        pages_[id] = PageMeta{};
        free_list_.push_back(id);
    }
    return freed;
}

size_t PagedKVStore::free_page_count() const {
    std::lock_guard lock(mu_);
    return free_list_.size();
}

size_t PagedKVStore::allocated_page_count() const {
    std::lock_guard lock(mu_);
    return pages_.size() - free_list_.size();
}

MutByteSpan PagedKVStore::page_data(PageId id) {
    return MutByteSpan{pool_.data() + size_t(id) * spec_.page_bytes(), spec_.page_bytes()};
}

ByteSpan PagedKVStore::page_data(PageId id) const {
    return ByteSpan{pool_.data() + size_t(id) * spec_.page_bytes(), spec_.page_bytes()};
}

void PagedKVStore::mark_populated(PageId id, uint32_t layer) {
    std::lock_guard lock(mu_);
    pages_[id].layer = layer;
    pages_[id].populated = true;
}

bool PagedKVStore::populated(PageId id) const {
    std::lock_guard lock(mu_);
    return pages_[id].populated;
}

Status PagedKVStore::check_readable(const std::vector<PageId>& pages, uint32_t layer,
                                    size_t token_count) const {
    size_t capacity = pages.size() * spec_.page_tokens;
    if (token_count > capacity) {
        return Status{Errc::size_mismatch, std::to_string(token_count) + " tokens across " +
                                               std::to_string(pages.size()) + " pages"};
    }
    std::lock_guard lock(mu_);
    for (PageId id : pages) {
        if (id >= pages_.size()) return Status{Errc::invalid_argument, "page id out of range"};
        const PageMeta& meta = pages_[id];
        if (!meta.populated || meta.layer != layer) {
            return Status{Errc::unpopulated_page,
                          "page " + std::to_string(id) + " layer " + std::to_string(layer)};
        }
    }
    return Status::success();
}

Result<std::vector<uint8_t>> PagedKVStore::gather_tokens(const std::vector<PageId>& pages,
                                                         uint32_t layer,
                                                         size_t token_count) const {
    std::vector<uint8_t> out(token_count * spec_.bytes_per_token_per_layer);
    Status st = gather_tokens_into(pages, layer, token_count,
                                   MutByteSpan{out.data(), out.size()});
    if (!st.ok()) return st;
    return out;
}

Status PagedKVStore::gather_tokens_into(const std::vector<PageId>& pages, uint32_t layer,
                                        size_t token_count, MutByteSpan out) const {
    if (out.size() != token_count * spec_.bytes_per_token_per_layer) {
        return Status{Errc::size_mismatch, "gather output size"};
    }
    Status st = check_readable(pages, layer, token_count);
    if (!st.ok()) return st;
    size_t offset = 0;
    size_t remaining = token_count * spec_.bytes_per_token_per_layer;
    for (PageId id : pages) {
        if (remaining == 0) break;
        size_t take = std::min(remaining, spec_.page_bytes());
        std::memcpy(out.data() + offset, page_data(id).data(), take);
        offset += take;
        remaining -= take;
    }
    return Status::success();
}

Result<std::vector<uint8_t>> PagedKVStore::gather_pages(const std::vector<PageId>& pages,
                                                        uint32_t layer) const {
    return gather_tokens(pages, layer, pages.size() * spec_.page_tokens);
}

Status PagedKVStore::scatter_tokens(ByteSpan buffer, const std::vector<PageId>& pages,
                                    uint32_t layer, size_t token_count) {
    if (buffer.size() != token_count * spec_.bytes_per_token_per_layer) {
        return Status{Errc::size_mismatch, "scatter input size"};
    }
    if (token_count > pages.size() * spec_.page_tokens) {
        return Status{Errc::size_mismatch, "scatter exceeds page capacity"};
    }
    {
        std::lock_guard lock(mu_);
        for (PageId id : pages) {
            if (id >= pages_.size()) return Status{Errc::invalid_argument, "page id out of range"};
            if (pages_[id].owner == kFree) {
                return Status{Errc::invalid_argument, "scatter into free page"};
            }
        }
    }
    size_t offset = 0;
    size_t remaining = buffer.size();
    for (PageId id : pages) {
        if (remaining == 0) break;
        size_t put = std::min(remaining, spec_.page_bytes());
        std::memcpy(page_data(id).data(), buffer.data() + offset, put);
        offset += put;
        remaining -= put;
        mark_populated(id, layer);
    }
    return Status::success();
}

Status PagedKVStore::scatter_pages(ByteSpan buffer, const std::vector<PageId>& pages,
                                   uint32_t layer) {
    return scatter_tokens(buffer, pages, layer, pages.size() * spec_.page_tokens);
}

}  // namespace tierkv
