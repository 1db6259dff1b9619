#pragma once

#include <cstdint>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "tierkv/common.hpp"
#include "tierkv/model.hpp"

namespace tierkv {

using PageId = uint32_t;

// Emulation of engine-resident paged KV memory. A page holds page_tokens
// tokens of one layer. Allocation, release, and page-table bookkeeping are
// guarded; raw page data access is not — callers sequence data operations so
// the same page is never written and read concurrently.
class PagedKVStore {
public:
    PagedKVStore(ModelSpec spec, uint32_t num_pages);

    const ModelSpec& spec() const { return spec_; }
    size_t page_bytes() const { return spec_.page_bytes(); }
    uint32_t pool_pages() const { return uint32_t(pages_.size()); }

    // Atomically removes n pages from the free list and binds them to the
    // query. Fails with out_of_pages leaving state unchanged.
    Result<std::vector<PageId>> alloc_pages(QueryId query, size_t n);

    // Records the per-layer ordering of a query's pages.
    void bind_layer(QueryId query, uint32_t layer, const std::vector<PageId>& pages);
    std::vector<PageId> layer_pages(QueryId query, uint32_t layer) const;

    // Returns every page held by the query to the free list.
    std::vector<PageId> release_query(QueryId query);

    size_t free_page_count() const;
    size_t allocated_page_count() const;

    MutByteSpan page_data(PageId id);
    ByteSpan page_data(PageId id) const;

    // Marks a page as holding valid bytes for `layer` (engine compute path).
    void mark_populated(PageId id, uint32_t layer);
    bool populated(PageId id) const;

    // Copies page payloads, in list order, into one contiguous buffer.
    // token_count bounds the bytes taken from the final page.
    Result<std::vector<uint8_t>> gather_tokens(const std::vector<PageId>& pages, uint32_t layer,
                                               size_t token_count) const;
    Status gather_tokens_into(const std::vector<PageId>& pages, uint32_t layer, size_t token_count,
                              MutByteSpan out) const;
    Result<std::vector<uint8_t>> gather_pages(const std::vector<PageId>& pages,
                                              uint32_t layer) const;

    // Inverse of gather: splits the buffer across the pages in list order.
    Status scatter_tokens(ByteSpan buffer, const std::vector<PageId>& pages, uint32_t layer,
                          size_t token_count);
    Status scatter_pages(ByteSpan buffer, const std::vector<PageId>& pages, uint32_t layer);

private:
    static constexpr QueryId kFree = ~QueryId(0);
    static constexpr uint32_t kNoLayer = ~uint32_t(0);

    struct PageMeta {
        QueryId owner = kFree;
        uint32_t layer = kNoLayer;
        bool populated = false;
    };

    Status check_readable(const std::vector<PageId>& pages, uint32_t layer,
                          size_t token_count) const;

    ModelSpec spec_;
    std::vector<uint8_t> pool_;
    std::vector<PageMeta> pages_;
    std::vector<PageId> free_list_;
    std::unordered_map<QueryId, std::vector<std::vector<PageId>>> page_table_;
    std::unordered_map<QueryId, std::vector<PageId>> owned_;
    mutable std::mutex mu_;
};

}  // namespace tierkv
