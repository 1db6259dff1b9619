#pragma once

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "tierkv/buffer.hpp"
#include "tierkv/clock.hpp"
#include "tierkv/paged_store.hpp"
#include "tierkv/store.hpp"

namespace tierkv {

enum class TransferMode : uint8_t { layerwise, blocking };

// One chunk's role in a query's transfer plan. The span is the token range
// the transfer covers; a load span may end mid-chunk when the match is capped
// below a stored chunk's full extent.
struct ChunkDescriptor {
    ChunkKey key;
    ChunkSpan span;
    uint32_t record_tokens = 0;  // token count of the stored record
};

struct ScheduledQuery {
    QueryId id = 0;
    std::vector<TokenId> prompt;
};

struct SchedulerOutput {
    std::vector<ScheduledQuery> queries;
};

struct QueryPlan {
    QueryId id = 0;
    size_t prompt_tokens = 0;
    size_t matched_tokens = 0;
    std::vector<ChunkDescriptor> load_plan;   // covers tokens [0, matched_tokens)
    std::vector<ChunkDescriptor> store_plan;  // chunks absent from the backend at build time
};

namespace detail {
struct BatchState;
}

// Handle to one scheduling iteration's transfer state. Plans are frozen at
// build time; loaded token counts can drop below the match if a source chunk
// disappears mid-flight, and the engine recomputes that tail.
class ConnectorMetadata {
public:
    ConnectorMetadata() = default;

    TransferMode mode() const;
    const std::vector<QueryPlan>& plans() const;
    // Contiguous prefix actually delivered to pages; call after load waits.
    size_t loaded_tokens(QueryId id) const;
    // Per-chunk store statuses, populated by the final store wait.
    std::vector<std::pair<ChunkKey, Status>> store_results(QueryId id) const;

    explicit operator bool() const { return state_ != nullptr; }

private:
    friend class Connector;
    std::shared_ptr<detail::BatchState> state_;
};

// Engine-facing cache interface: match, plan, then per-layer pipelined load
// and store against the tiered backend, plus delayed decode aggregation.
// All calls for one query come from the engine's single execution context;
// background transfers run on an internal pool.
class Connector {
public:
    struct Config {
        TransferMode mode = TransferMode::layerwise;
        std::vector<TierId> store_tiers = {TierId::ram()};
        bool pin_stores = false;
        // Load staging cap; a batch that cannot reserve one layer's bytes
        // falls back to blocking mode instead of failing.
        size_t staging_budget_bytes = 64ull << 20;
        // Models transfer time of one layer's data (slower-tier bandwidth).
        double load_delay_per_layer = 0;
        std::vector<TierId> prefetch_tiers = {TierId::ram()};
        size_t io_threads = 2;
    };

    Connector(TieredStore& store, PagedKVStore& pages, Config cfg);
    Connector(TieredStore& store, PagedKVStore& pages);
    ~Connector();

    Connector(const Connector&) = delete;
    Connector& operator=(const Connector&) = delete;

    // Longest stored prefix, capped at prompt length minus one so the engine
    // always computes at least one token.
    size_t get_num_new_matched_tokens(QueryId id, TokenSpanView prompt);

    // Records the allocation; blocks are 16-token units spanning all layers.
    Status update_state_after_alloc(QueryId id, size_t blocks, size_t num_external_blocks);

    ConnectorMetadata build_connector_meta(const SchedulerOutput& out);

    Status start_load_kv(ConnectorMetadata& meta);
    Status wait_load_kv(ConnectorMetadata& meta, uint32_t layer);
    Status start_store_kv(ConnectorMetadata& meta);
    Status wait_store_kv(ConnectorMetadata& meta, uint32_t layer);

    // Promotes the prompt's matched chunks toward the configured fast tiers
    // in the background; safe to call for queued queries.
    void prefetch(TokenSpanView prompt);
    // Blocks until in-flight prefetch promotions settle.
    void drain_prefetch();

    Status begin_decode(QueryId id);
    Status append_decode(QueryId id, TokenId token, const std::vector<ByteSpan>& per_layer);
    // Flushes the decode tail, waits for this query's stores, drops state.
    Result<std::vector<ChunkKey>> finish_query(QueryId id);

    BufferPool& staging() { return staging_; }
    const Config& config() const { return cfg_; }
    TieredStore& store() { return store_; }

private:
    struct QueryState {
        std::vector<TokenId> prompt;
        size_t lpm = 0;      // uncapped stored-prefix length
        size_t matched = 0;  // capped value reported to the engine
        size_t blocks = 0;
        bool decode_opened = false;
        std::shared_ptr<detail::BatchState> batch;
    };

    Status run_load_layer(detail::BatchState& batch, uint32_t layer);
    void launch_load_layer(std::shared_ptr<detail::BatchState> batch, uint32_t layer);
    std::vector<ChunkDescriptor> plan_stores(TokenSpanView prompt) const;

    TieredStore& store_;
    PagedKVStore& pages_;
    Config cfg_;
    BufferPool staging_;
    TaskPool pool_;

    mutable std::mutex mu_;
    std::unordered_map<QueryId, QueryState> queries_;

    std::mutex prefetch_mu_;
    std::condition_variable prefetch_cv_;
    size_t prefetch_inflight_ = 0;
    std::unordered_map<Digest, bool, DigestHasher> prefetch_seen_;
};

}  // namespace tierkv
