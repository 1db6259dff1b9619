#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tierkv/clock.hpp"
#include "tierkv/connector.hpp"
#include "tierkv/cost.hpp"
#include "tierkv/paged_store.hpp"
#include "tierkv/synth.hpp"

namespace tierkv {

struct SimQuery {
    QueryId id = 0;
    std::vector<TokenId> prompt;
    size_t max_output = 0;
    double arrival = 0;
};

struct EngineEvent {
    enum class Kind : uint8_t {
        admitted,
        matched,
        update_state,
        build_meta,
        start_load,
        wait_load,
        compute_begin,
        compute_end,
        start_store,
        wait_store,
        decode_token,
        finished,
    };
    Kind kind = Kind::admitted;
    QueryId query = 0;  // kBatchEvent for batch-scoped phases of a multi-query batch
    uint32_t layer = 0;
    double t = 0;
};

inline constexpr QueryId kBatchEvent = ~QueryId(0);

const char* event_kind_name(EngineEvent::Kind kind);

struct QueryRecord {
    QueryId id = 0;
    Status status;
    std::vector<TokenId> output;
    size_t matched_tokens = 0;
    size_t loaded_tokens = 0;
    double arrival = 0;
    double admitted = 0;
    double first_token = 0;
    double finished = 0;
    std::vector<double> itl;
    double load_stall = 0;  // total time blocked in load waits

    double ttft() const { return first_token - arrival; }
    double latency() const { return finished - admitted; }
};

struct EngineConfig {
    CostModel cost;
    // Compares every loaded page range against recomputation. Output tokens
    // are cache-independent by design, so this is the byte-level oracle that
    // loads delivered the exact KV the engine would have produced.
    bool verify_pages = false;
    // Promotes queued queries' matched chunks while earlier queries run.
    bool prefetch_queued = false;
    size_t max_concurrent = 1;
};

// Deterministic paged-attention engine stand-in. One engine is one logical
// execution context: scheduling, per-layer transfer waits, simulated compute
// (cost-model sleeps), and decode all happen on the caller's thread, while
// the connector overlaps its transfers underneath.
class SimEngine {
public:
    SimEngine(PagedKVStore& pages, Clock& clock, EngineConfig cfg = {});
    SimEngine(PagedKVStore& pages, Connector& connector, Clock& clock, EngineConfig cfg = {});

    QueryRecord run_query(const SimQuery& query);
    // FIFO admission in arrival order, up to max_concurrent queries per
    // scheduling iteration. Out-of-pages admissions are retried after the
    // running batch completes.
    std::vector<QueryRecord> run_schedule(const std::vector<SimQuery>& queries);

    const std::vector<EngineEvent>& events() const { return events_; }
    void clear_events() { events_.clear(); }

    const ModelSpec& spec() const { return pages_.spec(); }
    PagedKVStore& pages() { return pages_; }
    Connector* connector() { return conn_; }
    Clock& clock() { return clock_; }
    const EngineConfig& config() const { return cfg_; }
    uint64_t model_seed() const { return seed_; }

    // Engine compute path: synthesizes KV for tokens at absolute positions
    // [first_pos, first_pos + tokens.size()) into the query's pages.
    void write_tokens(QueryId id, uint32_t layer, TokenSpanView tokens, size_t first_pos);

private:
    struct Running {
        SimQuery query;
        QueryRecord rec;
        size_t blocks = 0;
    };

    void emit(EngineEvent::Kind kind, QueryId query, uint32_t layer = 0);
    Status verify_loaded(const Running& r, uint32_t layer, size_t loaded);
    bool admit(Running& r);
    void run_batch(std::vector<Running>& batch);
    void prefill_batch(std::vector<Running>& batch, ConnectorMetadata& meta);
    void decode_query(Running& r);

    PagedKVStore& pages_;
    Connector* conn_ = nullptr;
    Clock& clock_;
    EngineConfig cfg_;
    uint64_t seed_ = 0;
    std::vector<EngineEvent> events_;
};

// --- prefill/decode disaggregation ------------------------------------------

enum class PdGranularity : uint8_t { chunk, page };

struct PdResult {
    std::vector<TokenId> output;
    double prefill = 0;
    double transfer = 0;
    double decode = 0;
    double total = 0;
    size_t messages = 0;
    size_t payload_bytes = 0;
    std::vector<double> itl;
};

class WireClient;
class PdStaging;

// Runs the query on the prefiller (no output tokens), pushes its KV to the
// decoder's staging over the wire at the given granularity, then scatters
// and decodes on the decoder. Transferred bytes are verified against
// recomputation before decode; a mismatch fails the query.
Result<PdResult> run_pd(const SimQuery& query, SimEngine& prefiller, SimEngine& decoder,
                        WireClient& push, PdStaging& staging, PdGranularity granularity);

}  // namespace tierkv
