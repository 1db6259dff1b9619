#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "tierkv/buffer.hpp"
#include "tierkv/chunk_file.hpp"
#include "tierkv/codec.hpp"
#include "tierkv/common.hpp"
#include "tierkv/kv_chunk.hpp"
#include "tierkv/model.hpp"
#include "tierkv/task_pool.hpp"
#include "tierkv/tokens.hpp"

namespace tierkv {

enum class TierKind : uint8_t { ram = 0, disk = 1, remote = 2 };

// Ordering ram < disk < remote defines the fast-to-slow preference axis.
struct TierId {
    TierKind kind = TierKind::ram;
    std::string name;  // remote backend name; empty otherwise

    static TierId ram() { return {TierKind::ram, {}}; }
    static TierId disk() { return {TierKind::disk, {}}; }
    static TierId remote(std::string n) { return {TierKind::remote, std::move(n)}; }

    bool operator==(const TierId&) const = default;
    auto operator<=>(const TierId&) const = default;
    std::string to_string() const;
};

struct TierWriteResult {
    TierId tier;
    Status status;
};

struct PutResult {
    Digest digest = kZeroDigest;
    std::vector<TierWriteResult> tiers;

    bool all_ok() const {
        for (const auto& t : tiers)
            if (!t.status.ok()) return false;
        return true;
    }
};

namespace detail {
struct PutState {
    std::mutex m;
    std::condition_variable cv;
    size_t pending = 0;
    bool done = false;
    PutResult result;
};
}  // namespace detail

// Awaitable completion of one put's tier writes.
class PutHandle {
public:
    PutHandle() = default;
    explicit PutHandle(std::shared_ptr<detail::PutState> st) : st_(std::move(st)) {}

    const PutResult& wait() const;
    bool done() const;
    static PutHandle immediate(PutResult result);

private:
    std::shared_ptr<detail::PutState> st_;
};

struct PutSpec {
    KVChunk chunk;
    std::vector<TierId> tiers;
    bool pin = false;
};

struct ClearResult {
    size_t removed = 0;
    size_t refused = 0;
};

struct StoreEvent {
    enum class Kind : uint8_t { stored, evicted };
    Kind kind = Kind::stored;
    Digest digest = kZeroDigest;
    TierId tier;
    uint32_t token_count = 0;
    bool last_copy = false;  // evicted: no tier holds the entry any more
};

using EventSink = std::function<void(const StoreEvent&)>;

// Slow-tier backend reached over some transport; stores encoded chunk
// records keyed by digest. Pin/compress act on the backend's own copy.
class RemoteBackend {
public:
    virtual ~RemoteBackend() = default;
    virtual Status put_record(ByteSpan record) = 0;
    virtual Result<std::vector<uint8_t>> get_record(const Digest& digest) = 0;
    virtual Result<bool> exists(const Digest& digest) = 0;
    virtual Result<size_t> clear(const std::vector<Digest>& digests) = 0;
    virtual Status pin(const Digest& digest, bool on) = 0;
    virtual Result<size_t> compress(const Digest& digest, const std::string& codec) = 0;
};

struct StoreConfig {
    ModelSpec model;
    size_t chunk_size = 256;
    size_t ram_pool_bytes = 64ull << 20;
    std::string disk_path;  // empty: no disk tier
    size_t disk_quota_bytes = 256ull << 20;
    bool demote_ram_to_disk = false;  // eviction from ram discards by default
    bool fsync_on_write = false;
    size_t io_threads = 4;
};

struct StoreStats {
    size_t entries = 0;
    size_t ram_slots_total = 0;
    size_t ram_slots_used = 0;
    size_t disk_used_bytes = 0;
    size_t ram_entries = 0;
    size_t disk_entries = 0;
    size_t remote_entries = 0;
};

// Hierarchical chunk store: pre-allocated RAM slab, digest-named disk files,
// named remote backends. Entry identity is the chunk digest. All tier writes
// of one put share a single refcounted staging buffer.
class TieredStore {
public:
    explicit TieredStore(StoreConfig cfg);
    ~TieredStore();

    TieredStore(const TieredStore&) = delete;
    TieredStore& operator=(const TieredStore&) = delete;

    void add_remote(const std::string& name, std::shared_ptr<RemoteBackend> backend);
    void set_event_sink(EventSink sink);

    PutHandle put(const KVChunk& chunk, const std::vector<TierId>& tiers, bool pin = false);
    std::vector<PutHandle> batch_put(const std::vector<PutSpec>& specs);

    Result<KVChunk> get(const Digest& digest, const std::vector<TierId>& prefer = {});
    std::vector<Result<KVChunk>> batch_get(const std::vector<Digest>& digests,
                                           const std::vector<TierId>& prefer = {});

    // One layer's payload slice. Raw ram and disk copies are read in place
    // without touching the other layers' bytes; codec copies decode whole.
    Result<std::vector<uint8_t>> get_layer(const Digest& digest, uint32_t layer,
                                           const std::vector<TierId>& prefer = {});

    std::vector<TierId> contains(const Digest& digest) const;
    Status pin(const Digest& digest, const TierId& tier, bool on);
    ClearResult clear(const std::vector<Digest>& digests,
                      const std::optional<TierId>& tier = std::nullopt);
    size_t evict_until(const TierId& tier, size_t bytes_needed);
    Result<size_t> compress_entry(const Digest& digest, const TierId& tier,
                                  const std::string& codec);

    // Delayed decode aggregation: buffered per query, one tier write per
    // completed chunk (plus the partial tail at finish).
    Status decode_open(QueryId query, KeyChain chain, const std::vector<TokenId>& preload_tokens,
                       const std::vector<ByteSpan>& preload_layers,
                       const std::vector<TierId>& tiers, bool pin);
    Result<std::optional<ChunkKey>> decode_append(QueryId query, TokenId token,
                                                  const std::vector<ByteSpan>& per_layer);
    Result<std::vector<ChunkKey>> decode_finish(QueryId query);

    std::vector<TierId> known_tiers() const;
    const StoreConfig& config() const { return cfg_; }
    BufferPool& staging_pool() { return buffers_; }
    StoreStats stats() const;

    // Blocks until every queued event reached the sink.
    void flush_events();

private:
    struct Loc {
        enum class State : uint8_t { writing, present };
        State state = State::writing;
        uint32_t ram_slot = 0;
        size_t stored_bytes = 0;
        bool pinned = false;
        std::string codec;  // empty: raw payload
    };

    struct Entry {
        uint16_t token_count = 0;
        uint16_t num_layers = 0;
        uint32_t bytes_per_token = 0;
        uint32_t share_count = 0;
        uint64_t last_touch = 0;
        std::map<TierId, Loc> tiers;
    };

    struct DecodeState {
        KeyChain chain;
        std::vector<TokenId> tokens;
        std::vector<std::vector<uint8_t>> layers;
        std::vector<TierId> tiers;
        bool pin = false;
        std::vector<PutHandle> puts;
        std::vector<ChunkKey> flushed;
    };

    std::filesystem::path disk_file(const Digest& digest) const;
    void emit(StoreEvent event);
    void pump_loop();
    void touch(Entry& entry);

    // All _locked helpers require mu_ held.
    bool reserve_ram_slot_locked(std::unique_lock<std::mutex>& lock, uint32_t& slot_out);
    bool reserve_disk_locked(std::unique_lock<std::mutex>& lock, size_t bytes);
    size_t evict_until_locked(std::unique_lock<std::mutex>& lock, const TierId& tier,
                              size_t bytes_needed);
    void drop_loc_locked(const Digest& digest, Entry& entry, const TierId& tier);

    void write_tier(const Digest& digest, const TierId& tier, bool pin, SharedBufferRef buf,
                    std::shared_ptr<detail::PutState> state, size_t result_slot);
    void finish_tier(const std::shared_ptr<detail::PutState>& state, size_t result_slot,
                     Status status);
    std::optional<ChunkKey> decode_flush(DecodeState& state);

    StoreConfig cfg_;
    size_t slot_bytes_ = 0;

    mutable std::mutex mu_;
    std::condition_variable write_cv_;
    std::unordered_map<Digest, Entry, DigestHasher> index_;
    std::vector<uint8_t> ram_slab_;
    std::vector<uint32_t> free_slots_;
    size_t disk_used_ = 0;
    uint64_t clock_ = 0;
    std::vector<std::pair<std::string, std::shared_ptr<RemoteBackend>>> remotes_;

    BufferPool buffers_;
    TaskPool pool_;

    std::mutex decode_mu_;
    std::unordered_map<QueryId, DecodeState> decode_;

    EventSink sink_;
    std::mutex event_mu_;
    std::condition_variable event_cv_;
    std::deque<StoreEvent> event_queue_;
    bool event_stop_ = false;
    size_t events_in_flight_ = 0;
    std::thread pump_;
};

}  // namespace tierkv
