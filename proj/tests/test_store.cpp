#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <thread>

#include "tierkv/store.hpp"
#include "tierkv/synth.hpp"

using namespace tierkv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tierkv-test-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

class FakeRemote : public RemoteBackend {
public:
    explicit FakeRemote(std::chrono::microseconds delay = {}) : delay_(delay) {}

    Status put_record(ByteSpan record) override {
        auto info = peek_chunk_record(record);
        if (!info.ok()) return info.status();
        if (delay_.count()) std::this_thread::sleep_for(delay_);
        std::lock_guard lock(mu_);
        data_[info.value().digest].assign(record.begin(), record.end());
        return Status::success();
    }
    Result<std::vector<uint8_t>> get_record(const Digest& digest) override {
        if (delay_.count()) std::this_thread::sleep_for(delay_);
        std::lock_guard lock(mu_);
        auto it = data_.find(digest);
        if (it == data_.end()) return Status{Errc::not_found, "remote miss"};
        return it->second;
    }
    Result<bool> exists(const Digest& digest) override {
        std::lock_guard lock(mu_);
        return data_.count(digest) > 0;
    }
    Result<size_t> clear(const std::vector<Digest>& digests) override {
        std::lock_guard lock(mu_);
        size_t n = 0;
        for (const auto& d : digests) n += data_.erase(d);
        return n;
    }
    Status pin(const Digest&, bool) override { return Status::success(); }
    Result<size_t> compress(const Digest&, const std::string&) override {
        return Status{Errc::invalid_argument, "unsupported"};
    }

    size_t count() {
        std::lock_guard lock(mu_);
        return data_.size();
    }

private:
    std::mutex mu_;
    std::map<Digest, std::vector<uint8_t>> data_;
    std::chrono::microseconds delay_;
};

ModelSpec small_spec() {
    ModelSpec spec;
    spec.num_layers = 4;
    spec.bytes_per_token_per_layer = 64;
    spec.page_tokens = 16;
    spec.model_tag = "store-test";
    return spec;
}

StoreConfig small_config(size_t ram_slots, const fs::path& disk = {}) {
    StoreConfig cfg;
    cfg.model = small_spec();
    cfg.chunk_size = 32;
    cfg.ram_pool_bytes = ram_slots * cfg.model.chunk_bytes(cfg.chunk_size);
    cfg.disk_path = disk.string();
    cfg.disk_quota_bytes = 1 << 20;
    return cfg;
}

struct ChunkFactory {
    ModelSpec spec;
    size_t chunk_size;
    KeyChain chain;
    std::mt19937_64 rng;

    ChunkFactory(ModelSpec s, size_t cs, uint64_t seed)
        : spec(std::move(s)), chunk_size(cs), chain(spec.model_tag, cs), rng(seed) {}

    KVChunk make(uint32_t token_count = 0) {
        if (token_count == 0) token_count = uint32_t(chunk_size);
        std::vector<TokenId> tokens(token_count);
        for (auto& t : tokens) t = TokenId(rng() % 32000);
        ChunkKey key = chain.next(tokens);
        KVChunkBuilder builder(key, token_count, spec.num_layers,
                               spec.bytes_per_token_per_layer);
        for (uint32_t l = 0; l < spec.num_layers; ++l) {
            auto span = builder.layer(l);
            for (auto& b : span) b = uint8_t(rng());
        }
        return std::move(builder).seal();
    }
};

bool same_payload(const KVChunk& a, const KVChunk& b) {
    return a.payload_bytes() == b.payload_bytes() &&
           std::equal(a.payload().begin(), a.payload().end(), b.payload().begin());
}

}  // namespace

TEST_CASE("put/get round-trips on every tier") {
    TempDir dir;
    TieredStore store(small_config(4, dir.path));
    store.add_remote("r0", std::make_shared<FakeRemote>());
    ChunkFactory factory(small_spec(), 32, 31);

    for (TierId tier : {TierId::ram(), TierId::disk(), TierId::remote("r0")}) {
        KVChunk chunk = factory.make();
        auto result = store.put(chunk, {tier}).wait();
        REQUIRE(result.all_ok());
        auto tiers = store.contains(chunk.key().digest);
        REQUIRE(tiers.size() == 1);
        CHECK(tiers[0] == tier);
        auto back = store.get(chunk.key().digest);
        REQUIRE(back.ok());
        CHECK(same_payload(back.value(), chunk));
    }
}

TEST_CASE("get prefers ram over disk, and absent keys are NotFound") {
    TempDir dir;
    auto cfg = small_config(4, dir.path);
    TieredStore store(cfg);
    ChunkFactory factory(small_spec(), 32, 32);

    KVChunk chunk = factory.make();
    REQUIRE(store.put(chunk, {TierId::ram(), TierId::disk()}).wait().all_ok());
    auto tiers = store.contains(chunk.key().digest);
    REQUIRE(tiers.size() == 2);

    // Corrupt the disk copy; a ram-served read never notices.
    auto hex = digest_hex(chunk.key().digest);
    fs::path file = fs::path(cfg.disk_path) / hex.substr(0, 2) / hex.substr(2, 2) / hex;
    REQUIRE(fs::exists(file));
    { std::ofstream out(file, std::ios::binary | std::ios::trunc); out << "garbage"; }
    auto back = store.get(chunk.key().digest);
    REQUIRE(back.ok());
    CHECK(same_payload(back.value(), chunk));
    CHECK(store.contains(chunk.key().digest).size() == 2);  // disk copy untried

    Digest absent{};
    absent[0] = 0xff;
    auto miss = store.get(absent);
    REQUIRE(!miss.ok());
    CHECK(miss.status().code == Errc::not_found);
}

TEST_CASE("corrupt disk copy is dropped and the next tier serves the read") {
    TempDir dir;
    auto cfg = small_config(4, dir.path);
    TieredStore store(cfg);
    store.add_remote("r0", std::make_shared<FakeRemote>());
    ChunkFactory factory(small_spec(), 32, 33);

    KVChunk chunk = factory.make();
    REQUIRE(store.put(chunk, {TierId::disk(), TierId::remote("r0")}).wait().all_ok());

    auto hex = digest_hex(chunk.key().digest);
    fs::path file = fs::path(cfg.disk_path) / hex.substr(0, 2) / hex.substr(2, 2) / hex;
    {
        std::fstream f(file, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(60);
        f.put(char(0xee));  // flip a payload byte; checksum now mismatches
    }

    auto back = store.get(chunk.key().digest, {TierId::disk()});
    REQUIRE(back.ok());
    CHECK(same_payload(back.value(), chunk));
    auto tiers = store.contains(chunk.key().digest);
    REQUIRE(tiers.size() == 1);
    CHECK(tiers[0] == TierId::remote("r0"));
    CHECK(!fs::exists(file));
}

TEST_CASE("duplicate put is idempotent and writes no new bytes") {
    TempDir dir;
    TieredStore store(small_config(4, dir.path));
    ChunkFactory factory(small_spec(), 32, 34);

    KVChunk chunk = factory.make();
    REQUIRE(store.put(chunk, {TierId::disk()}).wait().all_ok());
    auto before = fs::last_write_time(
        fs::path(store.config().disk_path) / digest_hex(chunk.key().digest).substr(0, 2) /
        digest_hex(chunk.key().digest).substr(2, 2) / digest_hex(chunk.key().digest));
    auto again = store.put(chunk, {TierId::disk()}).wait();
    REQUIRE(again.all_ok());
    auto after = fs::last_write_time(
        fs::path(store.config().disk_path) / digest_hex(chunk.key().digest).substr(0, 2) /
        digest_hex(chunk.key().digest).substr(2, 2) / digest_hex(chunk.key().digest));
    CHECK(before == after);
    CHECK(store.stats().disk_entries == 1);
}

TEST_CASE("ram eviction is LRU, spares pinned entries, and reports TierFull when stuck") {
    TieredStore store(small_config(3));
    ChunkFactory factory(small_spec(), 32, 35);

    std::vector<StoreEvent> events;
    std::mutex events_mu;
    store.set_event_sink([&](const StoreEvent& e) {
        std::lock_guard lock(events_mu);
        events.push_back(e);
    });

    KVChunk a = factory.make(), b = factory.make(), c = factory.make(), d = factory.make();
    REQUIRE(store.put(a, {TierId::ram()}, true).wait().all_ok());  // pinned
    REQUIRE(store.put(b, {TierId::ram()}).wait().all_ok());
    REQUIRE(store.put(c, {TierId::ram()}).wait().all_ok());

    // Touch b so c is the least recently used unpinned entry.
    REQUIRE(store.get(b.key().digest).ok());

    REQUIRE(store.put(d, {TierId::ram()}).wait().all_ok());
    store.flush_events();
    CHECK(store.contains(a.key().digest).size() == 1);  // pinned survives
    CHECK(store.contains(c.key().digest).empty());      // LRU victim
    CHECK(store.contains(b.key().digest).size() == 1);
    CHECK(store.contains(d.key().digest).size() == 1);
    {
        std::lock_guard lock(events_mu);
        bool saw_c_eviction = false;
        for (const auto& e : events) {
            if (e.kind != StoreEvent::Kind::evicted) continue;
            if (e.digest == c.key().digest) {
                saw_c_eviction = true;
                CHECK(e.last_copy);
            }
            CHECK(e.digest != a.key().digest);  // the pinned entry never leaves
        }
        CHECK(saw_c_eviction);
    }

    // Pin everything; a fourth insert has nowhere to go.
    REQUIRE(store.pin(b.key().digest, TierId::ram(), true).ok());
    REQUIRE(store.pin(d.key().digest, TierId::ram(), true).ok());
    KVChunk e = factory.make();
    auto result = store.put(e, {TierId::ram()}).wait();
    REQUIRE(result.tiers.size() == 1);
    CHECK(result.tiers[0].status.code == Errc::tier_full);
    CHECK(store.contains(e.key().digest).empty());
}

TEST_CASE("ram eviction demotes to disk only when configured") {
    TempDir dir;
    for (bool demote : {false, true}) {
        auto cfg = small_config(2, dir.path / (demote ? "on" : "off"));
        fs::create_directories(cfg.disk_path);
        cfg.demote_ram_to_disk = demote;
        TieredStore store(cfg);
        ChunkFactory factory(small_spec(), 32, demote ? 36 : 37);

        KVChunk a = factory.make(), b = factory.make(), c = factory.make();
        REQUIRE(store.put(a, {TierId::ram()}).wait().all_ok());
        REQUIRE(store.put(b, {TierId::ram()}).wait().all_ok());
        REQUIRE(store.put(c, {TierId::ram()}).wait().all_ok());  // evicts a

        auto tiers = store.contains(a.key().digest);
        if (demote) {
            REQUIRE(tiers.size() == 1);
            CHECK(tiers[0] == TierId::disk());
            auto back = store.get(a.key().digest);
            REQUIRE(back.ok());
            CHECK(same_payload(back.value(), a));
        } else {
            CHECK(tiers.empty());
        }
    }
}

TEST_CASE("clear removes unpinned copies and refuses pinned ones") {
    TempDir dir;
    TieredStore store(small_config(4, dir.path));
    ChunkFactory factory(small_spec(), 32, 38);

    KVChunk a = factory.make(), b = factory.make();
    REQUIRE(store.put(a, {TierId::ram(), TierId::disk()}).wait().all_ok());
    REQUIRE(store.put(b, {TierId::ram()}).wait().all_ok());
    REQUIRE(store.pin(a.key().digest, TierId::ram(), true).ok());

    auto result = store.clear({a.key().digest, b.key().digest});
    CHECK(result.removed == 2);  // a's disk copy + b's ram copy
    CHECK(result.refused == 1);  // a's pinned ram copy
    auto tiers = store.contains(a.key().digest);
    REQUIRE(tiers.size() == 1);
    CHECK(tiers[0] == TierId::ram());
    CHECK(store.contains(b.key().digest).empty());

    CHECK(store.clear({b.key().digest}).removed == 0);

    // Unpin, clear again.
    REQUIRE(store.pin(a.key().digest, TierId::ram(), false).ok());
    CHECK(store.clear({a.key().digest}).removed == 1);
    CHECK(store.stats().entries == 0);
}

TEST_CASE("pin on an absent key or tier is NotFound") {
    TieredStore store(small_config(2));
    ChunkFactory factory(small_spec(), 32, 39);
    Digest absent{};
    CHECK(store.pin(absent, TierId::ram(), true).code == Errc::not_found);
    KVChunk a = factory.make();
    REQUIRE(store.put(a, {TierId::ram()}).wait().all_ok());
    CHECK(store.pin(a.key().digest, TierId::disk(), true).code == Errc::not_found);
}

TEST_CASE("multi-tier put shares one staging buffer and leaks nothing") {
    TempDir dir;
    TieredStore store(small_config(4, dir.path));
    store.add_remote("r0", std::make_shared<FakeRemote>());
    ChunkFactory factory(small_spec(), 32, 40);

    KVChunk chunk = factory.make();
    auto result = store.put(chunk, {TierId::ram(), TierId::disk(), TierId::remote("r0")}).wait();
    REQUIRE(result.all_ok());
    CHECK(store.contains(chunk.key().digest).size() == 3);
    // One region backed all three writes and has been fully released.
    CHECK(store.staging_pool().live_regions() == 0);
    CHECK(store.staging_pool().outstanding_refs() == 0);
    CHECK(store.staging_pool().peak_bytes() <=
          int64_t(chunk.payload_bytes() + kChunkHeaderBytes + 8));
}

TEST_CASE("randomized op soup leaves zero outstanding buffer refs") {
    TempDir dir;
    TieredStore store(small_config(3, dir.path));
    store.add_remote("r0", std::make_shared<FakeRemote>());
    ChunkFactory factory(small_spec(), 32, 41);
    std::mt19937_64 rng(42);

    std::vector<KVChunk> chunks;
    for (int i = 0; i < 12; ++i) chunks.push_back(factory.make());
    std::vector<PutHandle> handles;
    std::vector<TierId> all{TierId::ram(), TierId::disk(), TierId::remote("r0")};

    for (int op = 0; op < 200; ++op) {
        const KVChunk& chunk = chunks[rng() % chunks.size()];
        switch (rng() % 4) {
            case 0: {
                std::vector<TierId> tiers{all[rng() % all.size()]};
                if (rng() % 3 == 0) tiers.push_back(all[rng() % all.size()]);
                handles.push_back(store.put(chunk, tiers));
                break;
            }
            case 1:
                store.get(chunk.key().digest);
                break;
            case 2:
                store.clear({chunk.key().digest}, all[rng() % all.size()]);
                break;
            case 3:
                store.contains(chunk.key().digest);
                break;
        }
    }
    for (const auto& h : handles) h.wait();
    CHECK(store.staging_pool().live_regions() == 0);
    CHECK(store.staging_pool().live_bytes() == 0);
    CHECK(store.staging_pool().outstanding_refs() == 0);
}

TEST_CASE("batch_put equals sequential puts and overlaps I/O-bound tiers") {
    TempDir dir;

    // Equivalence: same final state as sequential application.
    {
        TieredStore batch_store(small_config(8, dir.path / "b"));
        TieredStore seq_store(small_config(8, dir.path / "s"));
        batch_store.add_remote("r0", std::make_shared<FakeRemote>());
        seq_store.add_remote("r0", std::make_shared<FakeRemote>());
        ChunkFactory f1(small_spec(), 32, 43), f2(small_spec(), 32, 43);

        std::vector<PutSpec> specs;
        for (int i = 0; i < 6; ++i) {
            KVChunk c1 = f1.make();
            KVChunk c2 = f2.make();
            std::vector<TierId> tiers{TierId::ram()};
            if (i % 2) tiers.push_back(TierId::disk());
            if (i % 3 == 0) tiers.push_back(TierId::remote("r0"));
            specs.push_back({c1, tiers, false});
            REQUIRE(seq_store.put(c2, tiers).wait().all_ok());
        }
        for (auto& h : batch_store.batch_put(specs)) REQUIRE(h.wait().all_ok());
        for (const auto& spec : specs) {
            CHECK(batch_store.contains(spec.chunk.key().digest).size() ==
                  seq_store.contains(spec.chunk.key().digest).size());
            auto a = batch_store.get(spec.chunk.key().digest);
            auto b = seq_store.get(spec.chunk.key().digest);
            REQUIRE(a.ok());
            REQUIRE(b.ok());
            CHECK(same_payload(a.value(), b.value()));
        }
        CHECK(batch_store.batch_put({}).empty());
    }

    // Timing: remote writes block on the (simulated) link; batch overlaps them.
    {
        auto remote = std::make_shared<FakeRemote>(std::chrono::microseconds(2000));
        TieredStore store(small_config(16, dir.path / "t"));
        store.add_remote("slow", remote);
        ChunkFactory factory(small_spec(), 32, 44);
        std::vector<KVChunk> chunks;
        for (int i = 0; i < 8; ++i) chunks.push_back(factory.make());

        double best_seq = 1e18, best_batch = 1e18;
        for (int round = 0; round < 3; ++round) {
            TieredStore seq(small_config(16, dir.path / ("ts" + std::to_string(round))));
            seq.add_remote("slow", remote);
            auto t0 = std::chrono::steady_clock::now();
            for (const auto& c : chunks) seq.put(c, {TierId::remote("slow")}).wait();
            best_seq = std::min(
                best_seq, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count());

            TieredStore bat(small_config(16, dir.path / ("tb" + std::to_string(round))));
            bat.add_remote("slow", remote);
            std::vector<PutSpec> specs;
            for (const auto& c : chunks) specs.push_back({c, {TierId::remote("slow")}, false});
            t0 = std::chrono::steady_clock::now();
            for (auto& h : bat.batch_put(specs)) h.wait();
            best_batch = std::min(
                best_batch, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                .count());
        }
        CHECK(best_batch < best_seq * 0.8);
    }
}

TEST_CASE("batch_get returns per-key results in order") {
    TempDir dir;
    TieredStore store(small_config(4, dir.path));
    ChunkFactory factory(small_spec(), 32, 45);
    KVChunk a = factory.make(), b = factory.make();
    REQUIRE(store.put(a, {TierId::ram()}).wait().all_ok());
    REQUIRE(store.put(b, {TierId::disk()}).wait().all_ok());
    Digest absent{};
    absent[5] = 1;

    auto results = store.batch_get({a.key().digest, absent, b.key().digest});
    REQUIRE(results.size() == 3);
    REQUIRE(results[0].ok());
    CHECK(same_payload(results[0].value(), a));
    CHECK(!results[1].ok());
    REQUIRE(results[2].ok());
    CHECK(same_payload(results[2].value(), b));
}

TEST_CASE("compress: identity round-trips, q8 halves footprint within bound, unknown errors") {
    TieredStore store(small_config(4));
    ChunkFactory factory(small_spec(), 32, 46);

    KVChunk chunk = factory.make();
    REQUIRE(store.put(chunk, {TierId::ram()}).wait().all_ok());
    size_t raw_bytes = chunk.payload_bytes();

    auto unknown = store.compress_entry(chunk.key().digest, TierId::ram(), "zip-9000");
    REQUIRE(!unknown.ok());
    CHECK(unknown.status().code == Errc::unknown_codec);
    auto untouched = store.get(chunk.key().digest);
    REQUIRE(untouched.ok());
    CHECK(same_payload(untouched.value(), chunk));

    auto ident = store.compress_entry(chunk.key().digest, TierId::ram(), "identity");
    REQUIRE(ident.ok());
    CHECK(ident.value() == raw_bytes);
    auto back = store.get(chunk.key().digest);
    REQUIRE(back.ok());
    CHECK(same_payload(back.value(), chunk));

    auto q8 = store.compress_entry(chunk.key().digest, TierId::ram(), "q8-scale");
    REQUIRE(q8.ok());
    double ratio = double(q8.value()) / double(raw_bytes);
    CHECK(ratio > 0.45);
    CHECK(ratio < 0.55);

    auto lossy = store.get(chunk.key().digest);
    REQUIRE(lossy.ok());
    double scale = q8_scale_of(chunk.payload());
    double bound = q8_max_lane_error(scale);
    auto original = chunk.payload();
    auto recon = lossy.value().payload();
    REQUIRE(recon.size() == original.size());
    for (size_t i = 0; i + 1 < original.size(); i += 2) {
        int16_t o = int16_t(uint16_t(original[i]) | (uint16_t(original[i + 1]) << 8));
        int16_t r = int16_t(uint16_t(recon[i]) | (uint16_t(recon[i + 1]) << 8));
        CHECK(std::abs(int(o) - int(r)) <= bound);
    }
}

TEST_CASE("compress on disk rewrites the file and survives a get round-trip") {
    TempDir dir;
    TieredStore store(small_config(4, dir.path));
    ChunkFactory factory(small_spec(), 32, 47);
    KVChunk chunk = factory.make();
    REQUIRE(store.put(chunk, {TierId::disk()}).wait().all_ok());
    size_t before = store.stats().disk_used_bytes;
    auto q8 = store.compress_entry(chunk.key().digest, TierId::disk(), "q8-scale");
    REQUIRE(q8.ok());
    CHECK(store.stats().disk_used_bytes < before);
    auto back = store.get(chunk.key().digest);
    REQUIRE(back.ok());
    CHECK(back.value().payload_bytes() == chunk.payload_bytes());
}

TEST_CASE("decode accumulation flushes at chunk boundaries and at finish") {
    TieredStore store(small_config(8));
    auto spec = small_spec();
    std::mt19937_64 rng(48);

    // 300 appended tokens: one flush at 256... chunk_size here is 32, so use
    // 32-token chunks: 70 tokens -> two full flushes + one 6-token tail.
    KeyChain chain(spec.model_tag, 32);
    REQUIRE(store.decode_open(9, chain, {}, {}, {TierId::ram()}, false).ok());

    std::vector<std::vector<uint8_t>> token_bytes;  // per appended token, layer-major
    std::vector<TokenId> tokens;
    size_t flushes = 0;
    std::vector<ChunkKey> flushed_keys;
    for (int i = 0; i < 70; ++i) {
        TokenId t = TokenId(rng() % 1000);
        tokens.push_back(t);
        std::vector<uint8_t> bytes(spec.num_layers * spec.bytes_per_token_per_layer);
        for (auto& b : bytes) b = uint8_t(rng());
        token_bytes.push_back(bytes);
        std::vector<ByteSpan> per_layer;
        for (uint32_t l = 0; l < spec.num_layers; ++l) {
            per_layer.emplace_back(bytes.data() + l * spec.bytes_per_token_per_layer,
                                   spec.bytes_per_token_per_layer);
        }
        auto r = store.decode_append(9, t, per_layer);
        REQUIRE(r.ok());
        if (r.value()) {
            flushes++;
            flushed_keys.push_back(*r.value());
            CHECK((i + 1) % 32 == 0);
        }
    }
    CHECK(flushes == 2);

    auto fin = store.decode_finish(9);
    REQUIRE(fin.ok());
    REQUIRE(fin.value().size() == 3);  // 32 + 32 + 6

    // Keys match direct derivation over the appended tokens.
    auto expect = chunk_keys(tokens, 32, spec.model_tag);
    REQUIRE(expect.size() == 3);
    for (size_t i = 0; i < 3; ++i) CHECK(fin.value()[i].digest == expect[i].digest);

    // Byte content matches the appended bytes, layer-major per chunk.
    for (size_t c = 0; c < 3; ++c) {
        auto back = store.get(expect[c].digest);
        REQUIRE(back.ok());
        size_t count = back.value().token_count();
        for (uint32_t l = 0; l < spec.num_layers; ++l) {
            auto layer = back.value().layer(l);
            for (size_t t = 0; t < count; ++t) {
                const auto& src = token_bytes[c * 32 + t];
                CHECK(std::equal(src.begin() + l * spec.bytes_per_token_per_layer,
                                 src.begin() + (l + 1) * spec.bytes_per_token_per_layer,
                                 layer.begin() + t * spec.bytes_per_token_per_layer));
            }
        }
    }

    // Exactly chunk_size appended tokens: a single flush, nothing at finish.
    REQUIRE(store.decode_open(10, KeyChain(spec.model_tag, 32), {}, {}, {TierId::ram()}, false)
                .ok());
    size_t only_flushes = 0;
    for (int i = 0; i < 32; ++i) {
        std::vector<uint8_t> bytes(spec.num_layers * spec.bytes_per_token_per_layer, uint8_t(i));
        std::vector<ByteSpan> per_layer;
        for (uint32_t l = 0; l < spec.num_layers; ++l) {
            per_layer.emplace_back(bytes.data() + l * spec.bytes_per_token_per_layer,
                                   spec.bytes_per_token_per_layer);
        }
        auto r = store.decode_append(10, TokenId(i), per_layer);
        REQUIRE(r.ok());
        if (r.value()) only_flushes++;
    }
    CHECK(only_flushes == 1);
    auto fin2 = store.decode_finish(10);
    REQUIRE(fin2.ok());
    CHECK(fin2.value().size() == 1);
}

TEST_CASE("decode_open preloads a partial prompt tail and continues its chain") {
    TieredStore store(small_config(8));
    auto spec = small_spec();
    std::mt19937_64 rng(49);

    // A 40-token prompt with chunk_size 32: one stored chunk + 8-token tail.
    std::vector<TokenId> prompt(40);
    for (auto& t : prompt) t = TokenId(rng() % 1000);
    auto keys = chunk_keys(prompt, 32, spec.model_tag);
    REQUIRE(keys.size() == 2);

    // Per-layer bytes of the 8-token tail.
    size_t tail = 8;
    std::vector<std::vector<uint8_t>> tail_layers(spec.num_layers);
    for (auto& l : tail_layers) {
        l.resize(tail * spec.bytes_per_token_per_layer);
        for (auto& b : l) b = uint8_t(rng());
    }
    std::vector<ByteSpan> tail_spans;
    for (auto& l : tail_layers) tail_spans.emplace_back(l.data(), l.size());
    std::vector<TokenId> tail_tokens(prompt.begin() + 32, prompt.end());

    KeyChain chain(spec.model_tag, 32);
    chain.reset(keys[0].digest, 1);
    REQUIRE(store.decode_open(11, chain, tail_tokens, tail_spans, {TierId::ram()}, false).ok());

    // Append 24 more tokens to complete the chunk.
    std::vector<TokenId> full_tokens = prompt;
    for (int i = 0; i < 24; ++i) {
        TokenId t = TokenId(rng() % 1000);
        full_tokens.push_back(t);
        std::vector<uint8_t> bytes(spec.num_layers * spec.bytes_per_token_per_layer, uint8_t(i));
        std::vector<ByteSpan> per_layer;
        for (uint32_t l = 0; l < spec.num_layers; ++l) {
            per_layer.emplace_back(bytes.data() + l * spec.bytes_per_token_per_layer,
                                   spec.bytes_per_token_per_layer);
        }
        auto r = store.decode_append(11, t, per_layer);
        REQUIRE(r.ok());
        if (i < 23) {
            CHECK(!r.value());
        } else {
            REQUIRE(r.value());
            // The flushed chunk is exactly the second chunk of the extended
            // sequence, chained off the stored prompt chunk.
            auto expect = chunk_keys(full_tokens, 32, spec.model_tag);
            CHECK(r.value()->digest == expect[1].digest);
        }
    }
    auto fin = store.decode_finish(11);
    REQUIRE(fin.ok());
    CHECK(fin.value().size() == 1);
}

TEST_CASE("eviction never removes pinned or in-flight entries (event audit)") {
    TieredStore store(small_config(3));
    ChunkFactory factory(small_spec(), 32, 50);

    std::mutex shadow_mu;
    std::map<std::string, bool> pinned_shadow;
    std::vector<std::string> violations;
    store.set_event_sink([&](const StoreEvent& e) {
        std::lock_guard lock(shadow_mu);
        if (e.kind == StoreEvent::Kind::evicted) {
            auto it = pinned_shadow.find(digest_hex(e.digest));
            if (it != pinned_shadow.end() && it->second) violations.push_back(digest_hex(e.digest));
        }
    });

    std::mt19937_64 rng(51);
    std::vector<KVChunk> chunks;
    for (int i = 0; i < 10; ++i) chunks.push_back(factory.make());
    std::vector<PutHandle> handles;
    for (int op = 0; op < 150; ++op) {
        const KVChunk& c = chunks[rng() % chunks.size()];
        std::string hex = digest_hex(c.key().digest);
        switch (rng() % 3) {
            case 0: {
                bool pin = rng() % 4 == 0;
                if (pin) {
                    // Eviction is only forbidden once the store acknowledges
                    // the pin, so wait the put out before recording it.
                    auto res = store.put(c, {TierId::ram()}, true).wait();
                    if (res.all_ok()) {
                        std::lock_guard lock(shadow_mu);
                        pinned_shadow[hex] = true;
                    }
                } else {
                    handles.push_back(store.put(c, {TierId::ram()}, false));
                }
                break;
            }
            case 1:
                store.get(c.key().digest);
                break;
            case 2: {
                {
                    std::lock_guard lock(shadow_mu);
                    pinned_shadow[hex] = false;
                }
                store.pin(c.key().digest, TierId::ram(), false);
                break;
            }
        }
    }
    for (const auto& h : handles) h.wait();
    store.flush_events();
    std::lock_guard lock(shadow_mu);
    CHECK(violations.empty());
}
