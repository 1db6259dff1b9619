#pragma once

#include <memory>

#include "tierkv/pd_staging.hpp"
#include "tierkv/store.hpp"
#include "tierkv/wire_client.hpp"
#include "tierkv/wire_server.hpp"

namespace tierkv {

// Wire face of one store: PUT/GET/EXISTS/CLEAR/PIN/COMPRESS execute against
// the shared store, PD_PUSH lands in the staging area when one is attached.
// Registry opcodes (LOOKUP/MOVE/EVENT) are answered elsewhere.
class CacheService {
public:
    struct Config {
        // Placement when a PUT names no tiers.
        std::vector<TierId> default_put_tiers{TierId::ram()};
    };

    CacheService(TieredStore& store, PdStaging* pd, Config config);
    explicit CacheService(TieredStore& store, PdStaging* pd = nullptr)
        : CacheService(store, pd, Config{}) {}

    WireServer::Reply handle(const Frame& frame);

    // Convenience: bind a server whose handler is this service.
    static Result<std::unique_ptr<WireServer>> serve(const std::string& host, uint16_t port,
                                                     TieredStore& store, PdStaging* pd,
                                                     Config config,
                                                     WireServer::Config server_config);
    static Result<std::unique_ptr<WireServer>> serve(const std::string& host, uint16_t port,
                                                     TieredStore& store,
                                                     PdStaging* pd = nullptr) {
        return serve(host, port, store, pd, Config{}, WireServer::Config{});
    }

private:
    WireServer::Reply handle_put(const Frame& frame);
    WireServer::Reply handle_get(const Frame& frame);
    WireServer::Reply handle_exists(const Frame& frame);
    WireServer::Reply handle_clear(const Frame& frame);
    WireServer::Reply handle_pin(const Frame& frame);
    WireServer::Reply handle_compress(const Frame& frame);
    WireServer::Reply handle_pd_push(const Frame& frame);

    TieredStore& store_;
    PdStaging* pd_;
    Config config_;
};

// Remote tier transport: forwards the store's RemoteBackend calls to a cache
// server over one shared connection.
class RemoteStoreClient : public RemoteBackend {
public:
    static Result<std::shared_ptr<RemoteStoreClient>> connect(
        const std::string& endpoint, uint32_t max_payload = kDefaultMaxPayload);
    explicit RemoteStoreClient(std::unique_ptr<WireClient> client);

    Status put_record(ByteSpan record) override;
    Result<std::vector<uint8_t>> get_record(const Digest& digest) override;
    Result<bool> exists(const Digest& digest) override;
    Result<size_t> clear(const std::vector<Digest>& digests) override;
    Status pin(const Digest& digest, bool on) override;
    Result<size_t> compress(const Digest& digest, const std::string& codec) override;

    WireClient& client() { return *client_; }

private:
    std::unique_ptr<WireClient> client_;
};

// Batches chunks into as few PUT frames as fit under the payload cap.
// Returns one status per chunk, in input order. frames_used reports the
// coalescing (empty batch sends nothing). Pipelined mode fires every frame
// before collecting replies; synchronous mode acknowledges each frame before
// the next, so the frame is the unit whose size sets achieved throughput.
Result<std::vector<Errc>> send_chunks(WireClient& client, const std::vector<KVChunk>& chunks,
                                      const std::vector<TierId>& tiers = {}, bool pin = false,
                                      uint32_t max_payload = kDefaultMaxPayload,
                                      size_t* frames_used = nullptr, bool pipeline = true);

}  // namespace tierkv
