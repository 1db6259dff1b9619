#include "tierkv/cache_service.hpp"

#include "tierkv/chunk_file.hpp"

namespace tierkv {

namespace {

WireServer::Reply err_reply(const Status& st) {
    return {Opcode::err, encode_err(st.code, st.detail)};
}

WireServer::Reply ok_reply(std::vector<uint8_t> payload = {}) {
    return {Opcode::ok, std::move(payload)};
}

}  // namespace

CacheService::CacheService(TieredStore& store, PdStaging* pd, Config config)
    : store_(store), pd_(pd), config_(std::move(config)) {}

WireServer::Reply CacheService::handle(const Frame& frame) {
    switch (frame.op()) {
        case Opcode::put: return handle_put(frame);
        case Opcode::get: return handle_get(frame);
        case Opcode::exists: return handle_exists(frame);
        case Opcode::clear: return handle_clear(frame);
        case Opcode::pin: return handle_pin(frame);
        case Opcode::compress: return handle_compress(frame);
        case Opcode::pd_push: return handle_pd_push(frame);
        default:
            return err_reply(Status{Errc::invalid_argument,
                                    std::string(opcode_name(frame.op())) +
                                        " is not served by a cache instance"});
    }
}

WireServer::Reply CacheService::handle_put(const Frame& frame) {
    auto req = parse_put_request(ByteSpan(frame.payload.data(), frame.payload.size()));
    if (!req.ok()) return err_reply(req.status());
    const auto& tiers = req.value().tiers.empty() ? config_.default_put_tiers : req.value().tiers;

    std::vector<Errc> statuses;
    std::vector<PutHandle> handles;
    std::vector<size_t> handle_slot;
    for (const auto& record : req.value().records) {
        auto chunk = parse_chunk_record(ByteSpan(record.data(), record.size()));
        if (!chunk.ok()) {
            statuses.push_back(chunk.status().code);
            continue;
        }
        handle_slot.push_back(statuses.size());
        statuses.push_back(Errc::ok);
        handles.push_back(store_.put(chunk.value(), tiers, req.value().pin));
    }
    for (size_t i = 0; i < handles.size(); ++i) {
        const PutResult& result = handles[i].wait();
        for (const auto& tier_result : result.tiers) {
            if (!tier_result.status.ok()) {
                statuses[handle_slot[i]] = tier_result.status.code;
                break;
            }
        }
    }
    return ok_reply(encode_put_reply(statuses));
}

WireServer::Reply CacheService::handle_get(const Frame& frame) {
    auto req = parse_get_request(ByteSpan(frame.payload.data(), frame.payload.size()));
    if (!req.ok()) return err_reply(req.status());
    std::vector<TierId> prefer;
    if (req.value().prefer) prefer.push_back(*req.value().prefer);

    std::vector<std::pair<Errc, std::vector<uint8_t>>> entries;
    auto results = store_.batch_get(req.value().digests, prefer);
    for (auto& r : results) {
        if (!r.ok()) {
            entries.emplace_back(r.status().code, std::vector<uint8_t>{});
        } else {
            entries.emplace_back(Errc::ok, encode_chunk_record(r.value()));
        }
    }
    return ok_reply(encode_get_reply(entries));
}

WireServer::Reply CacheService::handle_exists(const Frame& frame) {
    auto req = parse_exists_request(ByteSpan(frame.payload.data(), frame.payload.size()));
    if (!req.ok()) return err_reply(req.status());
    std::vector<uint8_t> hits;
    for (const auto& digest : req.value()) {
        hits.push_back(store_.contains(digest).empty() ? 0 : 1);
    }
    return ok_reply(encode_exists_reply(hits));
}

WireServer::Reply CacheService::handle_clear(const Frame& frame) {
    auto req = parse_clear_request(ByteSpan(frame.payload.data(), frame.payload.size()));
    if (!req.ok()) return err_reply(req.status());
    auto result = store_.clear(req.value().digests, req.value().tier);
    return ok_reply(encode_clear_reply(result));
}

WireServer::Reply CacheService::handle_pin(const Frame& frame) {
    auto req = parse_pin_request(ByteSpan(frame.payload.data(), frame.payload.size()));
    if (!req.ok()) return err_reply(req.status());
    const PinRequest& pin = req.value();
    if (pin.tier) {
        auto st = store_.pin(pin.digest, *pin.tier, pin.on);
        if (!st.ok()) return err_reply(st);
        return ok_reply();
    }
    auto tiers = store_.contains(pin.digest);
    if (tiers.empty())
        return err_reply(Status{Errc::not_found, "digest not stored here"});
    for (const auto& tier : tiers) {
        auto st = store_.pin(pin.digest, tier, pin.on);
        if (!st.ok()) return err_reply(st);
    }
    return ok_reply();
}

WireServer::Reply CacheService::handle_compress(const Frame& frame) {
    auto req = parse_compress_request(ByteSpan(frame.payload.data(), frame.payload.size()));
    if (!req.ok()) return err_reply(req.status());
    const CompressRequest& c = req.value();
    TierId tier = TierId::ram();
    if (c.tier) {
        tier = *c.tier;
    } else {
        auto tiers = store_.contains(c.digest);
        if (tiers.empty()) return err_reply(Status{Errc::not_found, "digest not stored here"});
        tier = tiers.front();
    }
    auto size = store_.compress_entry(c.digest, tier, c.codec);
    if (!size.ok()) return err_reply(size.status());
    std::vector<uint8_t> payload;
    put_le<uint64_t>(payload, size.value());
    return ok_reply(std::move(payload));
}

WireServer::Reply CacheService::handle_pd_push(const Frame& frame) {
    if (!pd_)
        return err_reply(Status{Errc::invalid_argument, "no staging area on this instance"});
    auto req = parse_pd_push(ByteSpan(frame.payload.data(), frame.payload.size()));
    if (!req.ok()) return err_reply(req.status());
    auto st = pd_->push(req.value().query_id, req.value().ordinal, req.value().last,
                        std::move(req.value().record));
    if (!st.ok()) return err_reply(st);
    return ok_reply();
}

Result<std::unique_ptr<WireServer>> CacheService::serve(const std::string& host, uint16_t port,
                                                        TieredStore& store, PdStaging* pd,
                                                        Config config,
                                                        WireServer::Config server_config) {
    auto service = std::make_shared<CacheService>(store, pd, std::move(config));
    return WireServer::start(
        host, port, [service](const Frame& frame) { return service->handle(frame); },
        server_config);
}

Result<std::shared_ptr<RemoteStoreClient>> RemoteStoreClient::connect(const std::string& endpoint,
                                                                      uint32_t max_payload) {
    auto client = WireClient::connect(endpoint, max_payload);
    if (!client.ok()) return client.status();
    return std::make_shared<RemoteStoreClient>(client.take());
}

RemoteStoreClient::RemoteStoreClient(std::unique_ptr<WireClient> client)
    : client_(std::move(client)) {}

Status RemoteStoreClient::put_record(ByteSpan record) {
    PutRequest req;
    req.records.emplace_back(record.begin(), record.end());
    auto payload = encode_put_request(req);
    auto reply = client_->call_ok(Opcode::put, ByteSpan(payload.data(), payload.size()));
    if (!reply.ok()) return reply.status();
    auto statuses = parse_put_reply(ByteSpan(reply.value().data(), reply.value().size()));
    if (!statuses.ok()) return statuses.status();
    if (statuses.value().size() != 1)
        return Status{Errc::protocol_error, "expected one status"};
    if (statuses.value()[0] != Errc::ok)
        return Status{statuses.value()[0], "remote put failed"};
    return Status::success();
}

Result<std::vector<uint8_t>> RemoteStoreClient::get_record(const Digest& digest) {
    GetRequest req;
    req.digests.push_back(digest);
    auto payload = encode_get_request(req);
    auto reply = client_->call_ok(Opcode::get, ByteSpan(payload.data(), payload.size()));
    if (!reply.ok()) return reply.status();
    auto entries = parse_get_reply(ByteSpan(reply.value().data(), reply.value().size()));
    if (!entries.ok()) return entries.status();
    if (entries.value().size() != 1) return Status{Errc::protocol_error, "expected one entry"};
    auto& [code, record] = entries.value()[0];
    if (code != Errc::ok) return Status{code, "remote get failed"};
    return std::move(record);
}

Result<bool> RemoteStoreClient::exists(const Digest& digest) {
    auto payload = encode_exists_request({digest});
    auto reply = client_->call_ok(Opcode::exists, ByteSpan(payload.data(), payload.size()));
    if (!reply.ok()) return reply.status();
    auto hits = parse_exists_reply(ByteSpan(reply.value().data(), reply.value().size()));
    if (!hits.ok()) return hits.status();
    if (hits.value().size() != 1) return Status{Errc::protocol_error, "expected one flag"};
    return hits.value()[0] != 0;
}

Result<size_t> RemoteStoreClient::clear(const std::vector<Digest>& digests) {
    ClearRequest req;
    req.digests = digests;
    auto payload = encode_clear_request(req);
    auto reply = client_->call_ok(Opcode::clear, ByteSpan(payload.data(), payload.size()));
    if (!reply.ok()) return reply.status();
    auto result = parse_clear_reply(ByteSpan(reply.value().data(), reply.value().size()));
    if (!result.ok()) return result.status();
    return size_t(result.value().removed);
}

Status RemoteStoreClient::pin(const Digest& digest, bool on) {
    PinRequest req;
    req.digest = digest;
    req.on = on;
    auto payload = encode_pin_request(req);
    auto reply = client_->call_ok(Opcode::pin, ByteSpan(payload.data(), payload.size()));
    return reply.ok() ? Status::success() : reply.status();
}

Result<size_t> RemoteStoreClient::compress(const Digest& digest, const std::string& codec) {
    CompressRequest req;
    req.digest = digest;
    req.codec = codec;
    auto payload = encode_compress_request(req);
    auto reply = client_->call_ok(Opcode::compress, ByteSpan(payload.data(), payload.size()));
    if (!reply.ok()) return reply.status();
    if (reply.value().size() != 8) return Status{Errc::protocol_error, "expected u64 size"};
    return size_t(get_le<uint64_t>(reply.value().data()));
}

Result<std::vector<Errc>> send_chunks(WireClient& client, const std::vector<KVChunk>& chunks,
                                      const std::vector<TierId>& tiers, bool pin,
                                      uint32_t max_payload, size_t* frames_used, bool pipeline) {
    if (frames_used) *frames_used = 0;
    if (chunks.empty()) return std::vector<Errc>{};

    // Greedy fill: a batch flushes when adding the next record would cross
    // the cap. A single record larger than the cap is the caller's bug.
    PutRequest base;
    base.pin = pin;
    base.tiers = tiers;
    size_t base_bytes = encode_put_request(base).size();

    std::vector<Errc> statuses;
    std::vector<std::future<Result<Frame>>> futures;
    std::vector<size_t> batch_sizes;
    size_t frames = 0;
    Status failure = Status::success();

    auto collect = [&](std::future<Result<Frame>> future, size_t expected) {
        auto reply = future.get();
        if (!reply.ok()) {
            failure = reply.status();
            return false;
        }
        auto unwrapped = unwrap_reply(reply.take());
        if (!unwrapped.ok()) {
            failure = unwrapped.status();
            return false;
        }
        auto batch_statuses =
            parse_put_reply(ByteSpan(unwrapped.value().data(), unwrapped.value().size()));
        if (!batch_statuses.ok()) {
            failure = batch_statuses.status();
            return false;
        }
        if (batch_statuses.value().size() != expected) {
            failure = Status{Errc::protocol_error, "status count mismatch"};
            return false;
        }
        statuses.insert(statuses.end(), batch_statuses.value().begin(),
                        batch_statuses.value().end());
        return true;
    };

    PutRequest batch = base;
    size_t batch_bytes = base_bytes;
    auto flush = [&]() {
        if (batch.records.empty() || !failure.ok()) return;
        auto payload = encode_put_request(batch);
        size_t count = batch.records.size();
        frames++;
        auto future = client.request(Opcode::put, ByteSpan(payload.data(), payload.size()));
        if (pipeline) {
            batch_sizes.push_back(count);
            futures.push_back(std::move(future));
        } else {
            collect(std::move(future), count);
        }
        batch.records.clear();
        batch_bytes = base_bytes;
    };
    for (const auto& chunk : chunks) {
        auto record = encode_chunk_record(chunk);
        size_t cost = 4 + record.size();
        if (base_bytes + cost > max_payload)
            return Status{Errc::size_mismatch, "single record exceeds the payload cap"};
        if (batch_bytes + cost > max_payload) flush();
        batch.records.push_back(std::move(record));
        batch_bytes += cost;
    }
    flush();
    if (frames_used) *frames_used = frames;

    for (size_t i = 0; i < futures.size(); ++i) {
        if (!collect(std::move(futures[i]), batch_sizes[i])) break;
    }
    if (!failure.ok()) return failure;
    return statuses;
}

}  // namespace tierkv
