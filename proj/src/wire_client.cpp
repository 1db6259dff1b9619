#include "tierkv/wire_client.hpp"

namespace tierkv {

Result<std::unique_ptr<WireClient>> WireClient::connect(const std::string& host, uint16_t port,
                                                        uint32_t max_payload) {
    auto conn = TcpConn::connect(host, port);
    if (!conn.ok()) return conn.status();
    return std::unique_ptr<WireClient>(new WireClient(conn.take(), max_payload));
}

Result<std::unique_ptr<WireClient>> WireClient::connect(const std::string& endpoint,
                                                        uint32_t max_payload) {
    auto parts = split_endpoint(endpoint);
    if (!parts.ok()) return parts.status();
    return connect(parts.value().first, parts.value().second, max_payload);
}

WireClient::WireClient(TcpConn conn, uint32_t max_payload)
    : conn_(std::move(conn)), max_payload_(max_payload) {
    reader_ = std::thread([this] { reader_loop(); });
}

WireClient::~WireClient() { close(); }

void WireClient::close() {
    std::lock_guard lock(close_mu_);
    if (!closing_.exchange(true)) conn_.shutdown_rw();
    if (reader_.joinable()) reader_.join();
    conn_.close();
}

void WireClient::fail_pending(const Status& why) {
    std::unordered_map<uint64_t, std::promise<Result<Frame>>> orphans;
    {
        std::lock_guard lock(pending_mu_);
        orphans.swap(pending_);
    }
    for (auto& [id, promise] : orphans) promise.set_value(Result<Frame>(why));
}

void WireClient::reader_loop() {
    FrameDecoder decoder(max_payload_);
    std::vector<uint8_t> buf(64 << 10);
    std::vector<Frame> frames;
    for (;;) {
        auto n = conn_.read_some(MutByteSpan(buf.data(), buf.size()));
        if (!n.ok() || n.value() == 0) break;
        frames.clear();
        bool stream_ok = decoder.feed(ByteSpan(buf.data(), n.value()), frames);
        for (Frame& frame : frames) {
            std::promise<Result<Frame>> promise;
            bool found = false;
            {
                std::lock_guard lock(pending_mu_);
                auto it = pending_.find(frame.request_id);
                if (it != pending_.end()) {
                    promise = std::move(it->second);
                    pending_.erase(it);
                    found = true;
                }
            }
            if (found) promise.set_value(std::move(frame));
            // Unmatched ids are dropped; the peer answered something we
            // never asked or already failed.
        }
        if (!stream_ok) break;
    }
    dead_.store(true);
    fail_pending(Status{Errc::io_error, "connection closed"});
}

std::future<Result<Frame>> WireClient::request(Opcode op, ByteSpan payload) {
    uint64_t id = next_id_.fetch_add(1);
    std::promise<Result<Frame>> promise;
    auto future = promise.get_future();
    if (dead_.load()) {
        promise.set_value(Result<Frame>(Status{Errc::io_error, "connection closed"}));
        return future;
    }
    {
        std::lock_guard lock(pending_mu_);
        pending_.emplace(id, std::move(promise));
    }
    auto frame = encode_frame(op, id, payload);
    Status sent;
    {
        std::lock_guard lock(write_mu_);
        sent = conn_.write_all(ByteSpan(frame.data(), frame.size()));
    }
    if (!sent.ok()) {
        std::promise<Result<Frame>> orphan;
        bool mine = false;
        {
            std::lock_guard lock(pending_mu_);
            auto it = pending_.find(id);
            if (it != pending_.end()) {
                orphan = std::move(it->second);
                pending_.erase(it);
                mine = true;
            }
        }
        if (mine) orphan.set_value(Result<Frame>(sent));
    }
    return future;
}

Result<Frame> WireClient::call(Opcode op, ByteSpan payload) {
    return request(op, payload).get();
}

Result<std::vector<uint8_t>> WireClient::call_ok(Opcode op, ByteSpan payload) {
    auto reply = call(op, payload);
    if (!reply.ok()) return reply.status();
    return unwrap_reply(reply.take());
}

Result<std::vector<uint8_t>> unwrap_reply(Frame frame) {
    if (frame.op() == Opcode::ok) return std::move(frame.payload);
    if (frame.op() == Opcode::err)
        return parse_err(ByteSpan(frame.payload.data(), frame.payload.size()));
    return Status{Errc::protocol_error,
                  std::string("reply opcode ") + std::to_string(frame.opcode)};
}

}  // namespace tierkv
