#pragma once

#include <atomic>
#include <future>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "tierkv/socket.hpp"
#include "tierkv/wire.hpp"

namespace tierkv {

// One framed connection. Requests may be pipelined from any thread; a reader
// thread matches replies to request ids. Connection death fails every
// outstanding request with io_error.
class WireClient {
public:
    static Result<std::unique_ptr<WireClient>> connect(const std::string& host, uint16_t port,
                                                       uint32_t max_payload = kDefaultMaxPayload);
    static Result<std::unique_ptr<WireClient>> connect(const std::string& endpoint,
                                                       uint32_t max_payload = kDefaultMaxPayload);
    ~WireClient();

    std::future<Result<Frame>> request(Opcode op, ByteSpan payload);
    // request + wait. The frame is the raw OK/ERR reply.
    Result<Frame> call(Opcode op, ByteSpan payload);
    // call, then unwrap: OK -> payload bytes, ERR -> its decoded Status.
    Result<std::vector<uint8_t>> call_ok(Opcode op, ByteSpan payload);

    void close();
    bool alive() const { return !dead_.load(); }
    uint64_t requests_sent() const { return next_id_.load() - 1; }

private:
    WireClient(TcpConn conn, uint32_t max_payload);
    void reader_loop();
    void fail_pending(const Status& why);

    TcpConn conn_;
    uint32_t max_payload_;
    std::thread reader_;
    std::mutex close_mu_;
    std::mutex write_mu_;
    std::mutex pending_mu_;
    std::unordered_map<uint64_t, std::promise<Result<Frame>>> pending_;
    std::atomic<uint64_t> next_id_{1};
    std::atomic<bool> dead_{false};
    std::atomic<bool> closing_{false};
};

// OK -> payload, ERR -> decoded Status, anything else -> protocol_error.
Result<std::vector<uint8_t>> unwrap_reply(Frame frame);

}  // namespace tierkv
