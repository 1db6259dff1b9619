#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "tierkv/socket.hpp"
#include "tierkv/wire.hpp"

namespace tierkv {

// Accepts connections and runs one framed request/reply loop per connection.
// The handler sees every well-formed request frame and returns the reply
// frame body; the server stamps the request id. Framing violations close the
// connection; unknown opcodes and oversized frames get an ERR and the
// connection lives on.
class WireServer {
public:
    struct Reply {
        Opcode op = Opcode::ok;
        std::vector<uint8_t> payload;
    };
    using Handler = std::function<Reply(const Frame&)>;

    struct Config {
        uint32_t max_payload = kDefaultMaxPayload;
        size_t max_connections = 64;
    };

    static Result<std::unique_ptr<WireServer>> start(const std::string& host, uint16_t port,
                                                     Handler handler, Config config);
    static Result<std::unique_ptr<WireServer>> start(const std::string& host, uint16_t port,
                                                     Handler handler) {
        return start(host, port, std::move(handler), Config{});
    }
    ~WireServer();

    uint16_t port() const { return listener_.port(); }
    std::string endpoint() const { return host_ + ":" + std::to_string(port()); }
    void stop();

    size_t connections_accepted() const { return accepted_.load(); }
    size_t connections_rejected() const { return rejected_.load(); }

private:
    struct ConnSlot {
        TcpConn conn;
        std::thread thread;
        std::atomic<bool> open{false};
    };

    WireServer(std::string host, TcpListener listener, Handler handler, Config config);
    void accept_loop();
    void serve_conn(ConnSlot* slot);
    void reap_closed_locked();

    std::string host_;
    TcpListener listener_;
    Handler handler_;
    Config config_;
    std::thread accept_thread_;
    std::mutex conns_mu_;
    std::vector<std::unique_ptr<ConnSlot>> conns_;
    std::atomic<bool> stopping_{false};
    std::atomic<size_t> accepted_{0};
    std::atomic<size_t> rejected_{0};
    std::atomic<size_t> live_{0};
};

}  // namespace tierkv
