#include "tierkv/wire_server.hpp"

namespace tierkv {

Result<std::unique_ptr<WireServer>> WireServer::start(const std::string& host, uint16_t port,
                                                      Handler handler, Config config) {
    auto listener = TcpListener::bind(host, port);
    if (!listener.ok()) return listener.status();
    return std::unique_ptr<WireServer>(
        new WireServer(host, listener.take(), std::move(handler), config));
}

WireServer::WireServer(std::string host, TcpListener listener, Handler handler, Config config)
    : host_(std::move(host)),
      listener_(std::move(listener)),
      handler_(std::move(handler)),
      config_(config) {
    accept_thread_ = std::thread([this] { accept_loop(); });
}

WireServer::~WireServer() { stop(); }

void WireServer::stop() {
    if (stopping_.exchange(true)) return;
    listener_.close();
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::unique_ptr<ConnSlot>> conns;
    {
        std::lock_guard lock(conns_mu_);
        conns.swap(conns_);
    }
    for (auto& slot : conns) {
        slot->conn.shutdown_rw();  // wakes the conn thread; it closes its own fd
        if (slot->thread.joinable()) slot->thread.join();
    }
}

void WireServer::accept_loop() {
    while (!stopping_.load()) {
        auto conn = listener_.accept();
        if (!conn.ok()) break;  // listener closed
        if (live_.load() >= config_.max_connections) {
            rejected_.fetch_add(1);
            continue;  // conn destroyed, peer sees a close
        }
        accepted_.fetch_add(1);
        live_.fetch_add(1);
        auto slot = std::make_unique<ConnSlot>();
        slot->conn = conn.take();
        slot->open = true;
        ConnSlot* raw = slot.get();
        {
            std::lock_guard lock(conns_mu_);
            reap_closed_locked();
            conns_.push_back(std::move(slot));
        }
        raw->thread = std::thread([this, raw] { serve_conn(raw); });
    }
}

void WireServer::reap_closed_locked() {
    std::erase_if(conns_, [](const std::unique_ptr<ConnSlot>& slot) {
        if (slot->open.load()) return false;
        if (slot->thread.joinable()) slot->thread.join();
        return true;
    });
}

void WireServer::serve_conn(ConnSlot* slot) {
    FrameDecoder decoder(config_.max_payload);
    std::vector<uint8_t> buf(64 << 10);
    std::vector<Frame> frames;
    bool alive = true;
    while (alive && !stopping_.load()) {
        auto n = slot->conn.read_some(MutByteSpan(buf.data(), buf.size()));
        if (!n.ok() || n.value() == 0) break;
        frames.clear();
        bool stream_ok = decoder.feed(ByteSpan(buf.data(), n.value()), frames);
        for (const Frame& frame : frames) {
            Reply reply;
            if (frame.oversized) {
                reply.op = Opcode::err;
                reply.payload = encode_err(
                    Errc::size_mismatch,
                    "payload " + std::to_string(frame.announced_len) + " exceeds cap " +
                        std::to_string(config_.max_payload));
            } else if (!opcode_known(frame.opcode) || frame.op() == Opcode::ok ||
                       frame.op() == Opcode::err) {
                reply.op = Opcode::err;
                reply.payload = encode_err(Errc::protocol_error,
                                           "unexpected opcode " + std::to_string(frame.opcode));
            } else {
                reply = handler_(frame);
            }
            auto wire = encode_frame(reply.op, frame.request_id,
                                     ByteSpan(reply.payload.data(), reply.payload.size()));
            if (!slot->conn.write_all(ByteSpan(wire.data(), wire.size())).ok()) {
                alive = false;
                break;
            }
        }
        if (!stream_ok) break;  // poisoned framing: answer what parsed, then close
    }
    slot->conn.close();
    slot->open = false;
    live_.fetch_sub(1);
}

}  // namespace tierkv
