#pragma once

#include <cstdint>
#include <string>

#include "tierkv/common.hpp"

namespace tierkv {

// Blocking TCP stream. Integers on the wire are the caller's concern; this
// layer moves bytes and nothing else.
class TcpConn {
public:
    TcpConn() = default;
    explicit TcpConn(int fd) : fd_(fd) {}
    TcpConn(TcpConn&& o) noexcept;
    TcpConn& operator=(TcpConn&& o) noexcept;
    TcpConn(const TcpConn&) = delete;
    TcpConn& operator=(const TcpConn&) = delete;
    ~TcpConn();

    static Result<TcpConn> connect(const std::string& host, uint16_t port);

    bool valid() const { return fd_ >= 0; }
    // Reads until the span is full. not_found on clean peer close at a
    // message boundary start, io_error otherwise.
    Status read_exact(MutByteSpan out);
    // Reads whatever is available, up to out.size(). 0 bytes = peer closed.
    Result<size_t> read_some(MutByteSpan out);
    Status write_all(ByteSpan data);
    void shutdown_write();
    // Wakes a blocked reader on another thread; the fd stays valid until close().
    void shutdown_rw();
    void close();

private:
    int fd_ = -1;
};

class TcpListener {
public:
    TcpListener() = default;
    TcpListener(TcpListener&& o) noexcept;
    TcpListener& operator=(TcpListener&& o) noexcept;
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    ~TcpListener();

    // port 0 binds an ephemeral port; port() reports the real one.
    static Result<TcpListener> bind(const std::string& host, uint16_t port);

    bool valid() const { return fd_ >= 0; }
    uint16_t port() const { return port_; }
    Result<TcpConn> accept();
    void close();

private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

// "host:port" used by instance address books.
Result<std::pair<std::string, uint16_t>> split_endpoint(const std::string& endpoint);

}  // namespace tierkv
