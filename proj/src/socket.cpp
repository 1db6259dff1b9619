#include "tierkv/socket.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

namespace tierkv {

namespace {

Status errno_status(const char* what) {
    return Status{Errc::io_error, std::string(what) + ": " + std::strerror(errno)};
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

TcpConn::TcpConn(TcpConn&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}

TcpConn& TcpConn::operator=(TcpConn&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
}

TcpConn::~TcpConn() { close(); }

Result<TcpConn> TcpConn::connect(const std::string& host, uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return errno_status("socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        return Status{Errc::invalid_argument, "bad address: " + host};
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        auto st = errno_status("connect");
        ::close(fd);
        return st;
    }
    set_nodelay(fd);
    return TcpConn(fd);
}

Status TcpConn::read_exact(MutByteSpan out) {
    size_t got = 0;
    while (got < out.size()) {
        ssize_t n = ::recv(fd_, out.data() + got, out.size() - got, 0);
        if (n == 0) {
            return got == 0 ? Status{Errc::not_found, "peer closed"}
                            : Status{Errc::io_error, "truncated read"};
        }
        if (n < 0) {
            if (errno == EINTR) continue;
            return errno_status("recv");
        }
        got += size_t(n);
    }
    return Status::success();
}

Result<size_t> TcpConn::read_some(MutByteSpan out) {
    for (;;) {
        ssize_t n = ::recv(fd_, out.data(), out.size(), 0);
        if (n >= 0) return size_t(n);
        if (errno == EINTR) continue;
        return errno_status("recv");
    }
}

Status TcpConn::write_all(ByteSpan data) {
    size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return errno_status("send");
        }
        sent += size_t(n);
    }
    return Status::success();
}

void TcpConn::shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void TcpConn::shutdown_rw() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void TcpConn::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

TcpListener::TcpListener(TcpListener&& o) noexcept
    : fd_(std::exchange(o.fd_, -1)), port_(o.port_) {}

TcpListener& TcpListener::operator=(TcpListener&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = std::exchange(o.fd_, -1);
        port_ = o.port_;
    }
    return *this;
}

TcpListener::~TcpListener() { close(); }

Result<TcpListener> TcpListener::bind(const std::string& host, uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return errno_status("socket");
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        return Status{Errc::invalid_argument, "bad address: " + host};
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(fd, 64) != 0) {
        auto st = errno_status("bind/listen");
        ::close(fd);
        return st;
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
    TcpListener listener;
    listener.fd_ = fd;
    listener.port_ = ntohs(bound.sin_port);
    return listener;
}

Result<TcpConn> TcpListener::accept() {
    for (;;) {
        int fd = ::accept(fd_, nullptr, nullptr);
        if (fd >= 0) {
            set_nodelay(fd);
            return TcpConn(fd);
        }
        if (errno == EINTR) continue;
        return errno_status("accept");
    }
}

void TcpListener::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

Result<std::pair<std::string, uint16_t>> split_endpoint(const std::string& endpoint) {
    auto colon = endpoint.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size())
        return Status{Errc::invalid_argument, "endpoint must be host:port"};
    unsigned long port = 0;
    try {
        port = std::stoul(endpoint.substr(colon + 1));
    } catch (...) {
        return Status{Errc::invalid_argument, "bad port in " + endpoint};
    }
    if (port == 0 || port > 65535)
        return Status{Errc::invalid_argument, "bad port in " + endpoint};
    return std::make_pair(endpoint.substr(0, colon), uint16_t(port));
}

}  // namespace tierkv
