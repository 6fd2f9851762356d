#include "hpipe/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include "hpipe/error.hpp"

namespace hpipe::net {

std::pair<std::string, uint16_t> parse_endpoint(const std::string& endpoint) {
    const auto colon = endpoint.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= endpoint.size()) {
        throw NetError("malformed endpoint \"" + endpoint + "\" (expected host:port)");
    }
    const std::string host = endpoint.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(endpoint.substr(colon + 1));
    } catch (const std::exception&) {
        throw NetError("malformed port in endpoint \"" + endpoint + "\"");
    }
    if (port < 0 || port > 65535) {
        throw NetError("port out of range in endpoint \"" + endpoint + "\"");
    }
    return {host, static_cast<uint16_t>(port)};
}

namespace {

sockaddr_in resolve(const std::string& host, uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) {
        return addr;
    }
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
        throw NetError("cannot resolve host \"" + host + "\"");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return addr;
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

TcpStream& TcpStream::operator=(TcpStream&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
}

TcpStream::~TcpStream() { close(); }

void TcpStream::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

TcpStream TcpStream::connect(const std::string& endpoint) {
    const auto [host, port] = parse_endpoint(endpoint);
    const sockaddr_in addr = resolve(host, port);
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) {
        throw NetError(std::string("socket(): ") + std::strerror(errno));
    }
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
        const int err = errno;
        ::close(fd);
        throw NetError("connect to " + endpoint + " failed: " + std::strerror(err));
    }
    set_nodelay(fd);
    return TcpStream(fd);
}

TcpStream TcpStream::connect_with_retry(const std::string& endpoint, const RetryPolicy& retry) {
    double backoff = retry.initial_backoff_s;
    std::string last_error;
    for (int attempt = 1; attempt <= retry.attempts; ++attempt) {
        try {
            return connect(endpoint);
        } catch (const NetError& e) {
            last_error = e.what();
        }
        if (attempt < retry.attempts) {
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
            backoff *= 2.0;
        }
    }
    throw NetError("giving up on " + endpoint + " after " + std::to_string(retry.attempts) +
                   " attempts: " + last_error);
}

void TcpStream::write_all(const uint8_t* data, size_t len) {
    size_t sent = 0;
    while (sent < len) {
        const ssize_t n = ::send(fd_, data + sent, len - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw NetError(std::string("send(): ") + std::strerror(errno));
        }
        sent += static_cast<size_t>(n);
    }
}

bool TcpStream::read_exact(uint8_t* data, size_t len) {
    size_t got = 0;
    while (got < len) {
        const ssize_t n = ::recv(fd_, data + got, len - got, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw NetError(std::string("recv(): ") + std::strerror(errno));
        }
        if (n == 0) {
            if (got == 0) return false;
            throw NetError("connection closed mid-message");
        }
        got += static_cast<size_t>(n);
    }
    return true;
}

void TcpStream::send_message(const wire::Message& msg) {
    const std::vector<uint8_t> bytes = wire::encode(msg);
    write_all(bytes.data(), bytes.size());
}

std::optional<wire::Message> TcpStream::read_message() {
    uint8_t header[wire::kHeaderSize];
    if (!read_exact(header, sizeof(header))) {
        return std::nullopt;
    }
    const wire::Header h = wire::decode_header(header, sizeof(header));
    const bool is_frame = h.type == wire::MsgType::frame;
    const size_t body_len = (is_frame ? 2 : 0) + h.payload_len;
    std::vector<uint8_t> body(body_len);
    if (body_len > 0 && !read_exact(body.data(), body_len)) {
        throw NetError("connection closed mid-message");
    }
    wire::Message msg;
    msg.type = h.type;
    msg.frame_id = h.frame_id;
    msg.stage_id = h.stage_id;
    msg.timestamp_ns = h.timestamp_ns;
    const uint8_t* cursor = body.data();
    if (is_frame) {
        msg.routed_leaf = wire::get_u16(cursor);
        cursor += 2;
    }
    msg.payload.assign(cursor, cursor + h.payload_len);
    return msg;
}

TcpListener::TcpListener(const std::string& endpoint) {
    const auto [host, port] = parse_endpoint(endpoint);
    const sockaddr_in addr = resolve(host, port);
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) {
        throw NetError(std::string("socket(): ") + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
        const int err = errno;
        ::close(fd_);
        fd_ = -1;
        throw NetError("bind to " + endpoint + " failed: " + std::strerror(err));
    }
    if (::listen(fd_, 64) != 0) {
        const int err = errno;
        ::close(fd_);
        fd_ = -1;
        throw NetError("listen on " + endpoint + " failed: " + std::strerror(err));
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    char buf[INET_ADDRSTRLEN] = {0};
    inet_ntop(AF_INET, &bound.sin_addr, buf, sizeof(buf));
    endpoint_ = std::string(buf) + ":" + std::to_string(ntohs(bound.sin_port));
}

TcpListener& TcpListener::operator=(TcpListener&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = std::exchange(o.fd_, -1);
        endpoint_ = std::move(o.endpoint_);
    }
    return *this;
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

TcpStream TcpListener::accept() {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) {
        throw NetError(std::string("accept(): ") + std::strerror(errno));
    }
    set_nodelay(fd);
    return TcpStream(fd);
}

uint64_t monotonic_ns() {
    return static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

}  // namespace hpipe::net
