#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "hpipe/wire.hpp"

namespace hpipe::net {

/// "host:port" -> (host, port). Throws NetError on malformed input.
std::pair<std::string, uint16_t> parse_endpoint(const std::string& endpoint);

struct RetryPolicy {
    int attempts = 5;
    double initial_backoff_s = 0.1;  // doubles per attempt
};

/// RAII wrapper around a connected stream socket.
class TcpStream {
  public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {}
    TcpStream(TcpStream&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    TcpStream& operator=(TcpStream&& o) noexcept;
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;
    ~TcpStream();

    static TcpStream connect(const std::string& endpoint);
    /// Bounded exponential backoff per the retry policy, then NetError.
    static TcpStream connect_with_retry(const std::string& endpoint, const RetryPolicy& retry);

    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }
    void close();

    void write_all(const uint8_t* data, size_t len);
    /// Reads exactly len bytes. Returns false on clean EOF at offset 0;
    /// throws NetError on mid-message EOF or socket errors.
    bool read_exact(uint8_t* data, size_t len);

    void send_message(const wire::Message& msg);
    /// Reads one framed message. Returns nullopt on clean EOF between messages.
    std::optional<wire::Message> read_message();

  private:
    int fd_ = -1;
};

class TcpListener {
  public:
    TcpListener() = default;
    /// Binds and listens. Port 0 picks an ephemeral port (see local_endpoint).
    explicit TcpListener(const std::string& endpoint);
    TcpListener(TcpListener&& o) noexcept : fd_(std::exchange(o.fd_, -1)), endpoint_(std::move(o.endpoint_)) {}
    TcpListener& operator=(TcpListener&& o) noexcept;
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    ~TcpListener();

    bool valid() const { return fd_ >= 0; }
    const std::string& local_endpoint() const { return endpoint_; }
    TcpStream accept();
    void close();

  private:
    int fd_ = -1;
    std::string endpoint_;
};

uint64_t monotonic_ns();

}  // namespace hpipe::net
