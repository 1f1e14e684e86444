#pragma once

// Line-delimited JSON transports: an in-process loop for tests and a TCP
// client/server pair. Requests may be pipelined; responses are matched back
// to requests by correlation id.

#include <json.hpp>

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "backtracing/error.hpp"
#include "backtracing/protocol.hpp"

namespace backtracing::protocol {

// Anything that answers wire requests: mocks, fixtures, a remote server.
class Backend {
public:
    virtual ~Backend() = default;
    virtual ModelResponse handle(const ModelRequest& request) = 0;

    // Full wire-level handling with error capture; never throws.
    nlohmann::json handle_line(const std::string& line) {
        nlohmann::json j;
        std::string id;
        try {
            j = nlohmann::json::parse(line);
            if (j.is_object()) id = j.value("id", std::string());
            const auto req = decode_request(j);
            validate_request(req);
            return encode_response(handle(req), id);
        } catch (const nlohmann::json::exception& e) {
            return encode_response(error_response(kBadRequest, e.what()), id);
        } catch (const Error& e) {
            return encode_response(error_response(e.kind(), e.what()), id);
        } catch (const std::exception& e) {
            return encode_response(error_response("internal", e.what()), id);
        }
    }
};

class Transport {
public:
    virtual ~Transport() = default;
    // Sends every request and returns responses in request order. Throws
    // Unavailable when the server cannot be reached.
    virtual std::vector<nlohmann::json> exchange(const std::vector<nlohmann::json>& requests) = 0;
};

class InProcessTransport : public Transport {
public:
    explicit InProcessTransport(std::shared_ptr<Backend> backend) : backend_(std::move(backend)) {}

    void set_available(bool up) { available_ = up; }

    std::vector<nlohmann::json> exchange(const std::vector<nlohmann::json>& requests) override {
        if (!available_) throw Unavailable("in-process backend marked down");
        std::vector<nlohmann::json> out;
        out.reserve(requests.size());
        for (const auto& r : requests) out.push_back(backend_->handle_line(r.dump()));
        return out;
    }

private:
    std::shared_ptr<Backend> backend_;
    std::atomic<bool> available_{true};
};

struct HostPort {
    std::string host;
    std::string port;
};

inline HostPort parse_addr(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos || colon + 1 == addr.size())
        throw std::invalid_argument("server address must be host:port, got '" + addr + "'");
    return {colon == 0 ? std::string("127.0.0.1") : addr.substr(0, colon), addr.substr(colon + 1)};
}

namespace detail {

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    ~Fd() { reset(); }

    int get() const noexcept { return fd_; }
    explicit operator bool() const noexcept { return fd_ >= 0; }
    void reset() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

inline bool send_all(int fd, const std::string& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const auto n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return false;
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

// Buffered line reader over a socket.
class LineReader {
public:
    explicit LineReader(int fd) : fd_(fd) {}

    bool read_line(std::string& line) {
        for (;;) {
            const auto nl = buf_.find('\n');
            if (nl != std::string::npos) {
                line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                return true;
            }
            char chunk[65536];
            const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) return false;
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_;
    std::string buf_;
};

}  // namespace detail

class SocketTransport : public Transport {
public:
    explicit SocketTransport(std::string addr, std::chrono::seconds timeout = std::chrono::seconds(600))
        : addr_(std::move(addr)), timeout_(timeout) {
        parse_addr(addr_);
    }

    const std::string& addr() const noexcept { return addr_; }

    std::vector<nlohmann::json> exchange(const std::vector<nlohmann::json>& requests) override {
        std::lock_guard lock(mu_);
        if (!fd_) connect();
        std::string out;
        for (const auto& r : requests) {
            out += r.dump();
            out.push_back('\n');
        }
        if (!detail::send_all(fd_.get(), out)) fail("send failed");

        std::map<std::string, nlohmann::json> by_id;
        std::string line;
        while (by_id.size() < requests.size()) {
            if (!reader_->read_line(line)) fail("connection closed while awaiting responses");
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception&) {
                fd_.reset();
                throw ProtocolViolation("unparsable response line");
            }
            auto id = j.is_object() ? j.value("id", std::string()) : std::string();
            by_id[std::move(id)] = std::move(j);
        }
        std::vector<nlohmann::json> result;
        result.reserve(requests.size());
        for (const auto& r : requests) {
            auto it = by_id.find(r.value("id", std::string()));
            if (it == by_id.end()) {
                fd_.reset();
                throw ProtocolViolation("response id mismatch");
            }
            result.push_back(std::move(it->second));
        }
        return result;
    }

private:
    [[noreturn]] void fail(const std::string& what) {
        fd_.reset();
        reader_.reset();
        throw Unavailable(addr_ + ": " + what);
    }

    void connect() {
        const auto hp = parse_addr(addr_);
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res) != 0 || !res)
            throw Unavailable(addr_ + ": cannot resolve");
        std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
        for (auto* ai = res; ai; ai = ai->ai_next) {
            detail::Fd fd(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
            if (!fd) continue;
            if (::connect(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
                timeval tv{static_cast<time_t>(timeout_.count()), 0};
                ::setsockopt(fd.get(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
                int one = 1;
                ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                fd_ = std::move(fd);
                reader_ = std::make_unique<detail::LineReader>(fd_.get());
                return;
            }
        }
        throw Unavailable(addr_ + ": connection refused");
    }

    std::string addr_;
    std::chrono::seconds timeout_;
    std::mutex mu_;
    detail::Fd fd_;
    std::unique_ptr<detail::LineReader> reader_;
};

// Serves a Backend over TCP, one thread per connection, answering pipelined
// requests in arrival order.
class TcpLineServer {
public:
    TcpLineServer(std::shared_ptr<Backend> backend, const std::string& addr) : backend_(std::move(backend)) {
        const auto hp = parse_addr(addr);
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        hints.ai_flags = AI_PASSIVE;
        addrinfo* res = nullptr;
        if (::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res) != 0 || !res)
            throw std::runtime_error("cannot resolve listen address " + addr);
        std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
        listen_ = detail::Fd(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
        int one = 1;
        ::setsockopt(listen_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (!listen_ || ::bind(listen_.get(), res->ai_addr, res->ai_addrlen) != 0 || ::listen(listen_.get(), 16) != 0)
            throw std::runtime_error("cannot listen on " + addr + ": " + std::strerror(errno));
        sockaddr_in bound{};
        socklen_t len = sizeof bound;
        ::getsockname(listen_.get(), reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = ntohs(bound.sin_port);
        host_ = hp.host;
    }

    TcpLineServer(const TcpLineServer&) = delete;
    TcpLineServer& operator=(const TcpLineServer&) = delete;
    ~TcpLineServer() { stop(); }

    unsigned short port() const noexcept { return port_; }
    std::string addr() const { return host_ + ":" + std::to_string(port_); }

    void start() {
        acceptor_ = std::thread([this] { accept_loop(); });
    }

    // Blocks serving until stop() is called from another thread.
    void run() { accept_loop(); }

    void stop() {
        if (stopping_.exchange(true)) return;
        ::shutdown(listen_.get(), SHUT_RDWR);
        if (acceptor_.joinable()) acceptor_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard lock(conn_mu_);
            for (int fd : open_conns_) ::shutdown(fd, SHUT_RDWR);
            workers.swap(workers_);
        }
        for (auto& t : workers)
            if (t.joinable()) t.join();
    }

    std::size_t requests_served() const noexcept { return served_.load(); }

private:
    void accept_loop() {
        while (!stopping_) {
            const int c = ::accept(listen_.get(), nullptr, nullptr);
            if (c < 0) {
                if (errno == EINTR) continue;
                break;
            }
            std::lock_guard lock(conn_mu_);
            open_conns_.push_back(c);
            workers_.emplace_back([this, c] { serve(c); });
        }
    }

    void serve(int raw) {
        detail::Fd fd(raw);
        detail::LineReader reader(fd.get());
        std::string line;
        while (reader.read_line(line)) {
            if (line.empty()) continue;
            const auto resp = backend_->handle_line(line);
            ++served_;
            if (!detail::send_all(fd.get(), resp.dump() + "\n")) break;
        }
        std::lock_guard lock(conn_mu_);
        std::erase(open_conns_, raw);
    }

    std::shared_ptr<Backend> backend_;
    detail::Fd listen_;
    std::string host_;
    unsigned short port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<std::size_t> served_{0};
    std::thread acceptor_;
    std::mutex conn_mu_;
    std::vector<int> open_conns_;
    std::vector<std::thread> workers_;
};

}  // namespace backtracing::protocol
