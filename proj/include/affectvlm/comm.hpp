#pragma once

// Data-parallel collectives. Rank 0 binds an OS-assigned TCP port and
// publishes "<host> <port>" in a launch file; the other ranks read it and
// connect. Reductions go through rank 0 and sum contributions in rank
// order, so every topology reduces in the same fixed order.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace avlm {

// Element-wise mean of equally sized vectors, accumulated in index order.
inline std::vector<double> reduce_mean(std::span<const std::vector<double>> parts) {
    if (parts.empty()) throw InvalidInput("reduce_mean: nothing to reduce");
    std::vector<double> out = parts.front();
    for (std::size_t r = 1; r < parts.size(); ++r) {
        if (parts[r].size() != out.size()) throw ShapeError("reduce_mean: contributions differ in size");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += parts[r][i];
    }
    const double n = static_cast<double>(parts.size());
    for (double& v : out) v /= n;
    return out;
}

class Communicator {
public:
    virtual ~Communicator() = default;
    virtual int rank() const = 0;
    virtual int size() const = 0;
    // Replaces `data` on every rank by the rank-ordered mean.
    virtual void allreduce_mean(std::vector<double>& data) = 0;
    // Replaces `data` on every rank by rank 0's copy.
    virtual void broadcast(std::vector<double>& data) = 0;
};

class LocalCommunicator final : public Communicator {
public:
    int rank() const override { return 0; }
    int size() const override { return 1; }
    void allreduce_mean(std::vector<double>& data) override {
        std::vector<double> parts[1] = {std::move(data)};
        data = reduce_mean(parts);
    }
    void broadcast(std::vector<double>&) override {}
};

struct Rendezvous {
    std::filesystem::path launch_file;
    std::string host = "127.0.0.1";
    std::chrono::milliseconds timeout{30000};
};

namespace comm_detail {

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    void close() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

inline void send_all(const Socket& s, const void* data, std::size_t n, int peer) {
    const auto* p = static_cast<const char*>(data);
    while (n > 0) {
        const ssize_t k = ::send(s.fd(), p, n, MSG_NOSIGNAL);
        if (k < 0 && errno == EINTR) continue;
        if (k <= 0) throw CommError(std::string("send failed: ") + std::strerror(errno), peer);
        p += k;
        n -= static_cast<std::size_t>(k);
    }
}

inline void recv_all(const Socket& s, void* data, std::size_t n, int peer) {
    auto* p = static_cast<char*>(data);
    while (n > 0) {
        const ssize_t k = ::recv(s.fd(), p, n, 0);
        if (k < 0 && errno == EINTR) continue;
        if (k == 0) throw CommError("peer closed the connection", peer);
        if (k < 0) throw CommError(std::string("receive failed: ") + std::strerror(errno), peer);
        p += k;
        n -= static_cast<std::size_t>(k);
    }
}

inline void send_vector(const Socket& s, const std::vector<double>& v, int peer) {
    const std::uint64_t n = v.size();
    send_all(s, &n, sizeof n, peer);
    send_all(s, v.data(), v.size() * sizeof(double), peer);
}

inline std::vector<double> recv_vector(const Socket& s, int peer) {
    std::uint64_t n = 0;
    recv_all(s, &n, sizeof n, peer);
    if (n > (std::uint64_t{1} << 32)) throw CommError("implausible message length", peer);
    std::vector<double> v(static_cast<std::size_t>(n));
    recv_all(s, v.data(), v.size() * sizeof(double), peer);
    return v;
}

inline void tune(const Socket& s, std::chrono::milliseconds timeout) {
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
    tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
    ::setsockopt(s.fd(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(s.fd(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

inline constexpr std::uint32_t kHello = 0x41564C4D;  // "AVLM"

}  // namespace comm_detail

class TcpCommunicator final : public Communicator {
public:
    // Blocks until all `world` ranks have joined.
    TcpCommunicator(int rank, int world, const Rendezvous& rv) : rank_(rank), world_(world) {
        using namespace comm_detail;
        if (world < 1 || rank < 0 || rank >= world) throw InvalidInput("tcp communicator: bad rank/world");
        if (rank == 0) host(rv);
        else join(rv);
    }

    int rank() const override { return rank_; }
    int size() const override { return world_; }

    void allreduce_mean(std::vector<double>& data) override {
        using namespace comm_detail;
        if (rank_ == 0) {
            std::vector<std::vector<double>> parts;
            parts.reserve(static_cast<std::size_t>(world_));
            parts.push_back(std::move(data));
            for (int r = 1; r < world_; ++r) parts.push_back(recv_vector(peers_[static_cast<std::size_t>(r)], r));
            data = reduce_mean(parts);
            for (int r = 1; r < world_; ++r) send_vector(peers_[static_cast<std::size_t>(r)], data, r);
        } else {
            send_vector(root_, data, 0);
            auto result = recv_vector(root_, 0);
            if (result.size() != data.size()) throw CommError("reduced vector has the wrong size", 0);
            data = std::move(result);
        }
    }

    void broadcast(std::vector<double>& data) override {
        using namespace comm_detail;
        if (rank_ == 0) {
            for (int r = 1; r < world_; ++r) send_vector(peers_[static_cast<std::size_t>(r)], data, r);
        } else {
            data = recv_vector(root_, 0);
        }
    }

    // Port rank 0 is listening on (rank 0 only).
    int port() const { return port_; }

    // Drops every connection, as if this worker had died.
    void disconnect() {
        for (auto& p : peers_) p.close();
        root_.close();
        listener_.close();
    }

private:
    void host(const Rendezvous& rv) {
        using namespace comm_detail;
        peers_.resize(static_cast<std::size_t>(world_));
        if (world_ == 1) return;
        listener_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
        if (!listener_.valid()) throw CommError("socket() failed", 0);
        int one = 1;
        ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = 0;
        if (::inet_pton(AF_INET, rv.host.c_str(), &addr.sin_addr) != 1)
            throw InvalidInput("tcp communicator: bad host " + rv.host);
        if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw CommError(std::string("bind failed: ") + std::strerror(errno), 0);
        if (::listen(listener_.fd(), world_) != 0) throw CommError("listen failed", 0);
        socklen_t len = sizeof addr;
        ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);

        const auto tmp = rv.launch_file.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << rv.host << ' ' << port_ << '\n';
        }
        std::filesystem::rename(tmp, rv.launch_file);

        tune(listener_, rv.timeout);
        for (int joined = 1; joined < world_; ++joined) {
            Socket s(::accept(listener_.fd(), nullptr, nullptr));
            if (!s.valid()) throw CommError("timed out waiting for workers to join", joined);
            tune(s, rv.timeout);
            std::uint32_t hello[3];
            recv_all(s, hello, sizeof hello, -1);
            const int r = static_cast<int>(hello[1]);
            if (hello[0] != kHello || static_cast<int>(hello[2]) != world_ || r <= 0 || r >= world_ ||
                peers_[static_cast<std::size_t>(r)].valid())
                throw CommError("bad handshake", r);
            peers_[static_cast<std::size_t>(r)] = std::move(s);
        }
    }

    void join(const Rendezvous& rv) {
        using namespace comm_detail;
        const auto deadline = std::chrono::steady_clock::now() + rv.timeout;
        std::string host;
        int port = 0;
        while (true) {
            std::ifstream in(rv.launch_file);
            if (in >> host >> port) break;
            if (std::chrono::steady_clock::now() > deadline) throw CommError("no launch file from rank 0", 0);
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
        while (true) {
            root_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
            if (::connect(root_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) break;
            if (std::chrono::steady_clock::now() > deadline) throw CommError("cannot reach rank 0", 0);
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        tune(root_, rv.timeout);
        const std::uint32_t hello[3] = {kHello, static_cast<std::uint32_t>(rank_), static_cast<std::uint32_t>(world_)};
        send_all(root_, hello, sizeof hello, 0);
    }

    int rank_;
    int world_;
    int port_ = 0;
    comm_detail::Socket listener_;
    comm_detail::Socket root_;
    std::vector<comm_detail::Socket> peers_;
};

}  // namespace avlm
