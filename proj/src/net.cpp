#include "qfed/net.hpp"

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <thread>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace qfed {

namespace {

[[noreturn]] void throw_errno(const std::string &what) {
    throw std::runtime_error(what + ": " + std::strerror(errno));
}

sockaddr_in resolve(const std::string &host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo *res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res); rc != 0) {
        throw std::runtime_error("cannot resolve host '" + host + "': " + ::gai_strerror(rc));
    }
    sockaddr_in addr{};
    std::memcpy(&addr, res->ai_addr, sizeof(addr));
    ::freeaddrinfo(res);
    addr.sin_port = htons(port);
    return addr;
}

} // namespace

Socket::~Socket() { close(); }

Socket::Socket(Socket &&other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

Socket &Socket::operator=(Socket &&other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

void Socket::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::send_all(std::span<const std::uint8_t> bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw_errno("send");
        }
        sent += static_cast<std::size_t>(n);
    }
}

void Socket::recv_exact(std::span<std::uint8_t> out) {
    std::size_t got = 0;
    while (got < out.size()) {
        const ssize_t n = ::recv(fd_, out.data() + got, out.size() - got, 0);
        if (n == 0) {
            throw std::runtime_error("connection closed by peer");
        }
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw_errno("recv");
        }
        got += static_cast<std::size_t>(n);
    }
}

Listener::Listener(const std::string &host, std::uint16_t port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) {
        throw_errno("socket");
    }
    socket_ = Socket(fd);
    const int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr = resolve(host, port);
    if (::bind(fd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) < 0) {
        throw_errno("bind " + host + ":" + std::to_string(port));
    }
    if (::listen(fd, 128) < 0) {
        throw_errno("listen");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr *>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

Socket Listener::accept(std::chrono::milliseconds timeout) {
    pollfd p{};
    p.fd = socket_.native_handle();
    p.events = POLLIN;
    int rc = 0;
    do {
        rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    } while (rc < 0 && errno == EINTR);
    if (rc < 0) {
        throw_errno("poll");
    }
    if (rc == 0) {
        throw std::runtime_error("timed out waiting for a client connection");
    }
    const int fd = ::accept(socket_.native_handle(), nullptr, nullptr);
    if (fd < 0) {
        throw_errno("accept");
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return Socket(fd);
}

Socket connect_to(const std::string &host, std::uint16_t port,
                  std::chrono::milliseconds timeout) {
    sockaddr_in addr = resolve(host, port);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) {
            throw_errno("socket");
        }
        Socket s(fd);
        if (::connect(fd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) == 0) {
            const int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            return s;
        }
        if (std::chrono::steady_clock::now() >= deadline) {
            throw_errno("connect " + host + ":" + std::to_string(port));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
}

void send_message(Socket &socket, const Message &msg) { socket.send_all(encode_message(msg)); }

Message recv_message(Socket &socket, std::size_t max_frame) {
    std::vector<std::uint8_t> frame(4);
    socket.recv_exact(frame);
    const std::uint32_t len =
        frame_length(std::span<const std::uint8_t, 4>(frame.data(), 4), max_frame);
    frame.resize(4 + std::size_t{len});
    socket.recv_exact(std::span<std::uint8_t>(frame).subspan(4));
    return decode_message(frame, max_frame);
}

// ---------------------------------------------------------------- server

TcpServerTransport::TcpServerTransport(Listener &listener, std::size_t n_clients,
                                       std::size_t max_frame,
                                       std::chrono::milliseconds accept_timeout)
    : clients_(n_clients), max_frame_(max_frame) {
    for (std::size_t k = 0; k < n_clients; ++k) {
        Socket s = listener.accept(accept_timeout);
        const Message hello = recv_message(s, max_frame_);
        const auto *join = std::get_if<JoinMsg>(&hello);
        if (join == nullptr) {
            throw std::runtime_error("expected JOIN as the first message from a client");
        }
        if (join->client_id >= n_clients || clients_[join->client_id].valid()) {
            throw std::runtime_error("invalid or duplicate client id " +
                                     std::to_string(join->client_id) + " in JOIN");
        }
        clients_[join->client_id] = std::move(s);
    }
}

std::vector<RoundUpdate> TcpServerTransport::exchange(std::size_t round,
                                                      std::span<const double> global_params) {
    const Message out = GlobalModelMsg{static_cast<std::uint32_t>(round),
                                       {global_params.begin(), global_params.end()}};
    const auto bytes = encode_message(out);
    for (std::size_t c = 0; c < clients_.size(); ++c) {
        try {
            clients_[c].send_all(bytes);
        } catch (const std::exception &e) {
            throw std::runtime_error("client " + std::to_string(c) + " unreachable in round " +
                                     std::to_string(round) + ": " + e.what());
        }
    }
    std::vector<RoundUpdate> updates;
    for (std::size_t c = 0; c < clients_.size(); ++c) {
        Message reply;
        try {
            reply = recv_message(clients_[c], max_frame_);
        } catch (const std::exception &e) {
            throw std::runtime_error("client " + std::to_string(c) + " failed in round " +
                                     std::to_string(round) + ": " + e.what());
        }
        auto *update = std::get_if<LocalUpdateMsg>(&reply);
        if (update == nullptr || update->update.client_id != c) {
            throw std::runtime_error("client " + std::to_string(c) +
                                     " sent an unexpected message in round " +
                                     std::to_string(round));
        }
        updates.push_back(std::move(update->update));
    }
    return updates;
}

void TcpServerTransport::publish_metrics(std::size_t round, const Metrics &metrics) {
    const auto bytes = encode_message(MetricsMsg{static_cast<std::uint32_t>(round), metrics});
    for (auto &s : clients_) {
        s.send_all(bytes);
    }
}

void TcpServerTransport::shutdown() {
    const auto bytes = encode_message(ShutdownMsg{});
    for (auto &s : clients_) {
        s.send_all(bytes);
    }
}

// ---------------------------------------------------------------- client

void run_tcp_client(const std::string &host, std::uint16_t port, FedClient &client,
                    std::size_t max_frame, const MetricsCallback &on_metrics) {
    Socket s = connect_to(host, port);
    send_message(s, JoinMsg{client.id()});
    while (true) {
        Message msg = recv_message(s, max_frame);
        if (auto *global = std::get_if<GlobalModelMsg>(&msg)) {
            send_message(s, LocalUpdateMsg{client.local_update(global->params)});
        } else if (auto *metrics = std::get_if<MetricsMsg>(&msg)) {
            if (on_metrics) {
                on_metrics(*metrics);
            }
        } else if (std::holds_alternative<ShutdownMsg>(msg)) {
            return;
        } else {
            throw std::runtime_error("client " + std::to_string(client.id()) +
                                     ": unexpected message type " +
                                     std::to_string(static_cast<int>(message_type(msg))));
        }
    }
}

} // namespace qfed
