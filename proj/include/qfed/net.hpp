#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qfed/fed.hpp"
#include "qfed/wire.hpp"

namespace qfed {

/// Owning TCP socket.
class Socket {
  public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket();
    Socket(Socket &&other) noexcept;
    Socket &operator=(Socket &&other) noexcept;
    Socket(const Socket &) = delete;
    Socket &operator=(const Socket &) = delete;

    [[nodiscard]] bool valid() const { return fd_ >= 0; }
    [[nodiscard]] int native_handle() const { return fd_; }
    void close();

    void send_all(std::span<const std::uint8_t> bytes);
    /// Fills `out` completely; throws std::runtime_error on EOF or error.
    void recv_exact(std::span<std::uint8_t> out);

  private:
    int fd_ = -1;
};

class Listener {
  public:
    /// Binds and listens; port 0 picks an ephemeral port.
    Listener(const std::string &host, std::uint16_t port);

    [[nodiscard]] std::uint16_t port() const { return port_; }
    Socket accept(std::chrono::milliseconds timeout);
    void close() { socket_.close(); }

  private:
    Socket socket_;
    std::uint16_t port_ = 0;
};

Socket connect_to(const std::string &host, std::uint16_t port,
                  std::chrono::milliseconds timeout = std::chrono::seconds(10));

void send_message(Socket &socket, const Message &msg);
Message recv_message(Socket &socket, std::size_t max_frame = default_max_frame);

/**
 * Server side of the TCP protocol: accepts one connection per client, each
 * opening with JOIN(client_id); per round sends GLOBAL_MODEL and expects
 * LOCAL_UPDATE; METRICS after aggregation; SHUTDOWN at the end.
 */
class TcpServerTransport final : public Transport {
  public:
    TcpServerTransport(Listener &listener, std::size_t n_clients,
                       std::size_t max_frame = default_max_frame,
                       std::chrono::milliseconds accept_timeout = std::chrono::seconds(60));

    std::vector<RoundUpdate> exchange(std::size_t round,
                                      std::span<const double> global_params) override;
    void publish_metrics(std::size_t round, const Metrics &metrics) override;
    void shutdown() override;

  private:
    std::vector<Socket> clients_; // indexed by client id
    std::size_t max_frame_;
};

using MetricsCallback = std::function<void(const MetricsMsg &)>;

/// Client side: connect, JOIN, then serve GLOBAL_MODEL requests until SHUTDOWN.
void run_tcp_client(const std::string &host, std::uint16_t port, FedClient &client,
                    std::size_t max_frame = default_max_frame,
                    const MetricsCallback &on_metrics = {});

} // namespace qfed
