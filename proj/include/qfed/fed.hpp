#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qfed/dataset.hpp"
#include "qfed/model.hpp"

namespace qfed {

/// Samples owned by one client, as sorted indices into the parent dataset.
struct Shard {
    std::uint32_t client_id = 0;
    std::vector<std::size_t> indices;

    friend bool operator==(const Shard &, const Shard &) = default;
};

struct FedConfig {
    std::size_t n_clients = 4;
    std::size_t n_rounds = 15;
    std::size_t local_epochs = 1;
    /// 0 = split all available samples evenly.
    std::size_t samples_per_client = 0;
    std::uint64_t seed = 0;
    TrainConfig train;
    /// Clients trained concurrently by the in-process transport.
    std::size_t workers = 1;
    /// Permits local_epochs == 0 (parameters pass through unchanged).
    bool allow_zero_local_epochs = false;

    void validate() const;
};

struct RoundUpdate {
    std::uint32_t client_id = 0;
    std::vector<double> params;
    std::uint64_t n_samples = 0;
    Metrics local_metrics;

    friend bool operator==(const RoundUpdate &, const RoundUpdate &) = default;
};

/**
 * Disjoint shards of equal size. Per-class counts within a shard are equal
 * for even sizes; for odd sizes they differ by one, alternating which class
 * gets the extra sample so the union stays balanced. Samples left over after
 * the even split are dropped. Throws std::invalid_argument naming the
 * per-class deficit when the request cannot be met.
 */
std::vector<Shard> partition(const DatasetView &data, std::size_t n_clients, std::uint64_t seed,
                             std::size_t samples_per_client = 0);

/// Sum_i (n_i / sum n) * params_i, accumulated in client_id order.
std::vector<double> fedavg_aggregate(std::vector<RoundUpdate> updates);

/**
 * Stateful federated client. Its Adam moments persist across rounds, and
 * its local epoch k uses epoch_seed(seed, client_id, k), so a single client
 * holding the whole training set follows the centralized trajectory exactly.
 */
class FedClient {
  public:
    FedClient(const Dataset &data, Shard shard, const ModelSpec &spec, const FedConfig &config,
              const LossConfig &loss_config);

    [[nodiscard]] std::uint32_t id() const { return shard_.client_id; }
    [[nodiscard]] const Shard &shard() const { return shard_; }

    RoundUpdate local_update(std::span<const double> global_params);

  private:
    DatasetView view_;
    Shard shard_;
    FedConfig config_;
    LossConfig loss_;
    Model model_;
    Optimizer optimizer_;
    std::size_t epochs_done_ = 0;
};

/// One-shot local training from `global_params` on `shard` with a fresh optimizer.
RoundUpdate local_update(std::span<const double> global_params, const Dataset &data,
                         const Shard &shard, const ModelSpec &spec, const FedConfig &config,
                         const LossConfig &loss_config);

struct ClientRoundLog {
    std::uint32_t client_id = 0;
    std::uint64_t n_samples = 0;
    Metrics local;

    friend bool operator==(const ClientRoundLog &, const ClientRoundLog &) = default;
};

struct RoundRecord {
    std::size_t round = 0;
    Metrics global;
    std::vector<ClientRoundLog> clients;

    friend bool operator==(const RoundRecord &, const RoundRecord &) = default;
};

struct FedHistory {
    std::vector<RoundRecord> rounds;
    std::vector<double> final_params;
};

/// Round-level link between the server and its clients.
class Transport {
  public:
    virtual ~Transport() = default;
    /// Sends the global model to every client and returns their updates.
    virtual std::vector<RoundUpdate> exchange(std::size_t round,
                                              std::span<const double> global_params) = 0;
    virtual void publish_metrics(std::size_t round, const Metrics &metrics) = 0;
    virtual void shutdown() = 0;
};

/// Calls clients directly, concurrently when `workers` > 1.
class InProcessTransport final : public Transport {
  public:
    InProcessTransport(std::vector<FedClient> &clients, std::size_t workers);
    std::vector<RoundUpdate> exchange(std::size_t round,
                                      std::span<const double> global_params) override;
    void publish_metrics(std::size_t, const Metrics &) override {}
    void shutdown() override {}

  private:
    std::vector<FedClient> &clients_;
    std::size_t workers_;
};

using RoundCallback = std::function<void(const RoundRecord &)>;

/// Server loop: broadcast, collect, aggregate, evaluate on `test`, n_rounds times.
FedHistory serve_rounds(const FedConfig &config, const ModelSpec &spec, const DatasetView &test,
                        const LossConfig &loss_config, Transport &transport,
                        const RoundCallback &on_round = {});

enum class TransportKind { in_process, tcp };

std::string to_string(TransportKind kind);
TransportKind transport_from_string(const std::string &name);

/// Partitions `train`, builds the clients and runs the federation end to end.
/// The TCP variant listens on 127.0.0.1 (ephemeral port) with one thread per client.
FedHistory run_rounds(const FedConfig &config, const ModelSpec &spec, const DatasetView &train,
                      const DatasetView &test, const LossConfig &loss_config,
                      TransportKind transport = TransportKind::in_process,
                      const RoundCallback &on_round = {});

} // namespace qfed
