#include "qfed/fed.hpp"

#include <algorithm>
#include <exception>
#include <stdexcept>
#include <thread>

#include "qfed/net.hpp"

namespace qfed {

void FedConfig::validate() const {
    if (n_clients < 1) {
        throw std::invalid_argument("fed: need at least one client");
    }
    if (n_rounds < 1) {
        throw std::invalid_argument("fed: need at least one round");
    }
    if (local_epochs < 1 && !allow_zero_local_epochs) {
        throw std::invalid_argument("fed: local_epochs must be >= 1");
    }
}

std::vector<Shard> partition(const DatasetView &data, std::size_t n_clients, std::uint64_t seed,
                             std::size_t samples_per_client) {
    if (n_clients < 1) {
        throw std::invalid_argument("partition: need at least one client");
    }
    const auto labels = data.labels();
    std::array<std::vector<std::size_t>, 2> classes;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        classes.at(static_cast<std::size_t>(labels[i])).push_back(i);
    }
    Rng rng(derive_seed(seed, 0x5A4D));
    for (auto &c : classes) {
        std::shuffle(c.begin(), c.end(), rng);
    }

    // Class-0 share of shard i for shard size s.
    auto class0_share = [](std::size_t s, std::size_t i) {
        return s / 2 + ((s % 2 == 1 && i % 2 == 0) ? 1 : 0);
    };
    auto demand = [&](std::size_t s) {
        std::array<std::size_t, 2> d{0, 0};
        for (std::size_t i = 0; i < n_clients; ++i) {
            d[0] += class0_share(s, i);
            d[1] += s - class0_share(s, i);
        }
        return d;
    };
    auto fits = [&](std::size_t s) {
        const auto d = demand(s);
        return d[0] <= classes[0].size() && d[1] <= classes[1].size();
    };

    std::size_t size = samples_per_client;
    if (size == 0) {
        size = labels.size() / n_clients;
        while (size > 0 && !fits(size)) {
            --size;
        }
        if (size == 0) {
            throw std::invalid_argument(
                "partition: cannot give each of " + std::to_string(n_clients) +
                " clients a sample (class counts " + std::to_string(classes[0].size()) + "/" +
                std::to_string(classes[1].size()) + ")");
        }
    } else if (!fits(size)) {
        const auto d = demand(size);
        std::string msg = "partition: " + std::to_string(n_clients) + " clients x " +
                          std::to_string(size) + " samples needs";
        for (std::size_t c = 0; c < 2; ++c) {
            msg += " class " + std::to_string(c) + ": " + std::to_string(d[c]) + " (have " +
                   std::to_string(classes[c].size());
            if (d[c] > classes[c].size()) {
                msg += ", deficit " + std::to_string(d[c] - classes[c].size());
            }
            msg += ")";
        }
        throw std::invalid_argument(msg);
    }

    std::vector<Shard> shards(n_clients);
    std::array<std::size_t, 2> cursor{0, 0};
    for (std::size_t i = 0; i < n_clients; ++i) {
        shards[i].client_id = static_cast<std::uint32_t>(i);
        const std::array<std::size_t, 2> take{class0_share(size, i), size - class0_share(size, i)};
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t k = 0; k < take[c]; ++k) {
                shards[i].indices.push_back(data.indices[classes[c][cursor[c]++]]);
            }
        }
        std::sort(shards[i].indices.begin(), shards[i].indices.end());
    }
    return shards;
}

std::vector<double> fedavg_aggregate(std::vector<RoundUpdate> updates) {
    if (updates.empty()) {
        throw std::invalid_argument("fedavg_aggregate: no updates");
    }
    std::sort(updates.begin(), updates.end(),
              [](const RoundUpdate &a, const RoundUpdate &b) { return a.client_id < b.client_id; });
    const std::size_t n = updates.front().params.size();
    std::uint64_t total = 0;
    for (const auto &u : updates) {
        if (u.params.size() != n) {
            throw std::invalid_argument("fedavg_aggregate: client " +
                                        std::to_string(u.client_id) + " sent " +
                                        std::to_string(u.params.size()) +
                                        " parameters, expected " + std::to_string(n));
        }
        if (u.n_samples == 0) {
            throw std::invalid_argument("fedavg_aggregate: client " +
                                        std::to_string(u.client_id) + " reported 0 samples");
        }
        total += u.n_samples;
    }
    // Accumulated as offsets from the first update, so identical updates
    // (and a single update) aggregate to themselves exactly.
    const auto &base = updates.front().params;
    std::vector<double> delta(n, 0.0);
    for (std::size_t k = 1; k < updates.size(); ++k) {
        const double w = static_cast<double>(updates[k].n_samples) / static_cast<double>(total);
        const auto &p = updates[k].params;
        for (std::size_t i = 0; i < n; ++i) {
            delta[i] += w * (p[i] - base[i]);
        }
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = base[i] + delta[i];
    }
    return out;
}

// ---------------------------------------------------------------- clients

FedClient::FedClient(const Dataset &data, Shard shard, const ModelSpec &spec,
                     const FedConfig &config, const LossConfig &loss_config)
    : view_{&data, shard.indices}, shard_(std::move(shard)), config_(config), loss_(loss_config),
      model_(build_model(spec, config.seed)), optimizer_(model_, config.train.adam) {
    if (shard_.indices.empty()) {
        throw std::invalid_argument("fed client " + std::to_string(shard_.client_id) +
                                    ": empty shard");
    }
}

RoundUpdate FedClient::local_update(std::span<const double> global_params) {
    model_.set_flat_parameters(global_params);
    RoundUpdate update;
    update.client_id = shard_.client_id;
    update.n_samples = view_.size();
    for (std::size_t e = 0; e < config_.local_epochs; ++e) {
        const auto r = train_epoch(model_, view_, optimizer_, loss_, config_.train,
                                   epoch_seed(config_.seed, shard_.client_id, epochs_done_++));
        update.local_metrics = r.metrics;
    }
    update.params = model_.flat_parameters();
    return update;
}

RoundUpdate local_update(std::span<const double> global_params, const Dataset &data,
                         const Shard &shard, const ModelSpec &spec, const FedConfig &config,
                         const LossConfig &loss_config) {
    FedClient client(data, shard, spec, config, loss_config);
    return client.local_update(global_params);
}

// ---------------------------------------------------------------- transports

InProcessTransport::InProcessTransport(std::vector<FedClient> &clients, std::size_t workers)
    : clients_(clients), workers_(std::max<std::size_t>(1, workers)) {}

std::vector<RoundUpdate> InProcessTransport::exchange(std::size_t round,
                                                      std::span<const double> global_params) {
    std::vector<RoundUpdate> updates(clients_.size());
    std::vector<std::exception_ptr> errors(clients_.size());
    auto run = [&](std::size_t c) {
        try {
            updates[c] = clients_[c].local_update(global_params);
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(workers_, clients_.size());
    if (workers <= 1) {
        for (std::size_t c = 0; c < clients_.size(); ++c) {
            run(c);
        }
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < workers; ++t) {
            threads.emplace_back([&, t] {
                for (std::size_t c = t; c < clients_.size(); c += workers) {
                    run(c);
                }
            });
        }
        for (auto &th : threads) {
            th.join();
        }
    }
    for (std::size_t c = 0; c < errors.size(); ++c) {
        if (errors[c]) {
            try {
                std::rethrow_exception(errors[c]);
            } catch (const std::exception &e) {
                throw std::runtime_error("client " + std::to_string(clients_[c].id()) +
                                         " failed in round " + std::to_string(round) + ": " +
                                         e.what());
            }
        }
    }
    return updates;
}

FedHistory serve_rounds(const FedConfig &config, const ModelSpec &spec, const DatasetView &test,
                        const LossConfig &loss_config, Transport &transport,
                        const RoundCallback &on_round) {
    config.validate();
    Model global_model = build_model(spec, config.seed);
    FedHistory history;
    std::vector<double> global = global_model.flat_parameters();
    for (std::size_t r = 0; r < config.n_rounds; ++r) {
        auto updates = transport.exchange(r, global);
        if (updates.size() != config.n_clients) {
            throw std::runtime_error("round " + std::to_string(r) + ": expected " +
                                     std::to_string(config.n_clients) + " updates, got " +
                                     std::to_string(updates.size()));
        }
        RoundRecord rec;
        rec.round = r;
        for (const auto &u : updates) {
            rec.clients.push_back({u.client_id, u.n_samples, u.local_metrics});
        }
        std::sort(rec.clients.begin(), rec.clients.end(),
                  [](const auto &a, const auto &b) { return a.client_id < b.client_id; });
        global = fedavg_aggregate(std::move(updates));
        global_model.set_flat_parameters(global);
        rec.global = evaluate(global_model, test, loss_config);
        if (on_round) {
            on_round(rec);
        }
        transport.publish_metrics(r, rec.global);
        history.rounds.push_back(std::move(rec));
    }
    transport.shutdown();
    history.final_params = std::move(global);
    return history;
}

std::string to_string(TransportKind kind) {
    return kind == TransportKind::tcp ? "tcp" : "inproc";
}

TransportKind transport_from_string(const std::string &name) {
    if (name == "inproc" || name == "in-process") {
        return TransportKind::in_process;
    }
    if (name == "tcp") {
        return TransportKind::tcp;
    }
    throw std::invalid_argument("unknown transport '" + name + "' (expected inproc or tcp)");
}

FedHistory run_rounds(const FedConfig &config, const ModelSpec &spec, const DatasetView &train,
                      const DatasetView &test, const LossConfig &loss_config,
                      TransportKind transport, const RoundCallback &on_round) {
    config.validate();
    auto shards = partition(train, config.n_clients, config.seed, config.samples_per_client);
    std::vector<FedClient> clients;
    clients.reserve(shards.size());
    for (auto &s : shards) {
        clients.emplace_back(*train.data, std::move(s), spec, config, loss_config);
    }
    if (transport == TransportKind::in_process) {
        InProcessTransport t(clients, config.train.deterministic ? 1 : config.workers);
        return serve_rounds(config, spec, test, loss_config, t, on_round);
    }

    Listener listener("127.0.0.1", 0);
    const std::uint16_t port = listener.port();
    std::vector<std::exception_ptr> client_errors(clients.size());
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < clients.size(); ++c) {
        threads.emplace_back([&, c] {
            try {
                run_tcp_client("127.0.0.1", port, clients[c]);
            } catch (...) {
                client_errors[c] = std::current_exception();
            }
        });
    }
    FedHistory history;
    std::exception_ptr server_error;
    try {
        TcpServerTransport server(listener, clients.size());
        history = serve_rounds(config, spec, test, loss_config, server, on_round);
    } catch (...) {
        server_error = std::current_exception();
    }
    listener.close();
    for (auto &th : threads) {
        th.join();
    }
    if (server_error) {
        std::rethrow_exception(server_error);
    }
    for (auto &e : client_errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return history;
}

} // namespace qfed
