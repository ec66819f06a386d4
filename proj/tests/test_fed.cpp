#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <thread>

#include "qfed/fed.hpp"
#include "qfed/net.hpp"

using namespace qfed;

namespace {

/// `n` two-feature samples with alternating labels; class 1 shifted by +sep.
Dataset toy(std::size_t n, std::uint64_t seed, double sep = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        d.inputs.push_back(Tensor::vector({g(rng) + y * sep, g(rng) - y * sep}));
        d.labels.push_back(y);
    }
    return d;
}

Dataset labelled(std::size_t n0, std::size_t n1) {
    Dataset d;
    for (std::size_t i = 0; i < n0 + n1; ++i) {
        d.inputs.push_back(Tensor::vector({static_cast<double>(i)}));
        d.labels.push_back(i < n0 ? 0 : 1);
    }
    return d;
}

void check_partition_laws(const Dataset &d, const std::vector<Shard> &shards) {
    REQUIRE_FALSE(shards.empty());
    const std::size_t size = shards[0].indices.size();
    std::set<std::size_t> seen;
    std::size_t total0 = 0, total1 = 0;
    for (std::size_t k = 0; k < shards.size(); ++k) {
        const auto &s = shards[k];
        CHECK(s.client_id == k);
        CHECK(s.indices.size() == size);
        CHECK(std::is_sorted(s.indices.begin(), s.indices.end()));
        std::size_t c0 = 0, c1 = 0;
        for (auto i : s.indices) {
            CHECK(seen.insert(i).second);
            (d.labels[i] == 0 ? c0 : c1) += 1;
        }
        if (size % 2 == 0) {
            CHECK(c0 == c1);
        } else {
            CHECK(c0 == (k % 2 == 0 ? c1 + 1 : c1 - 1));
        }
        total0 += c0;
        total1 += c1;
    }
    if (shards.size() % 2 == 0 || size % 2 == 0) {
        CHECK(total0 == total1);
    }
}

RoundUpdate update(std::uint32_t id, std::vector<double> p, std::uint64_t n) {
    RoundUpdate u;
    u.client_id = id;
    u.params = std::move(p);
    u.n_samples = n;
    return u;
}

FedConfig small_fed(std::size_t clients, std::size_t rounds, std::uint64_t seed) {
    FedConfig c;
    c.n_clients = clients;
    c.n_rounds = rounds;
    c.seed = seed;
    c.train.batch_size = 16;
    c.train.adam.lr = 0.01;
    return c;
}

} // namespace

TEST_CASE("partition examples") {
    const Dataset d = labelled(2000, 2000);
    const auto view = DatasetView::all(d);
    const auto four = partition(view, 4, 1);
    REQUIRE(four.size() == 4);
    for (const auto &s : four) {
        CHECK(s.indices.size() == 1000);
    }
    check_partition_laws(d, four);

    const auto many = partition(view, 32, 1);
    REQUIRE(many.size() == 32);
    for (const auto &s : many) {
        CHECK(s.indices.size() == 125);
    }
    check_partition_laws(d, many);

    const auto one = partition(view, 1, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].indices == view.indices);
}

TEST_CASE("property: partition laws over many (N, K)") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t per_class = 1 + rng() % 300;
        const std::size_t k = 1 + rng() % 40;
        if (2 * per_class < k) {
            continue;
        }
        const Dataset d = labelled(per_class, per_class + rng() % 5);
        const auto shards = partition(DatasetView::all(d), k, trial);
        check_partition_laws(d, shards);
        const std::size_t spc = std::max<std::size_t>(1, shards[0].indices.size() / 2);
        check_partition_laws(d, partition(DatasetView::all(d), k, trial, spc));
    }
}

TEST_CASE("partition over a sub-view maps back to parent indices") {
    const Dataset d = labelled(100, 100);
    DatasetView v{&d, {}};
    for (std::size_t i = 0; i < 200; i += 2) {
        v.indices.push_back(i < 100 ? i : i + 1);
    }
    for (const auto &s : partition(v, 5, 2)) {
        for (auto i : s.indices) {
            CHECK(std::find(v.indices.begin(), v.indices.end(), i) != v.indices.end());
        }
    }
}

TEST_CASE("partition reports the per-class deficit") {
    const Dataset d = labelled(100, 100);
    try {
        (void)partition(DatasetView::all(d), 4, 0, 60);
        FAIL("expected a deficit error");
    } catch (const std::invalid_argument &e) {
        const std::string msg = e.what();
        CHECK(msg.find("deficit 20") != std::string::npos);
    }
    CHECK_THROWS(partition(DatasetView::all(labelled(3, 0)), 2, 0));
    CHECK_THROWS(partition(DatasetView::all(d), 0, 0));
}

TEST_CASE("aggregation examples") {
    CHECK(fedavg_aggregate({update(0, {1, 3}, 1), update(1, {3, 5}, 1)}) ==
          std::vector<double>{2, 4});
    CHECK(fedavg_aggregate({update(0, {0, 0}, 1), update(1, {3, 3}, 2)}) ==
          std::vector<double>{2, 2});
    CHECK(fedavg_aggregate({update(4, {0.1, -7.25, 1e300}, 13)}) ==
          std::vector<double>{0.1, -7.25, 1e300});
    CHECK_THROWS(fedavg_aggregate({update(0, {1, 2}, 1), update(1, {1}, 1)}));
    CHECK_THROWS(fedavg_aggregate({}));
    CHECK_THROWS(fedavg_aggregate({update(0, {1}, 0)}));
}

TEST_CASE("property: identical updates aggregate exactly; order does not matter") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 50, k = 1 + rng() % 32;
        std::vector<double> p(n);
        for (auto &x : p) {
            x = g(rng);
        }
        std::vector<RoundUpdate> same, mixed;
        for (std::size_t c = 0; c < k; ++c) {
            same.push_back(update(static_cast<std::uint32_t>(c), p, 1 + rng() % 100));
            std::vector<double> q(n);
            for (auto &x : q) {
                x = g(rng);
            }
            mixed.push_back(update(static_cast<std::uint32_t>(c), q, 1 + rng() % 100));
        }
        CHECK(fedavg_aggregate(same) == p);
        auto shuffled = mixed;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(fedavg_aggregate(shuffled) == fedavg_aggregate(mixed));

        std::vector<double> naive(n, 0.0);
        double total = 0.0;
        for (const auto &u : mixed) {
            total += static_cast<double>(u.n_samples);
        }
        for (const auto &u : mixed) {
            for (std::size_t i = 0; i < n; ++i) {
                naive[i] += static_cast<double>(u.n_samples) / total * u.params[i];
            }
        }
        const auto agg = fedavg_aggregate(mixed);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(agg[i] - naive[i]) < 1e-9);
        }
    }
}

TEST_CASE("fed config validation") {
    FedConfig c;
    c.local_epochs = 0;
    CHECK_THROWS(c.validate());
    c.allow_zero_local_epochs = true;
    CHECK_NOTHROW(c.validate());
    FedConfig r;
    r.n_rounds = 0;
    CHECK_THROWS(r.validate());
}

TEST_CASE("local update with zero epochs returns the global parameters") {
    const Dataset d = toy(40, 1);
    FedConfig c = small_fed(2, 1, 3);
    c.local_epochs = 0;
    c.allow_zero_local_epochs = true;
    const auto spec = ModelSpec::external(2, Variant::hybrid);
    const auto global = build_model(spec, 99).flat_parameters();
    const auto shards = partition(DatasetView::all(d), 2, 0);
    const auto u = local_update(global, d, shards[1], spec, c, {});
    CHECK(u.params == global);
    CHECK(u.n_samples == 20);
    CHECK(u.client_id == 1);
}

TEST_CASE("identical shards and seeds give identical updates") {
    const Dataset d = toy(60, 2);
    const FedConfig c = small_fed(1, 1, 5);
    const auto spec = ModelSpec::external(2, Variant::hybrid);
    const auto global = build_model(spec, 5).flat_parameters();
    const Shard s{0, partition(DatasetView::all(d), 1, 0)[0].indices};
    const auto a = local_update(global, d, s, spec, c, {2.0});
    const auto b = local_update(global, d, s, spec, c, {2.0});
    CHECK(a == b);
    CHECK(a.params != global);
}

TEST_CASE("empty shards are rejected") {
    const Dataset d = toy(10, 1);
    CHECK_THROWS(FedClient(d, Shard{0, {}}, ModelSpec::external(2, Variant::classical),
                           small_fed(1, 1, 0), {}));
}

TEST_CASE("K=1 federation equals centralized training") {
    const Dataset train = toy(96, 3), test = toy(40, 4);
    for (auto v : {Variant::classical, Variant::hybrid}) {
        const auto spec = ModelSpec::external(2, v);
        const FedConfig c = small_fed(1, 6, 11);
        const auto fed = run_rounds(c, spec, DatasetView::all(train), DatasetView::all(test), {2.0});
        const auto cen = fit(spec, DatasetView::all(train), DatasetView::all(test), {2.0}, c.train,
                             6, 11);
        const auto pc = cen.model.flat_parameters();
        REQUIRE(fed.final_params.size() == pc.size());
        double worst = 0.0;
        for (std::size_t i = 0; i < pc.size(); ++i) {
            worst = std::max(worst, std::abs(fed.final_params[i] - pc[i]));
        }
        CHECK(worst < 1e-12);
        REQUIRE(fed.rounds.size() == 6);
        for (std::size_t r = 0; r < 6; ++r) {
            CHECK(fed.rounds[r].global == cen.epochs[r].test);
            CHECK(fed.rounds[r].clients[0].local == cen.epochs[r].train.metrics);
        }
    }
}

TEST_CASE("zero local epochs keep the global model fixed across rounds") {
    const Dataset train = toy(40, 5), test = toy(20, 6);
    FedConfig c = small_fed(4, 3, 1);
    c.local_epochs = 0;
    c.allow_zero_local_epochs = true;
    const auto spec = ModelSpec::external(2, Variant::classical);
    const auto h = run_rounds(c, spec, DatasetView::all(train), DatasetView::all(test), {});
    CHECK(h.final_params == build_model(spec, 1).flat_parameters());
    CHECK(h.rounds[0].global == h.rounds[2].global);
}

TEST_CASE("history has one record per round with per-client logs") {
    const Dataset train = toy(80, 7), test = toy(20, 8);
    std::size_t calls = 0;
    const auto h = run_rounds(small_fed(4, 3, 2), ModelSpec::external(2, Variant::classical),
                              DatasetView::all(train), DatasetView::all(test), {},
                              TransportKind::in_process, [&](const RoundRecord &) { ++calls; });
    CHECK(calls == 3);
    REQUIRE(h.rounds.size() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(h.rounds[r].round == r);
        CHECK(h.rounds[r].global.total() == 20);
        REQUIRE(h.rounds[r].clients.size() == 4);
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(h.rounds[r].clients[c].client_id == c);
            CHECK(h.rounds[r].clients[c].n_samples == 20);
            CHECK(h.rounds[r].clients[c].local.total() == 20);
        }
    }
}

TEST_CASE("concurrent in-process clients give the same history") {
    const Dataset train = toy(80, 9), test = toy(20, 10);
    FedConfig serial = small_fed(4, 2, 3), parallel = serial;
    parallel.train.deterministic = false;
    parallel.workers = 4;
    const auto spec = ModelSpec::external(2, Variant::hybrid);
    const auto a = run_rounds(serial, spec, DatasetView::all(train), DatasetView::all(test), {});
    const auto b = run_rounds(parallel, spec, DatasetView::all(train), DatasetView::all(test), {});
    CHECK(a.final_params == b.final_params);
}

TEST_CASE("in-process and TCP transports produce identical histories") {
    const Dataset train = toy(64, 11), test = toy(20, 12);
    for (std::size_t k : {1UL, 4UL}) {
        const FedConfig c = small_fed(k, 3, 13);
        const auto spec = ModelSpec::external(2, Variant::hybrid);
        const auto a = run_rounds(c, spec, DatasetView::all(train), DatasetView::all(test), {2.0},
                                  TransportKind::in_process);
        const auto b = run_rounds(c, spec, DatasetView::all(train), DatasetView::all(test), {2.0},
                                  TransportKind::tcp);
        CHECK(a.final_params == b.final_params);
        CHECK(a.rounds == b.rounds);
    }
}

TEST_CASE("a client dropping out aborts the round with a diagnostic") {
    Listener listener("127.0.0.1", 0);
    const auto port = listener.port();
    std::thread quitter([port] {
        Socket s = connect_to("127.0.0.1", port);
        send_message(s, JoinMsg{0});
        (void)recv_message(s); // the first global model, then hang up
    });
    TcpServerTransport server(listener, 1);
    try {
        (void)server.exchange(0, std::vector<double>{1.0, 2.0});
        FAIL("expected the exchange to fail");
    } catch (const std::runtime_error &e) {
        CHECK(std::string(e.what()).find("client 0 failed in round 0") != std::string::npos);
    }
    quitter.join();
}

TEST_CASE("duplicate JOIN ids are rejected") {
    Listener listener("127.0.0.1", 0);
    const auto port = listener.port();
    std::vector<std::thread> joiners;
    for (int i = 0; i < 2; ++i) {
        joiners.emplace_back([port] {
            try {
                Socket s = connect_to("127.0.0.1", port);
                send_message(s, JoinMsg{0});
                (void)recv_message(s);
            } catch (...) {
            }
        });
    }
    CHECK_THROWS_WITH_AS(TcpServerTransport(listener, 2), doctest::Contains("duplicate"),
                         std::runtime_error);
    listener.close();
    for (auto &t : joiners) {
        t.join();
    }
}

TEST_CASE("transport names") {
    CHECK(transport_from_string("tcp") == TransportKind::tcp);
    CHECK(transport_from_string(to_string(TransportKind::in_process)) == TransportKind::in_process);
    CHECK_THROWS(transport_from_string("udp"));
}
