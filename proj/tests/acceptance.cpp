// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "qfed/experiment.hpp"
#include "qfed/fed.hpp"
#include "qfed/gradcheck.hpp"
#include "qfed/model.hpp"
#include "qfed/statevector.hpp"
#include "qfed/synth.hpp"
#include "qfed/wire.hpp"

using namespace qfed;

namespace {

int failures = 0;

void report(const std::string &name, bool pass, const std::string &detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
    if (!pass) {
        ++failures;
    }
}

template <class F>
void criterion(const std::string &name, F &&body) {
    try {
        body();
    } catch (const std::exception &e) {
        report(name, false, std::string("exception: ") + e.what());
    }
}

std::string fmt(const char *format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t workers() {
    return resolve_workers(std::max(1U, std::thread::hardware_concurrency()));
}

Dataset surrogate(std::size_t per_grade, std::uint64_t seed) {
    SynthConfig sc;
    sc.per_grade = per_grade;
    sc.seed = seed;
    return to_dataset(gen_dataset(sc, workers()));
}

TrainConfig train_config() {
    TrainConfig t;
    t.deterministic = true;
    return t;
}

const AggregateRow &find_aggregate(const ResultTable &t, Variant v, double value) {
    for (const auto &a : t.aggregates) {
        if (a.variant == to_string(v) && a.sweep_value == value) {
            return a;
        }
    }
    throw std::runtime_error("missing aggregate row");
}

void gradient_suite() {
    criterion("gradient-suite", [] {
        const auto r = gradcheck(ModelSpec::micro(), 0);
        report("gradient-suite", r.max_rel_error < 1e-4 && r.seconds < 120.0,
               fmt("max relative error %.3g over %zu entries (worst %s), %.2f s", r.max_rel_error,
                   r.n_checked, r.worst_entry.c_str(), r.seconds));
    });
}

void quantum_oracle() {
    criterion("quantum-oracle", [] {
        std::mt19937_64 rng(2024);
        double worst = 0.0;
        for (int i = 0; i < 500; ++i) {
            const std::size_t n = 1 + rng() % 3;
            const auto spec = oracle::random_circuit(n, 1 + rng() % 40, rng);
            const auto params = oracle::random_angles(spec.n_parameter_slots, rng);
            const auto features = oracle::random_angles(spec.n_feature_slots, rng);
            const auto sv = simulate(spec, params, features);
            const auto dense = oracle::dense_simulate(spec, params, features);
            for (std::size_t k = 0; k < dense.size(); ++k) {
                worst = std::max(worst, std::abs(sv.amplitudes()[k] - dense[k]));
            }
        }

        StateVector s(5);
        std::uniform_real_distribution<double> angle(-M_PI, M_PI);
        for (int g = 0; g < 10000; ++g) {
            const std::size_t q = rng() % 5;
            switch (rng() % 4) {
            case 0: s.rx(q, angle(rng)); break;
            case 1: s.ry(q, angle(rng)); break;
            case 2: s.rz(q, angle(rng)); break;
            default: s.cnot(q, (q + 1 + rng() % 4) % 5); break;
            }
        }
        const double drift = std::abs(s.norm_squared() - 1.0);
        report("quantum-oracle", worst < 1e-10 && drift < 1e-9,
               fmt("max amplitude deviation %.3g over 500 circuits, norm drift %.3g after 1e4 gates",
                   worst, drift));
    });
}

void fedavg_degeneracy(const Dataset &small) {
    criterion("fedavg-degeneracy", [&] {
        ModelSpec spec;
        FedConfig c;
        c.n_clients = 1;
        c.n_rounds = 15;
        c.seed = 7;
        c.train = train_config();
        const auto [train, test] = holdout_views(small, 40, 0, 7);
        const auto fed = run_rounds(c, spec, train, test, {2.0});
        const auto cen = fit(spec, train, test, {2.0}, c.train, 15, 7);
        const auto pc = cen.model.flat_parameters();
        double worst = fed.final_params.size() == pc.size() ? 0.0 : INFINITY;
        for (std::size_t i = 0; i < pc.size() && i < fed.final_params.size(); ++i) {
            worst = std::max(worst, std::abs(fed.final_params[i] - pc[i]));
        }
        report("fedavg-degeneracy", worst < 1e-12,
               fmt("K=1 x 15 rounds vs 15 epochs: max parameter difference %.3g over %zu", worst,
                   pc.size()));
    });
}

Message random_message(std::mt19937_64 &rng) {
    auto metrics = [&] {
        Metrics m;
        for (auto &row : m.confusion) {
            for (auto &cell : row) {
                cell = rng();
            }
        }
        m.mean_loss = std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
        return m;
    };
    auto params = [&] {
        std::vector<double> p(rng() % 300);
        std::normal_distribution<double> d(0.0, 10.0);
        for (auto &x : p) {
            x = d(rng);
        }
        return p;
    };
    switch (rng() % 5) {
    case 0: return JoinMsg{static_cast<std::uint32_t>(rng())};
    case 1: return GlobalModelMsg{static_cast<std::uint32_t>(rng()), params()};
    case 2: {
        LocalUpdateMsg m;
        m.update.client_id = static_cast<std::uint32_t>(rng());
        m.update.n_samples = rng();
        m.update.local_metrics = metrics();
        m.update.params = params();
        return m;
    }
    case 3: return MetricsMsg{static_cast<std::uint32_t>(rng()), metrics()};
    default: return ShutdownMsg{};
    }
}

void codec_roundtrip() {
    criterion("codec-roundtrip", [] {
        std::mt19937_64 rng(99);
        int mismatches = 0;
        for (int i = 0; i < 10000; ++i) {
            const Message m = random_message(rng);
            if (!(decode_message(encode_message(m)) == m)) {
                ++mismatches;
            }
        }
        report("codec-roundtrip", mismatches == 0,
               fmt("%d mismatches over 10000 random messages", mismatches));
    });
}

void transport_equivalence(const Dataset &small) {
    criterion("transport-equivalence", [&] {
        ModelSpec spec;
        FedConfig c;
        c.n_clients = 4;
        c.n_rounds = 3;
        c.seed = 5;
        c.train = train_config();
        const auto [train, test] = holdout_views(small, 40, 0, 5);
        const auto a = run_rounds(c, spec, train, test, {2.0}, TransportKind::in_process);
        const auto b = run_rounds(c, spec, train, test, {2.0}, TransportKind::tcp);
        const bool same = a.final_params == b.final_params && a.rounds == b.rounds;
        report("transport-equivalence", same,
               fmt("K=4 x 3 rounds: histories %s, final accuracy %.4f vs %.4f",
                   same ? "identical" : "differ", a.rounds.back().global.accuracy(),
                   b.rounds.back().global.accuracy()));
    });
}

void surrogate_end_to_end(const Dataset &full) {
    criterion("surrogate-end-to-end", [&] {
        ExperimentSpec s;
        s.kind = ExperimentKind::lambda_sweep;
        s.variants = {Variant::hybrid, Variant::classical};
        s.values = {2.0};
        s.folds = 5;
        s.epochs = 30;
        s.train = train_config();
        s.workers = workers();
        const auto t0 = std::chrono::steady_clock::now();
        const auto table = run_experiment(s, full);
        const double wall = seconds_since(t0);
        const auto &h = find_aggregate(table, Variant::hybrid, 2.0);
        const auto &c = find_aggregate(table, Variant::classical, 2.0);
        const double hybrid_seconds = h.seconds_mean * static_cast<double>(h.n);
        report("surrogate-end-to-end",
               h.accuracy_mean >= 0.90 && h.fn_rate_mean < 0.05 && hybrid_seconds <= 1800.0,
               fmt("hybrid 5-fold accuracy %.4f+/-%.4f, fn_rate %.4f+/-%.4f, %.0f s; "
                   "classical baseline accuracy %.4f+/-%.4f, fn_rate %.4f, %.0f s; wall %.0f s",
                   h.accuracy_mean, h.accuracy_std, h.fn_rate_mean, h.fn_rate_std, hybrid_seconds,
                   c.accuracy_mean, c.accuracy_std, c.fn_rate_mean,
                   c.seconds_mean * static_cast<double>(c.n), wall));
    });
}

void lambda_trend() {
    criterion("lambda-trend", [] {
        const Dataset data = surrogate(250, 31);
        ExperimentSpec s;
        s.kind = ExperimentKind::single_train;
        s.values = {1.0, 10.0};
        s.seeds = {0, 1, 2, 3, 4};
        s.epochs = 15;
        s.test_size = 200;
        s.train = train_config();
        s.workers = workers();
        const auto table = run_experiment(s, data);
        std::vector<double> fn1, fn10;
        for (const auto &r : table.rows) {
            (r.sweep_value == 1.0 ? fn1 : fn10).push_back(r.fn_rate);
        }
        const double m1 = median(fn1), m10 = median(fn10);
        report("lambda-trend", fn1.size() == 5 && fn10.size() == 5 && m10 <= m1,
               fmt("median fn_rate over 5 seeds: lambda=1 %.4f, lambda=10 %.4f", m1, m10));
    });
}

ExperimentSpec fed_sweep(ExperimentKind kind, std::vector<double> values) {
    ExperimentSpec s;
    s.kind = kind;
    s.values = std::move(values);
    s.total_samples = 4000;
    s.test_size = 400;
    s.train = train_config();
    s.train.batch_size = 16;
    s.train.adam.lr = 2e-3;
    s.fed.n_clients = 4;
    s.fed.n_rounds = 15;
    s.workers = workers();
    return s;
}

double accuracy_of(const ResultTable &t, double value) {
    for (const auto &r : t.rows) {
        if (r.sweep_value == value) {
            return r.accuracy;
        }
    }
    throw std::runtime_error("missing result row");
}

void federated_sweeps(const Dataset &full) {
    criterion("fed-client-count", [&] {
        const auto t = run_experiment(fed_sweep(ExperimentKind::client_count_sweep, {4, 32}), full);
        const double a4 = accuracy_of(t, 4), a32 = accuracy_of(t, 32);
        report("fed-client-count", std::abs(a32 - a4) <= 0.05,
               fmt("4000 samples, 15 rounds: 4 clients %.4f, 32 clients %.4f", a4, a32));
    });
    criterion("fed-samples-per-client", [&] {
        const auto t =
            run_experiment(fed_sweep(ExperimentKind::samples_per_client_sweep, {50, 250}), full);
        const double a50 = accuracy_of(t, 50), a250 = accuracy_of(t, 250);
        report("fed-samples-per-client", a50 < a250,
               fmt("4 clients, 15 rounds: 50/client %.4f, 250/client %.4f", a50, a250));
    });
}

void partition_laws() {
    criterion("partition-laws", [] {
        std::mt19937_64 rng(77);
        int cases = 0, violations = 0;
        for (int trial = 0; trial < 500; ++trial) {
            const std::size_t per_class = 1 + rng() % 600;
            const std::size_t k = 1 + rng() % std::min<std::size_t>(64, per_class);
            Dataset d;
            for (std::size_t i = 0; i < 2 * per_class; ++i) {
                d.inputs.emplace_back(Shape{1}, std::vector<double>{0.0});
                d.labels.push_back(static_cast<int>(i % 2));
            }
            std::shuffle(d.labels.begin(), d.labels.end(), rng);
            const std::size_t max_size = 2 * per_class / k;
            const std::size_t size = rng() % 2 == 0 ? 0 : 1 + rng() % max_size;
            const auto shards = partition(DatasetView::all(d), k, rng(), size);
            ++cases;
            const std::size_t expect = size == 0 ? max_size : size;
            std::set<std::size_t> seen;
            std::size_t union_size = 0;
            std::int64_t surplus = 0;
            bool ok = shards.size() == k;
            for (std::size_t c = 0; c < shards.size(); ++c) {
                const auto &idx = shards[c].indices;
                ok = ok && shards[c].client_id == c && idx.size() == expect;
                std::int64_t zeros = 0;
                for (auto i : idx) {
                    seen.insert(i);
                    zeros += d.labels[i] == 0 ? 1 : 0;
                }
                union_size += idx.size();
                const std::int64_t ones = static_cast<std::int64_t>(idx.size()) - zeros;
                ok = ok && std::abs(zeros - ones) == static_cast<std::int64_t>(idx.size() % 2);
                surplus += zeros - ones;
            }
            ok = ok && seen.size() == union_size && std::abs(surplus) <= 1;
            violations += ok ? 0 : 1;
        }
        report("partition-laws", violations == 0,
               fmt("%d violations over %d (N, K) cases", violations, cases));
    });
}

} // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    std::cout << "workers: " << workers() << std::endl;

    gradient_suite();
    quantum_oracle();
    partition_laws();
    codec_roundtrip();
    {
        const Dataset small = surrogate(30, 3);
        fedavg_degeneracy(small);
        transport_equivalence(small);
    }
    lambda_trend();
    {
        const Dataset full = surrogate(1100, 0);
        federated_sweeps(full);
        surrogate_end_to_end(full);
    }

    std::cout << fmt("%d criteria failed, total %.0f s", failures, seconds_since(t0)) << std::endl;
    return failures == 0 ? 0 : 1;
}
