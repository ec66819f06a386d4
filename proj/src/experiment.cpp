#include "qfed/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "qfed/gradcheck.hpp"
#include "qfed/io.hpp"
#include "qfed/synth.hpp"

namespace qfed {

namespace {

const std::vector<std::pair<ExperimentKind, std::string>> &kind_names() {
    static const std::vector<std::pair<ExperimentKind, std::string>> names{
        {ExperimentKind::lambda_sweep, "lambda-sweep"},
        {ExperimentKind::dataset_size_sweep, "dataset-size-sweep"},
        {ExperimentKind::client_count_sweep, "client-count-sweep"},
        {ExperimentKind::samples_per_client_sweep, "samples-per-client-sweep"},
        {ExperimentKind::single_train, "single-train"},
        {ExperimentKind::fed_run, "fed-run"},
        {ExperimentKind::gradcheck, "gradcheck"},
    };
    return names;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_pm(double mean, double sd) { return fmt(mean) + "+/-" + fmt(sd); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<int> labels_of(const Dataset &d, const std::vector<std::size_t> &idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        out.push_back(d.labels[i]);
    }
    return out;
}

std::size_t to_count(double v, const char *what) {
    if (!(v >= 1.0) || std::floor(v) != v) {
        throw std::invalid_argument(std::string("experiment: ") + what +
                                    " must be a positive integer, got " + fmt(v));
    }
    return static_cast<std::size_t>(v);
}

struct Job {
    std::function<ResultRow()> run;
};

} // namespace

std::size_t default_test_size(std::size_t n_samples) { return (n_samples / 5) & ~std::size_t{1}; }

std::pair<DatasetView, DatasetView> holdout_views(const Dataset &data, std::size_t test_count,
                                                  std::size_t train_count, std::uint64_t seed) {
    const Split s = holdout_split(data.labels, test_count, derive_seed(seed, 0x401D));
    DatasetView train{&data, s.train};
    if (train_count != 0) {
        const auto pick = balanced_subset(labels_of(data, s.train), train_count,
                                          derive_seed(seed, 0x5B5E));
        train.indices.clear();
        for (auto p : pick) {
            train.indices.push_back(s.train[p]);
        }
    }
    return {train, DatasetView{&data, s.test}};
}

std::string to_string(ExperimentKind kind) {
    for (const auto &[k, name] : kind_names()) {
        if (k == kind) {
            return name;
        }
    }
    return "unknown";
}

ExperimentKind experiment_kind_from_string(const std::string &name) {
    std::string known;
    for (const auto &[k, n] : kind_names()) {
        if (n == name) {
            return k;
        }
        known += (known.empty() ? "" : ", ") + n;
    }
    throw std::invalid_argument("unknown experiment kind '" + name + "' (expected one of " +
                                known + ")");
}

void ExperimentSpec::validate() const {
    if (kind != ExperimentKind::gradcheck && values.empty()) {
        throw std::invalid_argument("experiment: sweep values must not be empty");
    }
    if (seeds.empty()) {
        throw std::invalid_argument("experiment: seeds must not be empty");
    }
    if (variants.empty()) {
        throw std::invalid_argument("experiment: at least one model variant is required");
    }
    if (kind == ExperimentKind::lambda_sweep && folds < 2) {
        throw std::invalid_argument("experiment: lambda-sweep needs at least 2 folds");
    }
    if (epochs == 0 && kind != ExperimentKind::gradcheck) {
        throw std::invalid_argument("experiment: epochs must be positive");
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("experiment: sweep values must be finite");
        }
    }
}

void to_json(nlohmann::json &j, const ExperimentSpec &spec) {
    std::vector<std::string> variants;
    for (auto v : spec.variants) {
        variants.push_back(to_string(v));
    }
    j = nlohmann::json{
        {"kind", to_string(spec.kind)},
        {"variants", variants},
        {"values", spec.values},
        {"seeds", spec.seeds},
        {"folds", spec.folds},
        {"epochs", spec.epochs},
        {"lambda", spec.lambda},
        {"test_size", spec.test_size},
        {"total_samples", spec.total_samples},
        {"model", spec.model},
        {"train",
         {{"batch_size", spec.train.batch_size},
          {"lr", spec.train.adam.lr},
          {"beta1", spec.train.adam.beta1},
          {"beta2", spec.train.adam.beta2},
          {"eps", spec.train.adam.eps},
          {"deterministic", spec.train.deterministic},
          {"workers", spec.train.workers}}},
        {"fed",
         {{"clients", spec.fed.n_clients},
          {"rounds", spec.fed.n_rounds},
          {"local_epochs", spec.fed.local_epochs},
          {"samples_per_client", spec.fed.samples_per_client}}},
        {"workers", spec.workers},
    };
}

std::vector<AggregateRow> aggregate(const std::vector<ResultRow> &rows) {
    std::vector<AggregateRow> out;
    std::map<std::pair<std::string, double>, std::size_t> slot;
    std::vector<std::vector<const ResultRow *>> groups;
    for (const auto &r : rows) {
        const auto key = std::make_pair(r.variant, r.sweep_value);
        auto it = slot.find(key);
        if (it == slot.end()) {
            it = slot.emplace(key, groups.size()).first;
            groups.emplace_back();
        }
        groups[it->second].push_back(&r);
    }
    for (const auto &g : groups) {
        AggregateRow a;
        a.experiment = g.front()->experiment;
        a.variant = g.front()->variant;
        a.sweep_value = g.front()->sweep_value;
        a.params = g.front()->params;
        a.n = g.size();
        auto stats = [&](double ResultRow::*field, double &mean, double &sd) {
            double s = 0.0;
            for (const auto *r : g) {
                s += r->*field;
            }
            mean = s / static_cast<double>(g.size());
            double ss = 0.0;
            for (const auto *r : g) {
                ss += (r->*field - mean) * (r->*field - mean);
            }
            sd = g.size() > 1 ? std::sqrt(ss / static_cast<double>(g.size() - 1)) : 0.0;
        };
        stats(&ResultRow::accuracy, a.accuracy_mean, a.accuracy_std);
        stats(&ResultRow::fn_rate, a.fn_rate_mean, a.fn_rate_std);
        stats(&ResultRow::loss, a.loss_mean, a.loss_std);
        stats(&ResultRow::seconds, a.seconds_mean, a.seconds_std);
        out.push_back(a);
    }
    return out;
}

std::string ResultTable::to_csv() const {
    std::ostringstream out;
    out << "experiment,variant,sweep_value,fold,seed,accuracy,fn_rate,loss,params,seconds\n";
    for (const auto &r : rows) {
        out << r.experiment << ',' << r.variant << ',' << fmt(r.sweep_value) << ',' << r.fold
            << ',' << r.seed << ',' << fmt(r.accuracy) << ',' << fmt(r.fn_rate) << ','
            << fmt(r.loss) << ',' << r.params << ',' << fmt(r.seconds) << '\n';
    }
    for (const auto &a : aggregates) {
        out << a.experiment << ',' << a.variant << ',' << fmt(a.sweep_value) << ",agg,*,"
            << fmt_pm(a.accuracy_mean, a.accuracy_std) << ','
            << fmt_pm(a.fn_rate_mean, a.fn_rate_std) << ',' << fmt_pm(a.loss_mean, a.loss_std)
            << ',' << a.params << ',' << fmt_pm(a.seconds_mean, a.seconds_std) << '\n';
    }
    return out.str();
}

std::size_t resolve_workers(std::size_t configured) {
    if (const char *env = std::getenv("QFED_WORKERS"); env != nullptr && *env != '\0') {
        char *end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0' || v == 0) {
            throw std::invalid_argument(std::string("QFED_WORKERS must be a positive integer, got '") +
                                        env + "'");
        }
        return v;
    }
    return std::max<std::size_t>(1, configured);
}

ResultTable run_experiment(const ExperimentSpec &spec, const Dataset &data,
                           const ProgressCallback &on_row) {
    spec.validate();
    if (spec.kind != ExperimentKind::gradcheck) {
        data.validate();
    }
    const std::string name = to_string(spec.kind);
    const LossConfig base_loss{spec.lambda};
    const std::size_t test_count =
        spec.test_size != 0 ? spec.test_size : default_test_size(data.size());
    std::vector<Job> jobs;

    auto model_for = [&](Variant v) {
        ModelSpec m = spec.model;
        m.variant = v;
        return m;
    };
    auto finish = [](ResultRow r, const Metrics &m, std::size_t params,
                     std::chrono::steady_clock::time_point t0) {
        r.accuracy = m.accuracy();
        r.fn_rate = m.fn_rate();
        r.loss = m.mean_loss;
        r.params = params;
        r.seconds = seconds_since(t0);
        return r;
    };

    const std::vector<double> values =
        spec.kind == ExperimentKind::gradcheck && spec.values.empty() ? std::vector<double>{0.0}
                                                                      : spec.values;
    for (Variant variant : spec.variants) {
        const ModelSpec mspec = model_for(variant);
        const std::size_t n_params = count_parameters(build_model(mspec, 0));
        for (double value : values) {
            for (std::uint64_t seed : spec.seeds) {
                ResultRow proto{name, to_string(variant), value, "holdout", seed};
                switch (spec.kind) {
                case ExperimentKind::lambda_sweep: {
                    const auto folds = kfold_splits(data.labels, spec.folds, seed);
                    for (std::size_t f = 0; f < folds.size(); ++f) {
                        proto.fold = std::to_string(f);
                        jobs.push_back({[=, &data, &spec] {
                            const auto t0 = std::chrono::steady_clock::now();
                            const auto fr =
                                fit(mspec, DatasetView{&data, folds[f].train},
                                    DatasetView{&data, folds[f].test}, LossConfig{value},
                                    spec.train, spec.epochs, derive_seed(seed, f));
                            return finish(proto, fr.epochs.back().test, n_params, t0);
                        }});
                    }
                    break;
                }
                case ExperimentKind::dataset_size_sweep:
                case ExperimentKind::single_train: {
                    const bool sized = spec.kind == ExperimentKind::dataset_size_sweep;
                    const std::size_t train_count = sized ? to_count(value, "training size") : 0;
                    const LossConfig lc = sized ? base_loss : LossConfig{value};
                    jobs.push_back({[=, &data, &spec] {
                        const auto t0 = std::chrono::steady_clock::now();
                        const auto [train, test] = holdout_views(data, test_count, train_count, seed);
                        const auto fr = fit(mspec, train, test, lc, spec.train, spec.epochs, seed);
                        return finish(proto, fr.epochs.back().test, n_params, t0);
                    }});
                    break;
                }
                case ExperimentKind::client_count_sweep:
                case ExperimentKind::samples_per_client_sweep:
                case ExperimentKind::fed_run: {
                    FedConfig fc = spec.fed;
                    fc.seed = seed;
                    fc.train = spec.train;
                    std::size_t train_count = 0;
                    if (spec.kind == ExperimentKind::samples_per_client_sweep) {
                        fc.samples_per_client = to_count(value, "samples per client");
                        train_count = spec.total_samples;
                    } else {
                        fc.n_clients = to_count(value, "client count");
                        if (spec.kind == ExperimentKind::client_count_sweep) {
                            train_count = spec.total_samples;
                        }
                    }
                    jobs.push_back({[=, &data, &spec] {
                        const auto t0 = std::chrono::steady_clock::now();
                        const auto [train, test] = holdout_views(data, test_count, train_count, seed);
                        const auto h = run_rounds(fc, mspec, train, test, base_loss);
                        return finish(proto, h.rounds.back().global, n_params, t0);
                    }});
                    break;
                }
                case ExperimentKind::gradcheck: {
                    ModelSpec micro = ModelSpec::micro();
                    micro.variant = variant;
                    jobs.push_back({[=] {
                        const auto r = gradcheck(micro, seed);
                        ResultRow row = proto;
                        row.fold = "-";
                        row.accuracy = NAN;
                        row.fn_rate = NAN;
                        row.loss = r.max_rel_error;
                        row.params = r.n_checked;
                        row.seconds = r.seconds;
                        return row;
                    }});
                    break;
                }
                }
            }
        }
    }

    ResultTable table;
    table.rows.resize(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex report;
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            try {
                table.rows[j] = jobs[j].run();
                if (on_row) {
                    std::lock_guard lock(report);
                    on_row(table.rows[j]);
                }
            } catch (...) {
                errors[j] = std::current_exception();
            }
        }
    };
    const std::size_t workers = std::min(resolve_workers(spec.workers), jobs.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < workers; ++t) {
            threads.emplace_back(worker);
        }
        for (auto &t : threads) {
            t.join();
        }
    }
    for (auto &e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    table.aggregates = aggregate(table.rows);
    return table;
}

void write_experiment(const std::filesystem::path &dir, const ExperimentSpec &spec,
                      const ResultTable &table, const nlohmann::json &extra) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "results.csv", table.to_csv());
    nlohmann::json manifest = extra;
    manifest["experiment"] = spec;
    manifest["rows"] = table.rows.size();
    manifest["aggregates"] = table.aggregates.size();
    manifest["csv"] = "results.csv";
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

} // namespace qfed
