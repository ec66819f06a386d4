#include "qfed/cli.hpp"

#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qfed/checkpoint.hpp"
#include "qfed/experiment.hpp"
#include "qfed/fed.hpp"
#include "qfed/gradcheck.hpp"
#include "qfed/io.hpp"
#include "qfed/net.hpp"
#include "qfed/synth.hpp"

namespace qfed {

namespace {

using json = nlohmann::json;

struct Settings {
    std::uint64_t seed = 0;
    bool deterministic = false;
    std::size_t workers = 0; // 0: hardware concurrency
    std::string out;

    std::string data_dir;
    std::string features;
    std::size_t test_size = 0;

    SynthConfig synth;
    bool synth_seed_set = false;

    ModelSpec model;
    std::size_t epochs = 30;
    double lambda = 2.0;
    TrainConfig train;

    FedConfig fed;
    std::string transport = "inproc";
    std::string role = "all";
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    std::uint32_t client_id = 0;

    std::string checkpoint;
    std::string split = "test";

    ExperimentSpec experiment;
};

[[noreturn]] void unknown_key(const std::string &section, const std::string &key) {
    throw std::invalid_argument("config: unknown key '" + key + "'" +
                                (section.empty() ? "" : " in section '" + section + "'"));
}

template <class T> void take(const json &j, const char *key, T &dst) {
    if (j.contains(key)) {
        dst = j.at(key).get<T>();
    }
}

void check_keys(const json &j, const std::string &section, std::set<std::string> allowed) {
    if (!j.is_object()) {
        throw std::invalid_argument("config: section '" + section + "' must be an object");
    }
    for (const auto &[k, v] : j.items()) {
        if (allowed.count(k) == 0) {
            unknown_key(section, k);
        }
    }
}

void apply_config(Settings &s, const json &root) {
    check_keys(root, "", {"seed", "deterministic", "workers", "out", "data", "synth", "model",
                          "train", "fed", "eval", "experiment"});
    take(root, "seed", s.seed);
    take(root, "deterministic", s.deterministic);
    take(root, "workers", s.workers);
    take(root, "out", s.out);
    if (root.contains("data")) {
        const auto &d = root["data"];
        check_keys(d, "data", {"dir", "features", "test_size"});
        take(d, "dir", s.data_dir);
        take(d, "features", s.features);
        take(d, "test_size", s.test_size);
    }
    if (root.contains("synth")) {
        s.synth = root["synth"].get<SynthConfig>();
        s.synth_seed_set = root["synth"].contains("seed");
    }
    if (root.contains("model")) {
        s.model = root["model"].get<ModelSpec>();
    }
    if (root.contains("train")) {
        const auto &t = root["train"];
        check_keys(t, "train", {"epochs", "lambda", "batch_size", "lr", "beta1", "beta2", "eps"});
        take(t, "epochs", s.epochs);
        take(t, "lambda", s.lambda);
        take(t, "batch_size", s.train.batch_size);
        take(t, "lr", s.train.adam.lr);
        take(t, "beta1", s.train.adam.beta1);
        take(t, "beta2", s.train.adam.beta2);
        take(t, "eps", s.train.adam.eps);
    }
    if (root.contains("fed")) {
        const auto &f = root["fed"];
        check_keys(f, "fed", {"clients", "rounds", "local_epochs", "samples_per_client",
                              "transport", "role", "host", "port", "client_id"});
        take(f, "clients", s.fed.n_clients);
        take(f, "rounds", s.fed.n_rounds);
        take(f, "local_epochs", s.fed.local_epochs);
        take(f, "samples_per_client", s.fed.samples_per_client);
        take(f, "transport", s.transport);
        take(f, "role", s.role);
        take(f, "host", s.host);
        take(f, "port", s.port);
        take(f, "client_id", s.client_id);
    }
    if (root.contains("eval")) {
        const auto &e = root["eval"];
        check_keys(e, "eval", {"checkpoint", "split"});
        take(e, "checkpoint", s.checkpoint);
        take(e, "split", s.split);
    }
    if (root.contains("experiment")) {
        const auto &e = root["experiment"];
        check_keys(e, "experiment", {"kind", "variants", "values", "seeds", "folds",
                                     "total_samples"});
        if (e.contains("kind")) {
            s.experiment.kind = experiment_kind_from_string(e["kind"].get<std::string>());
        }
        if (e.contains("variants")) {
            s.experiment.variants.clear();
            for (const auto &v : e["variants"]) {
                s.experiment.variants.push_back(variant_from_string(v.get<std::string>()));
            }
        }
        take(e, "values", s.experiment.values);
        take(e, "seeds", s.experiment.seeds);
        take(e, "folds", s.experiment.folds);
        take(e, "total_samples", s.experiment.total_samples);
    }
}

/// Options are parsed into side storage and applied after the config file,
/// so flags given on the command line win.
class Overrides {
  public:
    template <class T>
    CLI::Option *add(CLI::App *app, const std::string &name, const std::string &help,
                     std::function<void(Settings &, const T &)> apply) {
        auto value = std::make_shared<T>();
        CLI::Option *opt = app->add_option(name, *value, help);
        appliers_.push_back([opt, value, apply](Settings &s) {
            if (opt->count() > 0) {
                apply(s, *value);
            }
        });
        return opt;
    }

    CLI::Option *flag(CLI::App *app, const std::string &name, const std::string &help,
                      std::function<void(Settings &)> apply) {
        CLI::Option *opt = app->add_flag(name, help);
        appliers_.push_back([opt, apply](Settings &s) {
            if (opt->count() > 0) {
                apply(s);
            }
        });
        return opt;
    }

    void apply(Settings &s) const {
        for (const auto &a : appliers_) {
            a(s);
        }
    }

  private:
    std::vector<std::function<void(Settings &)>> appliers_;
};

std::size_t effective_workers(const Settings &s) {
    if (s.workers != 0) {
        return resolve_workers(s.workers);
    }
    return resolve_workers(std::max(1U, std::thread::hardware_concurrency()));
}

TrainConfig train_config(const Settings &s) {
    TrainConfig t = s.train;
    t.deterministic = s.deterministic;
    t.workers = effective_workers(s);
    return t;
}

Dataset load_data(const Settings &s) {
    if (!s.features.empty()) {
        return load_feature_csv(s.features);
    }
    if (!s.data_dir.empty()) {
        return to_dataset(load_dataset(s.data_dir));
    }
    SynthConfig c = s.synth;
    if (!s.synth_seed_set) {
        c.seed = s.seed;
    }
    return to_dataset(gen_dataset(c, effective_workers(s)));
}

ModelSpec model_for(const Settings &s, const Dataset &data) {
    ModelSpec m = s.model;
    if (data.size() == 0) {
        throw std::runtime_error("dataset is empty");
    }
    const Shape &shape = data.inputs.front().shape();
    if (!s.features.empty() || shape.size() == 1) {
        m.backbone = Backbone::external_features;
        m.stages.clear();
    }
    m.input_shape = shape;
    m.validate();
    return m;
}

std::pair<DatasetView, DatasetView> split_data(const Settings &s, const Dataset &data) {
    const std::size_t test = s.test_size != 0 ? s.test_size : default_test_size(data.size());
    return holdout_views(data, test, 0, s.seed);
}

json metrics_json(const Metrics &m) { return m; }

void maybe_save(const Settings &s, const Model &model, std::ostream &out) {
    if (!s.out.empty()) {
        save_checkpoint(s.out, model);
        out << json{{"checkpoint", s.out}}.dump() << '\n';
    }
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const Settings &s, std::ostream &out) {
    if (s.out.empty()) {
        throw std::invalid_argument("gen-data: --out <dir> is required");
    }
    SynthConfig c = s.synth;
    if (!s.synth_seed_set) {
        c.seed = s.seed;
    }
    const auto samples = gen_dataset(c, effective_workers(s));
    save_dataset(s.out, samples, c);
    out << json{{"samples", samples.size()}, {"dir", s.out}}.dump() << '\n';
    return 0;
}

int cmd_train(const Settings &s, std::ostream &out) {
    const Dataset data = load_data(s);
    const ModelSpec spec = model_for(s, data);
    const auto [train, test] = split_data(s, data);
    const auto fr = fit(spec, train, test, LossConfig{s.lambda}, train_config(s), s.epochs, s.seed);
    for (std::size_t e = 0; e < fr.epochs.size(); ++e) {
        out << json{{"epoch", e},
                    {"train", metrics_json(fr.epochs[e].train.metrics)},
                    {"test", metrics_json(fr.epochs[e].test)}}
                   .dump()
            << '\n';
    }
    out << json{{"final", metrics_json(fr.epochs.back().test)},
                {"params", count_parameters(fr.model)}}
               .dump()
        << '\n';
    maybe_save(s, fr.model, out);
    return 0;
}

int cmd_fed(const Settings &s, std::ostream &out) {
    const Dataset data = load_data(s);
    const ModelSpec spec = model_for(s, data);
    const auto [train, test] = split_data(s, data);
    FedConfig fc = s.fed;
    fc.seed = s.seed;
    fc.train = train_config(s);
    fc.workers = fc.train.workers;
    const LossConfig lc{s.lambda};
    const TransportKind kind = transport_from_string(s.transport);
    auto print_round = [&](const RoundRecord &r) {
        json clients = json::array();
        for (const auto &c : r.clients) {
            clients.push_back({{"client", c.client_id}, {"samples", c.n_samples},
                               {"local", metrics_json(c.local)}});
        }
        out << json{{"round", r.round}, {"global", metrics_json(r.global)}, {"clients", clients}}
                   .dump()
            << '\n'
            << std::flush;
    };

    if (s.role != "all" && kind != TransportKind::tcp) {
        throw std::invalid_argument("fed: --role " + s.role + " requires --transport tcp");
    }
    FedHistory history;
    if (s.role == "all") {
        history = run_rounds(fc, spec, train, test, lc, kind, print_round);
    } else if (s.role == "server") {
        fc.validate();
        Listener listener(s.host, s.port);
        out << json{{"listening", listener.port()}}.dump() << '\n' << std::flush;
        TcpServerTransport server(listener, fc.n_clients);
        history = serve_rounds(fc, spec, test, lc, server, print_round);
    } else if (s.role == "client") {
        fc.validate();
        auto shards = partition(train, fc.n_clients, fc.seed, fc.samples_per_client);
        if (s.client_id >= shards.size()) {
            throw std::invalid_argument("fed: client id " + std::to_string(s.client_id) +
                                        " out of range for " + std::to_string(shards.size()) +
                                        " clients");
        }
        FedClient client(data, shards[s.client_id], spec, fc, lc);
        run_tcp_client(s.host, s.port, client, default_max_frame, [&](const MetricsMsg &m) {
            out << json{{"round", m.round}, {"global", metrics_json(m.metrics)}}.dump() << '\n';
        });
        return 0;
    } else {
        throw std::invalid_argument("fed: unknown role '" + s.role +
                                    "' (expected all, server or client)");
    }
    out << json{{"final", metrics_json(history.rounds.back().global)},
                {"params", history.final_params.size()}}
               .dump()
        << '\n';
    if (!s.out.empty()) {
        Model m = build_model(spec, s.seed);
        m.set_flat_parameters(history.final_params);
        maybe_save(s, m, out);
    }
    return 0;
}

int cmd_eval(const Settings &s, std::ostream &out) {
    if (s.checkpoint.empty()) {
        throw std::invalid_argument("eval: --checkpoint <path> is required");
    }
    const Model model = load_checkpoint(s.checkpoint);
    const Dataset data = load_data(s);
    DatasetView view = DatasetView::all(data);
    if (s.split == "test") {
        view = split_data(s, data).second;
    } else if (s.split == "train") {
        view = split_data(s, data).first;
    } else if (s.split != "all") {
        throw std::invalid_argument("eval: --split must be test, train or all");
    }
    out << json{{"split", s.split}, {"metrics", metrics_json(evaluate(model, view, {s.lambda}))}}
               .dump()
        << '\n';
    return 0;
}

int cmd_gradcheck(const Settings &s, std::ostream &out) {
    ModelSpec micro = ModelSpec::micro();
    micro.variant = s.model.variant;
    const auto r = gradcheck(micro, s.seed);
    const bool ok = r.max_rel_error < 1e-4;
    out << json{{"max_rel_error", r.max_rel_error},
                {"worst", r.worst_entry},
                {"checked", r.n_checked},
                {"seconds", r.seconds},
                {"pass", ok}}
               .dump()
        << '\n';
    return ok ? 0 : 1;
}

int cmd_partition(const Settings &s, std::ostream &out) {
    const Dataset data = load_data(s);
    const auto [train, test] = split_data(s, data);
    const auto shards = partition(train, s.fed.n_clients, s.seed, s.fed.samples_per_client);
    json list = json::array();
    for (const auto &sh : shards) {
        std::size_t ones = 0;
        for (auto i : sh.indices) {
            ones += data.labels[i] == 1;
        }
        list.push_back({{"client", sh.client_id},
                        {"size", sh.indices.size()},
                        {"class0", sh.indices.size() - ones},
                        {"class1", ones}});
        out << list.back().dump() << '\n';
    }
    if (!s.out.empty()) {
        json full = json::array();
        for (const auto &sh : shards) {
            full.push_back({{"client", sh.client_id}, {"indices", sh.indices}});
        }
        write_file_atomic(s.out, json{{"shards", full}}.dump() + "\n");
    }
    return 0;
}

int cmd_experiment(const Settings &s, std::ostream &out, std::ostream &err) {
    if (s.out.empty()) {
        throw std::invalid_argument("experiment: --out <dir> is required");
    }
    ExperimentSpec e = s.experiment;
    e.train = train_config(s);
    e.train.deterministic = true;
    e.epochs = s.epochs;
    e.lambda = s.lambda;
    e.test_size = s.test_size;
    e.fed = s.fed;
    e.workers = effective_workers(s);
    if (e.values.empty()) {
        switch (e.kind) {
        case ExperimentKind::lambda_sweep: e.values = {1, 2, 4, 6, 8, 10}; break;
        case ExperimentKind::dataset_size_sweep: e.values = {1500, 2000, 3000, 4000}; break;
        case ExperimentKind::client_count_sweep: e.values = {4, 8, 16, 32}; break;
        case ExperimentKind::samples_per_client_sweep: e.values = {50, 125, 250, 1000}; break;
        case ExperimentKind::single_train: e.values = {s.lambda}; break;
        case ExperimentKind::fed_run: e.values = {static_cast<double>(s.fed.n_clients)}; break;
        case ExperimentKind::gradcheck: break;
        }
    }
    if (e.test_size == 0 && (e.kind == ExperimentKind::dataset_size_sweep ||
                             e.kind == ExperimentKind::client_count_sweep ||
                             e.kind == ExperimentKind::samples_per_client_sweep)) {
        e.test_size = 400;
    }
    Dataset data;
    if (e.kind != ExperimentKind::gradcheck) {
        data = load_data(s);
        e.model = model_for(s, data);
    } else {
        e.model = s.model;
    }
    e.validate();
    const auto table = run_experiment(e, data, [&](const ResultRow &r) {
        err << r.experiment << ' ' << r.variant << " value=" << r.sweep_value << " fold=" << r.fold
            << " seed=" << r.seed << " accuracy=" << r.accuracy << " fn_rate=" << r.fn_rate
            << " (" << r.seconds << " s)\n";
    });
    json extra{{"seed", s.seed}, {"deterministic", true},
               {"data", s.features.empty() ? (s.data_dir.empty() ? json("inline") : json(s.data_dir))
                                           : json(s.features)}};
    if (s.features.empty() && s.data_dir.empty()) {
        SynthConfig c = s.synth;
        if (!s.synth_seed_set) {
            c.seed = s.seed;
        }
        extra["synth"] = c;
    }
    write_experiment(s.out, e, table, extra);
    out << table.to_csv();
    return 0;
}

} // namespace

int cli_main(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Hybrid quantum-classical steatosis classifier with federated training", "qfed"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides ov;
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; flags override it");
    ov.add<std::uint64_t>(&app, "--seed", "Run seed",
                          [](Settings &s, const std::uint64_t &v) { s.seed = v; });
    ov.flag(&app, "--deterministic", "Serial, fixed-order gradient accumulation",
            [](Settings &s) { s.deterministic = true; });
    ov.add<std::string>(&app, "--out", "Output path",
                        [](Settings &s, const std::string &v) { s.out = v; });
    ov.add<std::size_t>(&app, "--workers", "Worker threads (QFED_WORKERS overrides)",
                        [](Settings &s, const std::size_t &v) { s.workers = v; });

    auto data_opts = [&](CLI::App *sub) {
        ov.add<std::string>(sub, "--data", "Synthetic dataset directory",
                            [](Settings &s, const std::string &v) { s.data_dir = v; });
        ov.add<std::string>(sub, "--features", "CSV of feature vectors with a trailing label",
                            [](Settings &s, const std::string &v) { s.features = v; });
        ov.add<std::size_t>(sub, "--test-size", "Hold-out size (default 20%)",
                            [](Settings &s, const std::size_t &v) { s.test_size = v; });
        ov.add<std::size_t>(sub, "--per-grade", "Images per grade for in-line generation",
                            [](Settings &s, const std::size_t &v) { s.synth.per_grade = v; });
        ov.add<std::size_t>(sub, "--image-size", "Square image side for in-line generation",
                            [](Settings &s, const std::size_t &v) {
                                s.synth.height = v;
                                s.synth.width = v;
                            });
    };
    auto train_opts = [&](CLI::App *sub) {
        ov.add<std::string>(sub, "--variant", "hybrid or classical",
                            [](Settings &s, const std::string &v) {
                                s.model.variant = variant_from_string(v);
                                s.experiment.variants = {s.model.variant};
                            });
        ov.add<double>(sub, "--lambda", "Class weight for non-transplantable samples",
                       [](Settings &s, const double &v) { s.lambda = v; });
        ov.add<double>(sub, "--lr", "Adam learning rate",
                       [](Settings &s, const double &v) { s.train.adam.lr = v; });
        ov.add<std::size_t>(sub, "--batch-size", "Mini-batch size",
                            [](Settings &s, const std::size_t &v) { s.train.batch_size = v; });
    };
    auto fed_opts = [&](CLI::App *sub) {
        ov.add<std::size_t>(sub, "--clients", "Number of clients",
                            [](Settings &s, const std::size_t &v) { s.fed.n_clients = v; });
        ov.add<std::size_t>(sub, "--samples-per-client", "Shard size (0: split everything)",
                            [](Settings &s, const std::size_t &v) { s.fed.samples_per_client = v; });
    };

    CLI::App *gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
    ov.add<std::size_t>(gen, "--per-grade", "Images per grade",
                        [](Settings &s, const std::size_t &v) { s.synth.per_grade = v; });
    ov.add<std::size_t>(gen, "--image-size", "Square image side",
                        [](Settings &s, const std::size_t &v) {
                            s.synth.height = v;
                            s.synth.width = v;
                        });

    CLI::App *train = app.add_subcommand("train", "Centralized training on a hold-out split");
    data_opts(train);
    train_opts(train);
    ov.add<std::size_t>(train, "--epochs", "Training epochs",
                        [](Settings &s, const std::size_t &v) { s.epochs = v; });

    CLI::App *fed = app.add_subcommand("fed", "Federated training with FedAvg");
    data_opts(fed);
    train_opts(fed);
    fed_opts(fed);
    ov.add<std::size_t>(fed, "--rounds", "Server rounds",
                        [](Settings &s, const std::size_t &v) { s.fed.n_rounds = v; });
    ov.add<std::size_t>(fed, "--local-epochs", "Client epochs per round",
                        [](Settings &s, const std::size_t &v) { s.fed.local_epochs = v; });
    ov.add<std::string>(fed, "--transport", "inproc or tcp",
                        [](Settings &s, const std::string &v) { s.transport = v; });
    ov.add<std::string>(fed, "--role", "all, server or client (tcp only)",
                        [](Settings &s, const std::string &v) { s.role = v; });
    ov.add<std::string>(fed, "--host", "Server address for tcp roles",
                        [](Settings &s, const std::string &v) { s.host = v; });
    ov.add<std::uint16_t>(fed, "--port", "Server port for tcp roles (0: ephemeral)",
                          [](Settings &s, const std::uint16_t &v) { s.port = v; });
    ov.add<std::uint32_t>(fed, "--client-id", "Shard served by this client process",
                          [](Settings &s, const std::uint32_t &v) { s.client_id = v; });

    CLI::App *eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    data_opts(eval);
    ov.add<std::string>(eval, "--checkpoint", "Checkpoint file",
                        [](Settings &s, const std::string &v) { s.checkpoint = v; });
    ov.add<std::string>(eval, "--split", "test, train or all",
                        [](Settings &s, const std::string &v) { s.split = v; });
    ov.add<double>(eval, "--lambda", "Class weight used for the reported loss",
                   [](Settings &s, const double &v) { s.lambda = v; });

    CLI::App *grad = app.add_subcommand("gradcheck", "Finite-difference check of the micro model");
    ov.add<std::string>(grad, "--variant", "hybrid or classical",
                        [](Settings &s, const std::string &v) { s.model.variant = variant_from_string(v); });

    CLI::App *part = app.add_subcommand("partition", "Show the federated shards");
    data_opts(part);
    fed_opts(part);

    CLI::App *exp = app.add_subcommand("experiment", "Run a sweep and write results.csv");
    data_opts(exp);
    train_opts(exp);
    fed_opts(exp);
    ov.add<std::string>(exp, "--kind", "Experiment kind",
                        [](Settings &s, const std::string &v) {
                            s.experiment.kind = experiment_kind_from_string(v);
                        });
    ov.add<std::vector<std::string>>(exp, "--variants", "Model variants",
                                     [](Settings &s, const std::vector<std::string> &v) {
                                         s.experiment.variants.clear();
                                         for (const auto &n : v) {
                                             s.experiment.variants.push_back(variant_from_string(n));
                                         }
                                     });
    ov.add<std::vector<double>>(exp, "--values", "Sweep values",
                                [](Settings &s, const std::vector<double> &v) { s.experiment.values = v; });
    ov.add<std::vector<std::uint64_t>>(exp, "--seeds", "Seeds",
                                       [](Settings &s, const std::vector<std::uint64_t> &v) {
                                           s.experiment.seeds = v;
                                       });
    ov.add<std::size_t>(exp, "--folds", "Cross-validation folds",
                        [](Settings &s, const std::size_t &v) { s.experiment.folds = v; });
    ov.add<std::size_t>(exp, "--epochs", "Training epochs",
                        [](Settings &s, const std::size_t &v) { s.epochs = v; });
    ov.add<std::size_t>(exp, "--rounds", "Server rounds",
                        [](Settings &s, const std::size_t &v) { s.fed.n_rounds = v; });
    ov.add<std::size_t>(exp, "--total-samples", "Training samples for federated sweeps",
                        [](Settings &s, const std::size_t &v) { s.experiment.total_samples = v; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        Settings s;
        if (!config_path.empty()) {
            apply_config(s, json::parse(read_text_file(config_path)));
        }
        ov.apply(s);
        if (s.experiment.seeds == std::vector<std::uint64_t>{0}) {
            s.experiment.seeds = {s.seed};
        }
        if (gen->parsed()) {
            return cmd_gen_data(s, out);
        }
        if (train->parsed()) {
            return cmd_train(s, out);
        }
        if (fed->parsed()) {
            return cmd_fed(s, out);
        }
        if (eval->parsed()) {
            return cmd_eval(s, out);
        }
        if (grad->parsed()) {
            return cmd_gradcheck(s, out);
        }
        if (part->parsed()) {
            return cmd_partition(s, out);
        }
        return cmd_experiment(s, out, err);
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace qfed
