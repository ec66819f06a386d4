#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "qfed/dataset.hpp"
#include "qfed/fed.hpp"
#include "qfed/model.hpp"

namespace qfed {

enum class ExperimentKind {
    lambda_sweep,
    dataset_size_sweep,
    client_count_sweep,
    samples_per_client_sweep,
    single_train,
    fed_run,
    gradcheck,
};

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string &name);

/**
 * What a sweep value means per kind:
 *
 *   lambda-sweep              class weight; k-fold CV over the whole dataset
 *   dataset-size-sweep        training-set size; fixed hold-out of test_size
 *   client-count-sweep        client count; total_samples training samples
 *   samples-per-client-sweep  samples per client with fed.n_clients clients
 *   single-train              class weight; one hold-out run
 *   fed-run                   client count; one federated hold-out run
 *   gradcheck                 ignored; one micro-model check per seed
 */
struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::single_train;
    std::vector<Variant> variants{Variant::hybrid};
    std::vector<double> values;
    std::vector<std::uint64_t> seeds{0};
    std::size_t folds = 5;
    std::size_t epochs = 30;
    double lambda = 2.0;
    /// Hold-out test size; 0 means 20% of the dataset.
    std::size_t test_size = 400;
    /// Training samples drawn for the federated sweeps.
    std::size_t total_samples = 4000;
    ModelSpec model;
    TrainConfig train;
    FedConfig fed;
    /// Concurrent jobs; the QFED_WORKERS environment variable overrides it.
    std::size_t workers = 1;

    /// Throws std::invalid_argument for empty sweeps or seeds and other misuse.
    void validate() const;
};

void to_json(nlohmann::json &j, const ExperimentSpec &spec);

struct ResultRow {
    std::string experiment;
    std::string variant;
    double sweep_value = 0.0;
    std::string fold;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double fn_rate = 0.0;
    double loss = 0.0;
    std::size_t params = 0;
    double seconds = 0.0;
};

struct AggregateRow {
    std::string experiment;
    std::string variant;
    double sweep_value = 0.0;
    std::size_t n = 0;
    double accuracy_mean = 0.0, accuracy_std = 0.0;
    double fn_rate_mean = 0.0, fn_rate_std = 0.0;
    double loss_mean = 0.0, loss_std = 0.0;
    std::size_t params = 0;
    double seconds_mean = 0.0, seconds_std = 0.0;
};

struct ResultTable {
    std::vector<ResultRow> rows;
    std::vector<AggregateRow> aggregates;

    /// Header experiment,variant,sweep_value,fold,seed,accuracy,fn_rate,loss,params,seconds;
    /// detail rows, then one fold="agg" row per (variant, sweep value) with
    /// "mean+/-std" cells.
    [[nodiscard]] std::string to_csv() const;
};

/// Mean and sample standard deviation (0 for a single row) per (variant, value).
std::vector<AggregateRow> aggregate(const std::vector<ResultRow> &rows);

/// 20% of `n_samples`, rounded down to an even count.
std::size_t default_test_size(std::size_t n_samples);

/**
 * Class-balanced hold-out of `test_count` samples drawn from `seed`. The
 * training side keeps every other sample, or a balanced subset of
 * `train_count` of them when train_count is nonzero.
 */
std::pair<DatasetView, DatasetView> holdout_views(const Dataset &data, std::size_t test_count,
                                                  std::size_t train_count, std::uint64_t seed);

using ProgressCallback = std::function<void(const ResultRow &)>;

/// Effective job concurrency: QFED_WORKERS if set, else `configured` (min 1).
std::size_t resolve_workers(std::size_t configured);

/// Runs every (variant, value, seed, fold) job of `spec` over `data`.
/// Rows come back in job order regardless of the worker count.
ResultTable run_experiment(const ExperimentSpec &spec, const Dataset &data,
                           const ProgressCallback &on_row = {});

/// Writes <dir>/results.csv and <dir>/manifest.json atomically.
void write_experiment(const std::filesystem::path &dir, const ExperimentSpec &spec,
                      const ResultTable &table, const nlohmann::json &extra);

} // namespace qfed
