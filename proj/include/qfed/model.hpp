#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "qfed/adam.hpp"
#include "qfed/dataset.hpp"
#include "qfed/layers.hpp"
#include "qfed/qdi.hpp"

namespace qfed {

enum class Variant { hybrid, classical };
enum class Backbone { small_cnn, external_features };

std::string to_string(Variant v);
std::string to_string(Backbone b);
Variant variant_from_string(const std::string &name);
Backbone backbone_from_string(const std::string &name);

/// One backbone stage: conv (k x k, "same") -> relu -> maxpool(pool).
struct ConvStage {
    std::size_t channels = 0;
    std::size_t pool = 2;

    friend bool operator==(const ConvStage &, const ConvStage &) = default;
};

struct ModelSpec {
    Variant variant = Variant::hybrid;
    Backbone backbone = Backbone::small_cnn;
    /// [1, H, W] for small-cnn, [n_features] for external-features.
    Shape input_shape{1, 64, 64};
    std::size_t n_classes = 2;
    std::vector<ConvStage> stages{{4, 2}, {8, 4}, {16, 2}};
    std::size_t kernel = 3;
    std::size_t hidden = 100;
    QdiConfig qdi;
    QdiGradient qdi_gradient = QdiGradient::adjoint;

    /// 4x4 single-channel input, one conv stage, 8-dimensional backbone output.
    static ModelSpec micro();
    /// Head-only model over precomputed feature vectors.
    static ModelSpec external(std::size_t n_features, Variant variant);

    void validate() const;

    friend bool operator==(const ModelSpec &, const ModelSpec &) = default;
};

void to_json(nlohmann::json &j, const ModelSpec &spec);
void from_json(const nlohmann::json &j, ModelSpec &spec);

using Layer = std::variant<Dense, Conv2d, Relu, MaxPool2d, Flatten, QdiLayer>;

LayerKind layer_kind(const Layer &layer);
std::string layer_name(const Layer &layer);

/// Per-layer parameter gradients, in Model::parameters() order.
using ModelGrads = std::vector<std::vector<Tensor>>;

/// A fixed chain of layers.
class Model {
  public:
    Model() = default;
    Model(ModelSpec spec, std::vector<Layer> layers);

    [[nodiscard]] const ModelSpec &spec() const { return spec_; }
    [[nodiscard]] const std::vector<Layer> &layers() const { return layers_; }
    std::vector<Layer> &layers() { return layers_; }

    /// Logits for `x`; caches receive one entry per layer.
    Tensor forward(const Tensor &x, std::vector<ActivationCache> &caches) const;
    [[nodiscard]] Tensor predict(const Tensor &x) const;

    /// Accumulates parameter gradients into `grads` and returns d loss / d input.
    Tensor backward(const Tensor &d_logits, const std::vector<ActivationCache> &caches,
                    ModelGrads &grads) const;

    [[nodiscard]] ModelGrads zero_grads() const;

    /// Width of the backbone output (input of the first head layer).
    [[nodiscard]] std::size_t backbone_dim() const { return backbone_dim_; }

    std::vector<Tensor *> parameters();
    [[nodiscard]] std::vector<const Tensor *> parameters() const;
    /// "layer<i>.<role>" names matching parameters().
    [[nodiscard]] std::vector<std::string> parameter_names() const;

    [[nodiscard]] std::vector<double> flat_parameters() const;
    void set_flat_parameters(std::span<const double> flat);

  private:
    ModelSpec spec_;
    std::vector<Layer> layers_;
    std::size_t backbone_dim_ = 0;
};

/// Builds the layer chain for `spec` and initialises it from `seed`.
Model build_model(const ModelSpec &spec, std::uint64_t seed);

/// Sum of all trainable tensor sizes (QDI rotation angles included).
std::size_t count_parameters(const Model &model);

struct LossConfig {
    /// Weight applied to samples whose true class is non-transplantable.
    double lambda = 1.0;
    int non_transplantable_class = non_transplantable;

    void validate() const;
};

struct LossResult {
    double value = 0.0;
    Tensor d_logits;
};

inline constexpr double probability_floor = 1e-12;

/**
 * Class-weighted cross-entropy on softmax(logits):
 * w * -log(max(p_true, 1e-12)), w = lambda for the non-transplantable class
 * and 1 otherwise. The gradient w * (p - onehot) ignores the clamp.
 */
LossResult loss(const Tensor &logits, int true_class, const LossConfig &config);

/// Confusion counts indexed [true][predicted] plus the mean loss when known.
struct Metrics {
    std::array<std::array<std::uint64_t, 2>, 2> confusion{};
    double mean_loss = 0.0;

    [[nodiscard]] std::uint64_t total() const;
    [[nodiscard]] double accuracy() const;
    /// Non-transplantable samples predicted transplantable over all non-transplantable.
    [[nodiscard]] double fn_rate() const;
    void record(int truth, int predicted);

    friend bool operator==(const Metrics &, const Metrics &) = default;
};

void to_json(nlohmann::json &j, const Metrics &m);

int argmax(const Tensor &logits);

struct TrainConfig {
    std::size_t batch_size = 32;
    AdamHyper adam;
    /// Serial, fixed-order gradient accumulation when true.
    bool deterministic = true;
    std::size_t workers = 1;
};

/// Adam states for every parameter tensor of a model.
class Optimizer {
  public:
    Optimizer() = default;
    Optimizer(const Model &model, const AdamHyper &hyper);

    void step(Model &model, const ModelGrads &grads);
    [[nodiscard]] const std::vector<AdamState> &states() const { return states_; }

  private:
    std::vector<AdamState> states_;
};

struct EpochResult {
    double mean_loss = 0.0;
    Metrics metrics;
};

/**
 * One pass over `data` in an order shuffled by `seed`, one Adam step per
 * mini-batch of gradients averaged over the batch. Metrics are taken from
 * the forward passes seen during training.
 */
EpochResult train_epoch(Model &model, const DatasetView &data, Optimizer &optimizer,
                        const LossConfig &loss_config, const TrainConfig &train_config,
                        std::uint64_t seed);

/// Argmax predictions over `data`; the mean loss uses `loss_config`.
Metrics evaluate(const Model &model, const DatasetView &data,
                 const LossConfig &loss_config = {});

/// Shuffle seed for epoch `epoch` of training stream `stream` (0 = centralized,
/// c = federated client c).
inline std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch) {
    return derive_seed(seed, 0xE90C00 + stream, epoch);
}

struct EpochRecord {
    EpochResult train;
    Metrics test;
};

struct FitResult {
    Model model;
    std::vector<EpochRecord> epochs;
};

/// Centralized training: build_model(spec, seed), then `epochs` calls to
/// train_epoch with epoch_seed(seed, 0, e), evaluating on `test` after each.
FitResult fit(const ModelSpec &spec, const DatasetView &train, const DatasetView &test,
              const LossConfig &loss_config, const TrainConfig &train_config,
              std::size_t epochs, std::uint64_t seed);

} // namespace qfed
