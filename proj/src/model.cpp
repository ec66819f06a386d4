#include "qfed/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

namespace qfed {

std::string to_string(Variant v) { return v == Variant::hybrid ? "hybrid" : "classical"; }

std::string to_string(Backbone b) {
    return b == Backbone::small_cnn ? "small-cnn" : "external-features";
}

Variant variant_from_string(const std::string &name) {
    if (name == "hybrid") {
        return Variant::hybrid;
    }
    if (name == "classical") {
        return Variant::classical;
    }
    throw std::invalid_argument("unknown model variant '" + name +
                                "' (expected hybrid or classical)");
}

Backbone backbone_from_string(const std::string &name) {
    if (name == "small-cnn") {
        return Backbone::small_cnn;
    }
    if (name == "external-features") {
        return Backbone::external_features;
    }
    throw std::invalid_argument("unknown backbone '" + name +
                                "' (expected small-cnn or external-features)");
}

ModelSpec ModelSpec::micro() {
    ModelSpec spec;
    spec.input_shape = {1, 4, 4};
    spec.stages = {{2, 2}};
    return spec;
}

ModelSpec ModelSpec::external(std::size_t n_features, Variant variant) {
    ModelSpec spec;
    spec.variant = variant;
    spec.backbone = Backbone::external_features;
    spec.input_shape = {n_features};
    spec.stages.clear();
    return spec;
}

void ModelSpec::validate() const {
    if (n_classes != 2) {
        throw std::invalid_argument("model: only binary classification is supported, got " +
                                    std::to_string(n_classes) + " classes");
    }
    if (hidden == 0) {
        throw std::invalid_argument("model: hidden width must be positive");
    }
    if (backbone == Backbone::small_cnn) {
        if (input_shape.size() != 3 || input_shape[0] == 0) {
            throw std::invalid_argument("model: small-cnn expects input [C, H, W], got " +
                                        shape_string(input_shape));
        }
        if (stages.empty()) {
            throw std::invalid_argument("model: small-cnn needs at least one stage");
        }
    } else if (input_shape.size() != 1 || input_shape[0] == 0) {
        throw std::invalid_argument("model: external-features expects input [n], got " +
                                    shape_string(input_shape));
    }
    if (variant == Variant::hybrid) {
        qdi.validate();
        if (qdi.n_features() != hidden) {
            throw std::invalid_argument("model: QDI takes " + std::to_string(qdi.n_features()) +
                                        " features but the hidden layer has " +
                                        std::to_string(hidden) + " outputs");
        }
    }
}

void to_json(nlohmann::json &j, const ModelSpec &spec) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto &s : spec.stages) {
        stages.push_back({{"channels", s.channels}, {"pool", s.pool}});
    }
    j = nlohmann::json{{"variant", to_string(spec.variant)},
                       {"backbone", to_string(spec.backbone)},
                       {"input_shape", spec.input_shape},
                       {"n_classes", spec.n_classes},
                       {"stages", stages},
                       {"kernel", spec.kernel},
                       {"hidden", spec.hidden},
                       {"qdi",
                        {{"n_qubits", spec.qdi.n_qubits},
                         {"n_reupload", spec.qdi.n_reupload},
                         {"n_initial_variational", spec.qdi.n_initial_variational}}},
                       {"qdi_gradient", to_string(spec.qdi_gradient)}};
}

void from_json(const nlohmann::json &j, ModelSpec &spec) {
    ModelSpec out;
    if (j.contains("variant")) {
        out.variant = variant_from_string(j.at("variant").get<std::string>());
    }
    if (j.contains("backbone")) {
        out.backbone = backbone_from_string(j.at("backbone").get<std::string>());
        if (out.backbone == Backbone::external_features) {
            out.stages.clear();
        }
    }
    if (j.contains("input_shape")) {
        out.input_shape = j.at("input_shape").get<Shape>();
    }
    if (j.contains("n_classes")) {
        out.n_classes = j.at("n_classes").get<std::size_t>();
    }
    if (j.contains("stages")) {
        out.stages.clear();
        for (const auto &s : j.at("stages")) {
            out.stages.push_back(
                {s.at("channels").get<std::size_t>(), s.at("pool").get<std::size_t>()});
        }
    }
    if (j.contains("kernel")) {
        out.kernel = j.at("kernel").get<std::size_t>();
    }
    if (j.contains("hidden")) {
        out.hidden = j.at("hidden").get<std::size_t>();
    }
    if (j.contains("qdi")) {
        const auto &q = j.at("qdi");
        out.qdi.n_qubits = q.value("n_qubits", out.qdi.n_qubits);
        out.qdi.n_reupload = q.value("n_reupload", out.qdi.n_reupload);
        out.qdi.n_initial_variational =
            q.value("n_initial_variational", out.qdi.n_initial_variational);
    }
    if (j.contains("qdi_gradient")) {
        out.qdi_gradient = qdi_gradient_from_string(j.at("qdi_gradient").get<std::string>());
    }
    spec = std::move(out);
}

LayerKind layer_kind(const Layer &layer) {
    return std::visit([](const auto &l) { return std::decay_t<decltype(l)>::kind; }, layer);
}

std::string layer_name(const Layer &layer) {
    return std::visit([](const auto &l) { return l.name(); }, layer);
}

// ---------------------------------------------------------------- Model

Model::Model(ModelSpec spec, std::vector<Layer> layers)
    : spec_(std::move(spec)), layers_(std::move(layers)) {
    Shape shape = spec_.input_shape;
    for (const auto &layer : layers_) {
        if (backbone_dim_ == 0 && layer_kind(layer) == LayerKind::dense) {
            backbone_dim_ = shape_size(shape);
        }
        shape = std::visit([&](const auto &l) { return l.output_shape(shape); }, layer);
    }
}

Tensor Model::forward(const Tensor &x, std::vector<ActivationCache> &caches) const {
    caches.resize(layers_.size());
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = std::visit([&](const auto &l) { return l.forward(h, caches[i]); }, layers_[i]);
    }
    return h;
}

Tensor Model::predict(const Tensor &x) const {
    std::vector<ActivationCache> caches;
    return forward(x, caches);
}

Tensor Model::backward(const Tensor &d_logits, const std::vector<ActivationCache> &caches,
                       ModelGrads &grads) const {
    if (caches.size() != layers_.size() || grads.size() != layers_.size()) {
        throw std::logic_error("model backward: cache/gradient count does not match layers");
    }
    Tensor g = d_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        g = std::visit(
            [&](const auto &l) { return l.backward(g, caches[i], std::span<Tensor>(grads[i])); },
            layers_[i]);
    }
    return g;
}

ModelGrads Model::zero_grads() const {
    ModelGrads grads;
    grads.reserve(layers_.size());
    for (const auto &layer : layers_) {
        grads.push_back(std::visit([](const auto &l) { return qfed::zero_grads(l); }, layer));
    }
    return grads;
}

std::vector<Tensor *> Model::parameters() {
    std::vector<Tensor *> out;
    for (auto &layer : layers_) {
        for (Tensor *p : std::visit([](auto &l) { return l.parameters(); }, layer)) {
            out.push_back(p);
        }
    }
    return out;
}

std::vector<const Tensor *> Model::parameters() const {
    std::vector<const Tensor *> out;
    for (const auto &layer : layers_) {
        for (const Tensor *p : std::visit([](const auto &l) { return l.parameters(); }, layer)) {
            out.push_back(p);
        }
    }
    return out;
}

std::vector<std::string> Model::parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto kind = layer_kind(layers_[i]);
        const std::string prefix = "layer" + std::to_string(i) + ".";
        if (kind == LayerKind::dense || kind == LayerKind::conv2d) {
            names.push_back(prefix + "weight");
            names.push_back(prefix + "bias");
        } else if (kind == LayerKind::qdi) {
            names.push_back(prefix + "angles");
        }
    }
    return names;
}

std::vector<double> Model::flat_parameters() const {
    std::vector<double> flat;
    for (const Tensor *p : parameters()) {
        flat.insert(flat.end(), p->values().begin(), p->values().end());
    }
    return flat;
}

void Model::set_flat_parameters(std::span<const double> flat) {
    std::size_t offset = 0;
    auto params = parameters();
    const std::size_t total = std::accumulate(
        params.begin(), params.end(), std::size_t{0},
        [](std::size_t acc, const Tensor *p) { return acc + p->size(); });
    if (flat.size() != total) {
        throw std::invalid_argument("set_flat_parameters: expected " + std::to_string(total) +
                                    " values, got " + std::to_string(flat.size()));
    }
    for (Tensor *p : params) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), p->size(),
                    p->data().begin());
        offset += p->size();
    }
}

Model build_model(const ModelSpec &spec, std::uint64_t seed) {
    spec.validate();
    std::vector<Layer> layers;
    Shape shape = spec.input_shape;
    if (spec.backbone == Backbone::small_cnn) {
        std::size_t channels = spec.input_shape[0];
        for (const auto &stage : spec.stages) {
            layers.emplace_back(Conv2d(channels, stage.channels, spec.kernel));
            layers.emplace_back(Relu{});
            layers.emplace_back(MaxPool2d(stage.pool));
            channels = stage.channels;
        }
        layers.emplace_back(Flatten{});
        for (const auto &layer : layers) {
            shape = std::visit([&](const auto &l) { return l.output_shape(shape); }, layer);
        }
    }
    const std::size_t features = shape_size(shape);
    layers.emplace_back(Dense(features, spec.hidden));
    if (spec.variant == Variant::hybrid) {
        layers.emplace_back(QdiLayer(spec.qdi, spec.qdi_gradient));
        layers.emplace_back(Dense(spec.qdi.n_qubits, spec.n_classes));
    } else {
        layers.emplace_back(Relu{});
        layers.emplace_back(Dense(spec.hidden, spec.n_classes));
    }

    Rng rng(derive_seed(seed, 0x1417));
    for (auto &layer : layers) {
        std::visit([&](auto &l) { l.init(rng); }, layer);
    }
    return Model(spec, std::move(layers));
}

std::size_t count_parameters(const Model &model) {
    std::size_t n = 0;
    for (const Tensor *p : model.parameters()) {
        n += p->size();
    }
    return n;
}

// ---------------------------------------------------------------- loss

void LossConfig::validate() const {
    if (!(lambda >= 1.0) || !std::isfinite(lambda)) {
        throw std::invalid_argument("loss: lambda must be a finite value >= 1, got " +
                                    std::to_string(lambda));
    }
    if (non_transplantable_class != 0 && non_transplantable_class != 1) {
        throw std::invalid_argument("loss: non-transplantable class index must be 0 or 1");
    }
}

LossResult loss(const Tensor &logits, int true_class, const LossConfig &config) {
    config.validate();
    if (logits.rank() != 1 || logits.size() < 2) {
        throw std::invalid_argument("loss: expected a logit vector, got shape " +
                                    shape_string(logits.shape()));
    }
    if (true_class < 0 || static_cast<std::size_t>(true_class) >= logits.size()) {
        throw std::invalid_argument("loss: class index " + std::to_string(true_class) +
                                    " out of range");
    }
    require_finite(logits, "loss logits");
    const double mx = *std::max_element(logits.data().begin(), logits.data().end());
    Tensor p(logits.shape());
    double z = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        p[c] = std::exp(logits[c] - mx);
        z += p[c];
    }
    for (auto &v : p.data()) {
        v /= z;
    }
    const double w = true_class == config.non_transplantable_class ? config.lambda : 1.0;
    const auto t = static_cast<std::size_t>(true_class);
    LossResult r;
    r.value = -w * std::log(std::max(p[t], probability_floor));
    r.d_logits = p;
    r.d_logits[t] -= 1.0;
    r.d_logits *= w;
    return r;
}

// ---------------------------------------------------------------- metrics

std::uint64_t Metrics::total() const {
    return confusion[0][0] + confusion[0][1] + confusion[1][0] + confusion[1][1];
}

double Metrics::accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0
                  : static_cast<double>(confusion[0][0] + confusion[1][1]) /
                        static_cast<double>(n);
}

double Metrics::fn_rate() const {
    const auto positives = confusion[non_transplantable][0] + confusion[non_transplantable][1];
    return positives == 0 ? 0.0
                          : static_cast<double>(confusion[non_transplantable][transplantable]) /
                                static_cast<double>(positives);
}

void Metrics::record(int truth, int predicted) {
    confusion.at(static_cast<std::size_t>(truth)).at(static_cast<std::size_t>(predicted)) += 1;
}

void to_json(nlohmann::json &j, const Metrics &m) {
    j = nlohmann::json{{"accuracy", m.accuracy()},
                       {"fn_rate", m.fn_rate()},
                       {"loss", m.mean_loss},
                       {"confusion",
                        {{m.confusion[0][0], m.confusion[0][1]},
                         {m.confusion[1][0], m.confusion[1][1]}}}};
}

int argmax(const Tensor &logits) {
    // Ties resolve to the lowest class index.
    return static_cast<int>(std::max_element(logits.data().begin(), logits.data().end()) -
                            logits.data().begin());
}

// ---------------------------------------------------------------- training

Optimizer::Optimizer(const Model &model, const AdamHyper &hyper) {
    for (const Tensor *p : model.parameters()) {
        states_.emplace_back(p->shape(), hyper);
    }
}

void Optimizer::step(Model &model, const ModelGrads &grads) {
    auto params = model.parameters();
    if (params.size() != states_.size()) {
        throw std::logic_error("optimizer: model has " + std::to_string(params.size()) +
                               " parameter tensors, optimizer tracks " +
                               std::to_string(states_.size()));
    }
    std::size_t k = 0;
    for (const auto &layer_grads : grads) {
        for (const Tensor &g : layer_grads) {
            adam_step(*params[k], g, states_[k]);
            ++k;
        }
    }
}

namespace {

struct SampleOutcome {
    double loss = 0.0;
    int predicted = 0;
};

// Forward + backward for positions [begin, end) of `order`, accumulating into `grads`.
void accumulate_range(const Model &model, const DatasetView &data,
                      std::span<const std::size_t> order, const LossConfig &loss_config,
                      ModelGrads &grads, std::span<SampleOutcome> outcomes) {
    std::vector<ActivationCache> caches;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t idx = order[i];
        const Tensor logits = model.forward(data.input(idx), caches);
        const LossResult lr = loss(logits, data.label(idx), loss_config);
        outcomes[i] = {lr.value, argmax(logits)};
        model.backward(lr.d_logits, caches, grads);
    }
}

void add_into(ModelGrads &dst, const ModelGrads &src) {
    for (std::size_t l = 0; l < dst.size(); ++l) {
        for (std::size_t p = 0; p < dst[l].size(); ++p) {
            dst[l][p] += src[l][p];
        }
    }
}

} // namespace

EpochResult train_epoch(Model &model, const DatasetView &data, Optimizer &optimizer,
                        const LossConfig &loss_config, const TrainConfig &train_config,
                        std::uint64_t seed) {
    loss_config.validate();
    if (data.size() == 0) {
        throw std::invalid_argument("train_epoch: empty dataset");
    }
    if (train_config.batch_size == 0) {
        throw std::invalid_argument("train_epoch: batch size must be positive");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t workers =
        train_config.deterministic ? 1 : std::max<std::size_t>(1, train_config.workers);
    EpochResult result;
    double loss_sum = 0.0;
    std::vector<SampleOutcome> outcomes;
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
        const std::size_t end = std::min(order.size(), start + train_config.batch_size);
        const std::span<const std::size_t> batch(order.data() + start, end - start);
        outcomes.assign(batch.size(), {});
        ModelGrads grads = model.zero_grads();
        if (workers == 1 || batch.size() < 2) {
            accumulate_range(model, data, batch, loss_config, grads, outcomes);
        } else {
            const std::size_t n_threads = std::min(workers, batch.size());
            std::vector<ModelGrads> partial(n_threads, grads);
            std::vector<std::thread> threads;
            const std::size_t chunk = (batch.size() + n_threads - 1) / n_threads;
            for (std::size_t t = 0; t < n_threads; ++t) {
                const std::size_t b0 = std::min(batch.size(), t * chunk);
                const std::size_t b1 = std::min(batch.size(), b0 + chunk);
                threads.emplace_back([&, t, b0, b1] {
                    accumulate_range(model, data, batch.subspan(b0, b1 - b0), loss_config,
                                     partial[t],
                                     std::span<SampleOutcome>(outcomes).subspan(b0, b1 - b0));
                });
            }
            for (auto &th : threads) {
                th.join();
            }
            for (const auto &p : partial) {
                add_into(grads, p);
            }
        }
        const double scale = 1.0 / static_cast<double>(batch.size());
        for (auto &layer_grads : grads) {
            for (auto &g : layer_grads) {
                g *= scale;
            }
        }
        for (std::size_t i = 0; i < batch.size(); ++i) {
            loss_sum += outcomes[i].loss;
            result.metrics.record(data.label(batch[i]), outcomes[i].predicted);
        }
        optimizer.step(model, grads);
    }
    for (const Tensor *p : std::as_const(model).parameters()) {
        require_finite(*p, "train_epoch parameters");
    }
    result.mean_loss = loss_sum / static_cast<double>(data.size());
    result.metrics.mean_loss = result.mean_loss;
    return result;
}

Metrics evaluate(const Model &model, const DatasetView &data, const LossConfig &loss_config) {
    Metrics m;
    double loss_sum = 0.0;
    std::vector<ActivationCache> caches;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Tensor logits = model.forward(data.input(i), caches);
        loss_sum += loss(logits, data.label(i), loss_config).value;
        m.record(data.label(i), argmax(logits));
    }
    m.mean_loss = data.size() == 0 ? 0.0 : loss_sum / static_cast<double>(data.size());
    return m;
}

FitResult fit(const ModelSpec &spec, const DatasetView &train, const DatasetView &test,
              const LossConfig &loss_config, const TrainConfig &train_config,
              std::size_t epochs, std::uint64_t seed) {
    FitResult result{build_model(spec, seed), {}};
    Optimizer optimizer(result.model, train_config.adam);
    for (std::size_t e = 0; e < epochs; ++e) {
        EpochRecord rec;
        rec.train = train_epoch(result.model, train, optimizer, loss_config, train_config,
                                epoch_seed(seed, 0, e));
        rec.test = evaluate(result.model, test, loss_config);
        result.epochs.push_back(rec);
    }
    return result;
}

} // namespace qfed
