#include "qfed/qdi.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qfed {

void QdiConfig::validate() const {
    if (n_qubits < 1 || n_qubits > max_qubits) {
        throw std::invalid_argument("qdi: qubit count must be in [1, " +
                                    std::to_string(max_qubits) + "], got " +
                                    std::to_string(n_qubits));
    }
}

namespace {

void append_variational(CircuitSpec &spec, std::size_t block) {
    const std::size_t n = spec.n_qubits;
    for (std::size_t q = 0; q < n; ++q) {
        spec.gates.push_back(
            Gate::rotation(GateKind::ry, q, AngleSource::parameter(block * n + q)));
    }
    if (n > 1) {
        for (std::size_t q = 0; q < n; ++q) {
            spec.gates.push_back(Gate::cnot(q, (q + 1) % n));
        }
    }
}

} // namespace

CircuitSpec build_qdi_circuit(const QdiConfig &config) {
    config.validate();
    CircuitSpec spec;
    spec.n_qubits = config.n_qubits;
    spec.n_parameter_slots = config.n_params();
    spec.n_feature_slots = config.n_features();
    std::size_t block = 0;
    for (; block < config.n_initial_variational; ++block) {
        append_variational(spec, block);
    }
    for (std::size_t d = 0; d < config.n_reupload; ++d, ++block) {
        for (std::size_t q = 0; q < config.n_qubits; ++q) {
            spec.gates.push_back(Gate::rotation(
                GateKind::rz, q, AngleSource::feature(d * config.n_qubits + q)));
        }
        append_variational(spec, block);
    }
    spec.validate();
    return spec;
}

double encode_angle(double feature) {
    // tanh rounds to exactly 1 for |f| > ~19; keep the angle inside (-pi, pi).
    static const double limit = std::nextafter(std::numbers::pi, 0.0);
    return std::clamp(std::numbers::pi * std::tanh(feature), -limit, limit);
}

double encode_angle_derivative(double feature) {
    const double t = std::tanh(feature);
    return std::numbers::pi * (1.0 - t * t);
}

std::string to_string(QdiGradient method) {
    return method == QdiGradient::adjoint ? "adjoint" : "parameter-shift";
}

QdiGradient qdi_gradient_from_string(const std::string &name) {
    if (name == "adjoint") {
        return QdiGradient::adjoint;
    }
    if (name == "parameter-shift") {
        return QdiGradient::parameter_shift;
    }
    throw std::invalid_argument("unknown QDI gradient method '" + name +
                                "' (expected adjoint or parameter-shift)");
}

QdiCircuit::QdiCircuit(const QdiConfig &config)
    : config_(config), circuit_(build_qdi_circuit(config)) {}

void QdiCircuit::check_inputs(std::span<const double> features,
                              std::span<const double> params) const {
    if (features.size() != config_.n_features()) {
        throw std::invalid_argument("qdi: expected " + std::to_string(config_.n_features()) +
                                    " features, got " + std::to_string(features.size()));
    }
    if (params.size() != config_.n_params()) {
        throw std::invalid_argument("qdi: expected " + std::to_string(config_.n_params()) +
                                    " parameters, got " + std::to_string(params.size()));
    }
}

std::vector<double> QdiCircuit::encode(std::span<const double> features) const {
    std::vector<double> angles(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        angles[i] = encode_angle(features[i]);
    }
    return angles;
}

std::vector<double> QdiCircuit::forward(std::span<const double> features,
                                        std::span<const double> params) const {
    check_inputs(features, params);
    return run_circuit(circuit_, params, encode(features));
}

CircuitGradient QdiCircuit::backward(std::span<const double> features,
                                     std::span<const double> params,
                                     std::span<const double> upstream,
                                     QdiGradient method) const {
    check_inputs(features, params);
    const auto angles = encode(features);
    CircuitGradient g = method == QdiGradient::adjoint
                            ? adjoint_grad(circuit_, params, angles, upstream)
                            : parameter_shift_grad(circuit_, params, angles, upstream);
    for (std::size_t i = 0; i < features.size(); ++i) {
        g.d_features[i] *= encode_angle_derivative(features[i]);
    }
    return g;
}

std::vector<double> qdi_forward(const QdiConfig &config, std::span<const double> features,
                                std::span<const double> params) {
    return QdiCircuit(config).forward(features, params);
}

CircuitGradient qdi_backward(const QdiConfig &config, std::span<const double> features,
                             std::span<const double> params, std::span<const double> upstream,
                             QdiGradient method) {
    return QdiCircuit(config).backward(features, params, upstream, method);
}

// ---------------------------------------------------------------- QdiLayer

QdiLayer::QdiLayer(const QdiConfig &config, QdiGradient method)
    : qdi_(config), method_(method), params_({config.n_params() > 0 ? config.n_params() : 1}) {
    if (config.n_params() == 0) {
        throw std::invalid_argument("qdi layer: configuration has no trainable parameters");
    }
}

std::string QdiLayer::name() const {
    const auto &c = qdi_.config();
    return "qdi(" + std::to_string(c.n_features()) + "->" + std::to_string(c.n_qubits) +
           ", depth " + std::to_string(c.n_reupload) + ")";
}

Shape QdiLayer::output_shape(const Shape &input) const {
    const auto &c = qdi_.config();
    if (input != Shape{c.n_features()}) {
        throw_shape_mismatch(name(), {c.n_features()}, input);
    }
    return {c.n_qubits};
}

Tensor QdiLayer::forward(const Tensor &x, ActivationCache &cache) const {
    const Shape out_shape = output_shape(x.shape());
    auto e = qdi_.forward(x.data(), params_.data());
    cache.input = x;
    cache.ready = true;
    return Tensor(out_shape, std::move(e));
}

Tensor QdiLayer::backward(const Tensor &upstream, const ActivationCache &cache,
                          std::span<Tensor> param_grads) const {
    require_ready(name(), cache);
    const Shape out_shape = output_shape(cache.input.shape());
    if (upstream.shape() != out_shape) {
        throw_shape_mismatch(name() + " (upstream)", out_shape, upstream.shape());
    }
    if (param_grads.size() != 1 || param_grads[0].shape() != params_.shape()) {
        throw std::invalid_argument("layer " + name() + ": bad parameter gradient buffer");
    }
    const auto g = qdi_.backward(cache.input.data(), params_.data(), upstream.data(), method_);
    for (std::size_t i = 0; i < g.d_params.size(); ++i) {
        param_grads[0][i] += g.d_params[i];
    }
    return Tensor(cache.input.shape(), g.d_features);
}

void QdiLayer::init(Rng &rng) {
    std::uniform_real_distribution<double> dist(-std::numbers::pi, std::numbers::pi);
    for (auto &x : params_.data()) {
        x = dist(rng);
    }
}

} // namespace qfed
