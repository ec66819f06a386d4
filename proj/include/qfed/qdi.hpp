#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qfed/layers.hpp"
#include "qfed/statevector.hpp"

namespace qfed {

/// Shape of a Quantum Depth-Infused circuit: a few variational blocks followed
/// by `n_reupload` (encoding block + variational block) pairs.
struct QdiConfig {
    std::size_t n_qubits = 5;
    std::size_t n_reupload = 20;
    std::size_t n_initial_variational = 1;

    [[nodiscard]] std::size_t n_features() const { return n_qubits * n_reupload; }
    [[nodiscard]] std::size_t n_params() const {
        return n_qubits * (n_initial_variational + n_reupload);
    }
    void validate() const;

    friend bool operator==(const QdiConfig &, const QdiConfig &) = default;
};

/// Variational block: RY(parameter) on every qubit, then a CNOT ring q -> q+1 mod n.
/// Encoding block: RZ(feature slot d * n_qubits + q) on every qubit q.
CircuitSpec build_qdi_circuit(const QdiConfig &config);

/// Encoded rotation angle for a raw feature: pi * tanh(f), always in (-pi, pi).
double encode_angle(double feature);
/// d encode_angle / d feature.
double encode_angle_derivative(double feature);

enum class QdiGradient { parameter_shift, adjoint };

std::string to_string(QdiGradient method);
QdiGradient qdi_gradient_from_string(const std::string &name);

/// The QDI circuit bound to a configuration.
class QdiCircuit {
  public:
    explicit QdiCircuit(const QdiConfig &config = {});

    [[nodiscard]] const QdiConfig &config() const { return config_; }
    [[nodiscard]] const CircuitSpec &circuit() const { return circuit_; }

    /// <Z_q> for each qubit after encoding `features` as angles pi * tanh(f).
    [[nodiscard]] std::vector<double> forward(std::span<const double> features,
                                              std::span<const double> params) const;

    /// Gradients of sum_q upstream[q] * forward(...)[q].
    [[nodiscard]] CircuitGradient backward(std::span<const double> features,
                                           std::span<const double> params,
                                           std::span<const double> upstream,
                                           QdiGradient method = QdiGradient::parameter_shift) const;

  private:
    void check_inputs(std::span<const double> features, std::span<const double> params) const;
    [[nodiscard]] std::vector<double> encode(std::span<const double> features) const;

    QdiConfig config_;
    CircuitSpec circuit_;
};

std::vector<double> qdi_forward(const QdiConfig &config, std::span<const double> features,
                                std::span<const double> params);
CircuitGradient qdi_backward(const QdiConfig &config, std::span<const double> features,
                             std::span<const double> params, std::span<const double> upstream,
                             QdiGradient method = QdiGradient::parameter_shift);

/// Network layer wrapping a QdiCircuit with its trainable rotation angles.
class QdiLayer {
  public:
    explicit QdiLayer(const QdiConfig &config = {},
                      QdiGradient method = QdiGradient::adjoint);

    static constexpr LayerKind kind = LayerKind::qdi;
    [[nodiscard]] std::string name() const;
    [[nodiscard]] const QdiCircuit &circuit() const { return qdi_; }
    [[nodiscard]] QdiGradient gradient_method() const { return method_; }
    void set_gradient_method(QdiGradient method) { method_ = method; }

    [[nodiscard]] Shape output_shape(const Shape &input) const;
    Tensor forward(const Tensor &x, ActivationCache &cache) const;
    Tensor backward(const Tensor &upstream, const ActivationCache &cache,
                    std::span<Tensor> param_grads) const;

    /// Angles uniform in [-pi, pi).
    void init(Rng &rng);
    std::vector<Tensor *> parameters() { return {&params_}; }
    [[nodiscard]] std::vector<const Tensor *> parameters() const { return {&params_}; }

  private:
    QdiCircuit qdi_;
    QdiGradient method_;
    Tensor params_;
};

} // namespace qfed
