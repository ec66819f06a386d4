#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace qfed {

using Complex = std::complex<double>;

inline constexpr std::size_t max_qubits = 20;

/**
 * Amplitudes of an n-qubit register. Qubit q is bit q of the basis index, so
 * basis index 1 is the state with qubit 0 set.
 */
class StateVector {
  public:
    /// |0...0> on n_qubits qubits; throws std::out_of_range unless 1 <= n <= 20.
    explicit StateVector(std::size_t n_qubits);

    [[nodiscard]] std::size_t n_qubits() const noexcept { return n_qubits_; }
    [[nodiscard]] std::size_t dimension() const noexcept { return amps_.size(); }
    [[nodiscard]] std::span<Complex> amplitudes() noexcept { return amps_; }
    [[nodiscard]] std::span<const Complex> amplitudes() const noexcept { return amps_; }

    [[nodiscard]] double norm_squared() const noexcept;

    void rx(std::size_t target, double angle);
    void ry(std::size_t target, double angle);
    void rz(std::size_t target, double angle);
    void cnot(std::size_t control, std::size_t target);

  private:
    void check_qubit(std::size_t q) const;

    std::size_t n_qubits_;
    std::vector<Complex> amps_;
};

StateVector init_state(std::size_t n_qubits);

enum class GateKind { rx, ry, rz, cnot };

std::string to_string(GateKind kind);

/// Where a rotation gate takes its angle from.
struct AngleSource {
    enum class Kind { constant, parameter, feature };

    Kind kind = Kind::constant;
    double value = 0.0;
    std::size_t slot = 0;

    static AngleSource constant(double v) { return {Kind::constant, v, 0}; }
    static AngleSource parameter(std::size_t slot) { return {Kind::parameter, 0.0, slot}; }
    static AngleSource feature(std::size_t slot) { return {Kind::feature, 0.0, slot}; }

    friend bool operator==(const AngleSource &, const AngleSource &) = default;
};

struct Gate {
    GateKind kind = GateKind::rx;
    std::size_t target = 0;
    std::size_t control = 0;
    AngleSource angle;

    static Gate rotation(GateKind kind, std::size_t target, AngleSource angle);
    static Gate cnot(std::size_t control, std::size_t target);

    [[nodiscard]] bool is_rotation() const noexcept { return kind != GateKind::cnot; }

    friend bool operator==(const Gate &, const Gate &) = default;
};

/// Ordered gate list with declared parameter and feature slot counts.
struct CircuitSpec {
    std::size_t n_qubits = 1;
    std::vector<Gate> gates;
    std::size_t n_parameter_slots = 0;
    std::size_t n_feature_slots = 0;

    /// Throws std::invalid_argument on bad qubit indices, out-of-range or
    /// shared parameter slots, or a slot bound to a CNOT.
    void validate() const;
};

/// Values for parameter and feature slots.
struct AngleBindings {
    std::span<const double> params;
    std::span<const double> features;
};

/// Angle for `gate` under `bindings`; throws std::out_of_range if the slot is unbound.
double resolve_angle(const Gate &gate, const AngleBindings &bindings);

void apply_gate(StateVector &state, const Gate &gate, const AngleBindings &bindings);

/// <Z> on `qubit`, in [-1, 1].
double expectation_z(const StateVector &state, std::size_t qubit);

/// Final state of `spec` applied to |0...0>.
StateVector simulate(const CircuitSpec &spec, std::span<const double> params,
                     std::span<const double> features);

/// <Z_q> for every qubit after running `spec` from |0...0>.
std::vector<double> run_circuit(const CircuitSpec &spec, std::span<const double> params,
                                std::span<const double> features);

struct CircuitGradient {
    std::vector<double> d_params;
    std::vector<double> d_features;
};

/**
 * Gradient of sum_q upstream[q] * <Z_q> via the two-term shift rule
 * (E(theta + pi/2) - E(theta - pi/2)) / 2 applied to every slot-bound gate.
 * Costs two circuit runs per bound gate.
 */
CircuitGradient parameter_shift_grad(const CircuitSpec &spec, std::span<const double> params,
                                     std::span<const double> features,
                                     std::span<const double> upstream);

/**
 * Same gradient as parameter_shift_grad, computed with one forward sweep and
 * one reverse sweep over the gate list (adjoint differentiation).
 */
CircuitGradient adjoint_grad(const CircuitSpec &spec, std::span<const double> params,
                             std::span<const double> features, std::span<const double> upstream);

} // namespace qfed
