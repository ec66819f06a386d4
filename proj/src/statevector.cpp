#include "qfed/statevector.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qfed {

StateVector::StateVector(std::size_t n_qubits) : n_qubits_(n_qubits) {
    if (n_qubits < 1 || n_qubits > max_qubits) {
        throw std::out_of_range("statevector: qubit count must be in [1, " +
                                std::to_string(max_qubits) + "], got " +
                                std::to_string(n_qubits));
    }
    amps_.assign(std::size_t{1} << n_qubits, Complex(0.0, 0.0));
    amps_[0] = 1.0;
}

StateVector init_state(std::size_t n_qubits) { return StateVector(n_qubits); }

double StateVector::norm_squared() const noexcept {
    double s = 0.0;
    for (const auto &a : amps_) {
        s += std::norm(a);
    }
    return s;
}

void StateVector::check_qubit(std::size_t q) const {
    if (q >= n_qubits_) {
        throw std::out_of_range("qubit index " + std::to_string(q) + " out of range for " +
                                std::to_string(n_qubits_) + " qubits");
    }
}

// Each single-qubit gate visits the pairs (i, i | stride) with bit `target` clear.
void StateVector::rx(std::size_t target, double angle) {
    check_qubit(target);
    const double c = std::cos(angle / 2), s = std::sin(angle / 2);
    const std::size_t stride = std::size_t{1} << target;
    for (std::size_t block = 0; block < amps_.size(); block += 2 * stride) {
        for (std::size_t i = block; i < block + stride; ++i) {
            const Complex a0 = amps_[i], a1 = amps_[i + stride];
            // [[c, -i s], [-i s, c]]
            amps_[i] = Complex(c * a0.real() + s * a1.imag(), c * a0.imag() - s * a1.real());
            amps_[i + stride] =
                Complex(c * a1.real() + s * a0.imag(), c * a1.imag() - s * a0.real());
        }
    }
}

void StateVector::ry(std::size_t target, double angle) {
    check_qubit(target);
    const double c = std::cos(angle / 2), s = std::sin(angle / 2);
    const std::size_t stride = std::size_t{1} << target;
    for (std::size_t block = 0; block < amps_.size(); block += 2 * stride) {
        for (std::size_t i = block; i < block + stride; ++i) {
            const Complex a0 = amps_[i], a1 = amps_[i + stride];
            amps_[i] = c * a0 - s * a1;
            amps_[i + stride] = s * a0 + c * a1;
        }
    }
}

void StateVector::rz(std::size_t target, double angle) {
    check_qubit(target);
    const Complex p0 = std::polar(1.0, -angle / 2), p1 = std::polar(1.0, angle / 2);
    const std::size_t stride = std::size_t{1} << target;
    for (std::size_t block = 0; block < amps_.size(); block += 2 * stride) {
        for (std::size_t i = block; i < block + stride; ++i) {
            amps_[i] *= p0;
            amps_[i + stride] *= p1;
        }
    }
}

void StateVector::cnot(std::size_t control, std::size_t target) {
    check_qubit(control);
    check_qubit(target);
    if (control == target) {
        throw std::invalid_argument("cnot: control and target must differ");
    }
    const std::size_t cmask = std::size_t{1} << control;
    const std::size_t tmask = std::size_t{1} << target;
    for (std::size_t i = 0; i < amps_.size(); ++i) {
        if ((i & cmask) != 0 && (i & tmask) == 0) {
            std::swap(amps_[i], amps_[i | tmask]);
        }
    }
}

std::string to_string(GateKind kind) {
    switch (kind) {
    case GateKind::rx:
        return "RX";
    case GateKind::ry:
        return "RY";
    case GateKind::rz:
        return "RZ";
    case GateKind::cnot:
        return "CNOT";
    }
    return "?";
}

Gate Gate::rotation(GateKind kind, std::size_t target, AngleSource angle) {
    if (kind == GateKind::cnot) {
        throw std::invalid_argument("Gate::rotation: CNOT is not a rotation");
    }
    return Gate{kind, target, 0, angle};
}

Gate Gate::cnot(std::size_t control, std::size_t target) {
    return Gate{GateKind::cnot, target, control, AngleSource::constant(0.0)};
}

void CircuitSpec::validate() const {
    if (n_qubits < 1 || n_qubits > max_qubits) {
        throw std::invalid_argument("circuit: qubit count " + std::to_string(n_qubits) +
                                    " out of range");
    }
    std::vector<bool> param_used(n_parameter_slots, false);
    for (std::size_t g = 0; g < gates.size(); ++g) {
        const Gate &gate = gates[g];
        const std::string where = "circuit gate " + std::to_string(g) + " (" +
                                  to_string(gate.kind) + ")";
        if (gate.target >= n_qubits) {
            throw std::invalid_argument(where + ": target qubit out of range");
        }
        if (gate.kind == GateKind::cnot) {
            if (gate.control >= n_qubits || gate.control == gate.target) {
                throw std::invalid_argument(where + ": invalid control qubit");
            }
            if (gate.angle.kind != AngleSource::Kind::constant) {
                throw std::invalid_argument(where + ": slot referenced by a non-rotation gate");
            }
            continue;
        }
        switch (gate.angle.kind) {
        case AngleSource::Kind::constant:
            break;
        case AngleSource::Kind::parameter:
            if (gate.angle.slot >= n_parameter_slots) {
                throw std::invalid_argument(where + ": parameter slot " +
                                            std::to_string(gate.angle.slot) +
                                            " out of range");
            }
            if (param_used[gate.angle.slot]) {
                throw std::invalid_argument(where + ": parameter slot " +
                                            std::to_string(gate.angle.slot) +
                                            " referenced more than once");
            }
            param_used[gate.angle.slot] = true;
            break;
        case AngleSource::Kind::feature:
            if (gate.angle.slot >= n_feature_slots) {
                throw std::invalid_argument(where + ": feature slot " +
                                            std::to_string(gate.angle.slot) +
                                            " out of range");
            }
            break;
        }
    }
}

double resolve_angle(const Gate &gate, const AngleBindings &bindings) {
    switch (gate.angle.kind) {
    case AngleSource::Kind::constant:
        return gate.angle.value;
    case AngleSource::Kind::parameter:
        if (gate.angle.slot >= bindings.params.size()) {
            throw std::out_of_range("no binding for parameter slot " +
                                    std::to_string(gate.angle.slot));
        }
        return bindings.params[gate.angle.slot];
    case AngleSource::Kind::feature:
        if (gate.angle.slot >= bindings.features.size()) {
            throw std::out_of_range("no binding for feature slot " +
                                    std::to_string(gate.angle.slot));
        }
        return bindings.features[gate.angle.slot];
    }
    return 0.0;
}

namespace {

void apply_with_angle(StateVector &state, const Gate &gate, double angle) {
    switch (gate.kind) {
    case GateKind::rx:
        state.rx(gate.target, angle);
        break;
    case GateKind::ry:
        state.ry(gate.target, angle);
        break;
    case GateKind::rz:
        state.rz(gate.target, angle);
        break;
    case GateKind::cnot:
        state.cnot(gate.control, gate.target);
        break;
    }
}

void check_lengths(const CircuitSpec &spec, std::span<const double> params,
                   std::span<const double> features) {
    if (params.size() != spec.n_parameter_slots) {
        throw std::invalid_argument("run_circuit: expected " +
                                    std::to_string(spec.n_parameter_slots) +
                                    " parameters, got " + std::to_string(params.size()));
    }
    if (features.size() != spec.n_feature_slots) {
        throw std::invalid_argument("run_circuit: expected " +
                                    std::to_string(spec.n_feature_slots) + " features, got " +
                                    std::to_string(features.size()));
    }
}

void check_upstream(const CircuitSpec &spec, std::span<const double> upstream) {
    if (upstream.size() != spec.n_qubits) {
        throw std::invalid_argument("circuit gradient: upstream length " +
                                    std::to_string(upstream.size()) + " != qubit count " +
                                    std::to_string(spec.n_qubits));
    }
}

std::vector<double> all_expectations(const StateVector &state) {
    std::vector<double> out(state.n_qubits());
    for (std::size_t q = 0; q < out.size(); ++q) {
        out[q] = expectation_z(state, q);
    }
    return out;
}

// sum_q w[q] <Z_q> for the circuit with gate `shifted`'s angle offset by `delta`.
double weighted_expectation(const CircuitSpec &spec, const AngleBindings &bindings,
                            std::span<const double> weights, std::size_t shifted,
                            double delta) {
    StateVector state(spec.n_qubits);
    for (std::size_t g = 0; g < spec.gates.size(); ++g) {
        const Gate &gate = spec.gates[g];
        double angle = gate.is_rotation() ? resolve_angle(gate, bindings) : 0.0;
        if (g == shifted) {
            angle += delta;
        }
        apply_with_angle(state, gate, angle);
    }
    double total = 0.0;
    for (std::size_t q = 0; q < spec.n_qubits; ++q) {
        total += weights[q] * expectation_z(state, q);
    }
    return total;
}

} // namespace

void apply_gate(StateVector &state, const Gate &gate, const AngleBindings &bindings) {
    apply_with_angle(state, gate, gate.is_rotation() ? resolve_angle(gate, bindings) : 0.0);
}

double expectation_z(const StateVector &state, std::size_t qubit) {
    if (qubit >= state.n_qubits()) {
        throw std::out_of_range("expectation_z: qubit " + std::to_string(qubit) +
                                " out of range for " + std::to_string(state.n_qubits()) +
                                " qubits");
    }
    const std::size_t mask = std::size_t{1} << qubit;
    const auto amps = state.amplitudes();
    double e = 0.0;
    for (std::size_t i = 0; i < amps.size(); ++i) {
        const double p = std::norm(amps[i]);
        e += (i & mask) ? -p : p;
    }
    return std::clamp(e, -1.0, 1.0);
}

StateVector simulate(const CircuitSpec &spec, std::span<const double> params,
                     std::span<const double> features) {
    spec.validate();
    check_lengths(spec, params, features);
    const AngleBindings bindings{params, features};
    StateVector state(spec.n_qubits);
    for (const Gate &gate : spec.gates) {
        apply_gate(state, gate, bindings);
    }
    return state;
}

std::vector<double> run_circuit(const CircuitSpec &spec, std::span<const double> params,
                                std::span<const double> features) {
    return all_expectations(simulate(spec, params, features));
}

CircuitGradient parameter_shift_grad(const CircuitSpec &spec, std::span<const double> params,
                                     std::span<const double> features,
                                     std::span<const double> upstream) {
    spec.validate();
    check_lengths(spec, params, features);
    check_upstream(spec, upstream);
    CircuitGradient grad{std::vector<double>(params.size(), 0.0),
                         std::vector<double>(features.size(), 0.0)};
    const AngleBindings bindings{params, features};
    constexpr double shift = std::numbers::pi / 2;
    for (std::size_t g = 0; g < spec.gates.size(); ++g) {
        const Gate &gate = spec.gates[g];
        if (gate.angle.kind == AngleSource::Kind::constant) {
            continue;
        }
        if (!gate.is_rotation()) {
            throw std::invalid_argument("parameter_shift_grad: slot referenced by non-rotation "
                                        "gate " +
                                        std::to_string(g));
        }
        const double plus = weighted_expectation(spec, bindings, upstream, g, shift);
        const double minus = weighted_expectation(spec, bindings, upstream, g, -shift);
        const double d = (plus - minus) / 2;
        if (gate.angle.kind == AngleSource::Kind::parameter) {
            grad.d_params[gate.angle.slot] += d;
        } else {
            grad.d_features[gate.angle.slot] += d;
        }
    }
    return grad;
}

namespace {

// Applies the Pauli generator of a rotation gate (X, Y or Z on `target`).
void apply_generator(std::span<Complex> amps, GateKind kind, std::size_t target) {
    const std::size_t stride = std::size_t{1} << target;
    for (std::size_t block = 0; block < amps.size(); block += 2 * stride) {
        for (std::size_t i = block; i < block + stride; ++i) {
            const Complex a0 = amps[i], a1 = amps[i + stride];
            switch (kind) {
            case GateKind::rx:
                amps[i] = a1;
                amps[i + stride] = a0;
                break;
            case GateKind::ry:
                amps[i] = Complex(a1.imag(), -a1.real()); // -i a1
                amps[i + stride] = Complex(-a0.imag(), a0.real()); // i a0
                break;
            case GateKind::rz:
                amps[i + stride] = -a1;
                break;
            case GateKind::cnot:
                break;
            }
        }
    }
}

} // namespace

CircuitGradient adjoint_grad(const CircuitSpec &spec, std::span<const double> params,
                             std::span<const double> features,
                             std::span<const double> upstream) {
    check_upstream(spec, upstream);
    StateVector psi = simulate(spec, params, features);
    const AngleBindings bindings{params, features};

    // lambda = H psi with H = sum_q upstream[q] Z_q
    StateVector lambda = psi;
    {
        auto amps = lambda.amplitudes();
        for (std::size_t i = 0; i < amps.size(); ++i) {
            double w = 0.0;
            for (std::size_t q = 0; q < spec.n_qubits; ++q) {
                w += (i >> q) & 1U ? -upstream[q] : upstream[q];
            }
            amps[i] *= w;
        }
    }

    CircuitGradient grad{std::vector<double>(params.size(), 0.0),
                         std::vector<double>(features.size(), 0.0)};
    std::vector<Complex> scratch(psi.dimension());
    for (std::size_t g = spec.gates.size(); g-- > 0;) {
        const Gate &gate = spec.gates[g];
        const double angle = gate.is_rotation() ? resolve_angle(gate, bindings) : 0.0;
        if (gate.is_rotation() && gate.angle.kind != AngleSource::Kind::constant) {
            // dE/dtheta = Im <lambda| P |psi> with psi taken just after the gate.
            auto src = psi.amplitudes();
            std::copy(src.begin(), src.end(), scratch.begin());
            apply_generator(scratch, gate.kind, gate.target);
            const auto lam = lambda.amplitudes();
            double im = 0.0;
            for (std::size_t i = 0; i < scratch.size(); ++i) {
                im += lam[i].real() * scratch[i].imag() - lam[i].imag() * scratch[i].real();
            }
            if (gate.angle.kind == AngleSource::Kind::parameter) {
                grad.d_params[gate.angle.slot] += im;
            } else {
                grad.d_features[gate.angle.slot] += im;
            }
        }
        // Undo the gate on both sweeps.
        apply_with_angle(psi, gate, -angle);
        apply_with_angle(lambda, gate, -angle);
    }
    return grad;
}

} // namespace qfed
