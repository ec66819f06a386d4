#include "qfed/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace qfed {

AdamState::AdamState(const Shape &shape, const AdamHyper &hyper)
    : m(shape), v(shape), lr(hyper.lr), beta1(hyper.beta1), beta2(hyper.beta2),
      eps(hyper.eps) {}

void adam_step(Tensor &param, const Tensor &grad, AdamState &state) {
    if (grad.shape() != param.shape() || state.m.shape() != param.shape() ||
        state.v.shape() != param.shape()) {
        throw std::invalid_argument("adam_step: shape mismatch, param " +
                                    shape_string(param.shape()) + ", grad " +
                                    shape_string(grad.shape()) + ", moments " +
                                    shape_string(state.m.shape()));
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    auto p = param.data();
    auto g = grad.data();
    auto m = state.m.data();
    auto v = state.v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

} // namespace qfed
