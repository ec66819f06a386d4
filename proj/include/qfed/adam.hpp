#pragma once

#include <cstdint>

#include "qfed/tensor.hpp"

namespace qfed {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Per-parameter Adam moments. m and v always share the parameter's shape.
struct AdamState {
    std::uint64_t step = 0;
    Tensor m;
    Tensor v;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(const Shape &shape, const AdamHyper &hyper = {});
};

/// One bias-corrected Adam update of `param` in place.
void adam_step(Tensor &param, const Tensor &grad, AdamState &state);

} // namespace qfed
