#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "qfed/model.hpp"

namespace qfed {

struct GradcheckResult {
    /// max over checked entries of |a - n| / max(|a|, |n|, floor)
    double max_rel_error = 0.0;
    std::string worst_entry;
    std::size_t n_checked = 0;
    double seconds = 0.0;
};

struct GradcheckConfig {
    double step = 1e-5;
    double floor = 1e-4;
    LossConfig loss{2.0};
};

/**
 * Compares the analytic gradient of loss(model(x), y) with central finite
 * differences for every parameter and input element. The model comes from
 * build_model(spec, seed); x and y are drawn from the same seed.
 */
GradcheckResult gradcheck(const ModelSpec &spec, std::uint64_t seed,
                          const GradcheckConfig &config = {});

} // namespace qfed
