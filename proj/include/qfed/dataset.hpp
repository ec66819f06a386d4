#pragma once

#include <cstddef>
#include <vector>

#include "qfed/tensor.hpp"

namespace qfed {

/// Binary class indices used throughout.
inline constexpr int transplantable = 0;
inline constexpr int non_transplantable = 1;

/// In-memory labelled inputs.
struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<int> labels;

    [[nodiscard]] std::size_t size() const { return inputs.size(); }
    void validate() const;
};

/// A subset of a Dataset, addressed by index. Does not own the samples.
struct DatasetView {
    const Dataset *data = nullptr;
    std::vector<std::size_t> indices;

    /// View over every sample, in order.
    static DatasetView all(const Dataset &d);

    [[nodiscard]] std::size_t size() const { return indices.size(); }
    [[nodiscard]] const Tensor &input(std::size_t i) const { return data->inputs[indices[i]]; }
    [[nodiscard]] int label(std::size_t i) const { return data->labels[indices[i]]; }
    [[nodiscard]] std::vector<int> labels() const;
};

} // namespace qfed
