#include "qfed/dataset.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace qfed {

void Dataset::validate() const {
    if (inputs.size() != labels.size()) {
        throw std::invalid_argument("dataset: " + std::to_string(inputs.size()) + " inputs but " +
                                    std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != transplantable && labels[i] != non_transplantable) {
            throw std::invalid_argument("dataset: sample " + std::to_string(i) +
                                        " has label " + std::to_string(labels[i]));
        }
        if (i > 0 && inputs[i].shape() != inputs[0].shape()) {
            throw std::invalid_argument("dataset: sample " + std::to_string(i) +
                                        " has shape " + shape_string(inputs[i].shape()) +
                                        ", expected " + shape_string(inputs[0].shape()));
        }
    }
}

DatasetView DatasetView::all(const Dataset &d) {
    DatasetView v{&d, std::vector<std::size_t>(d.size())};
    std::iota(v.indices.begin(), v.indices.end(), std::size_t{0});
    return v;
}

std::vector<int> DatasetView::labels() const {
    std::vector<int> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out[i] = data->labels[indices[i]];
    }
    return out;
}

} // namespace qfed
