#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qfed/rng.hpp"
#include "qfed/tensor.hpp"

namespace qfed {

enum class LayerKind { dense, conv2d, relu, maxpool2d, flatten, qdi };

std::string to_string(LayerKind kind);

/// Values saved by forward() for the matching backward() call.
struct ActivationCache {
    Tensor input;
    Shape input_shape;
    std::vector<std::size_t> argmax;
    Tensor aux;
    bool ready = false;

    void clear() { ready = false; }
};

/// Parameter gradients (same order as parameters()) plus the input gradient.
struct Gradients {
    std::vector<Tensor> params;
    Tensor input;
};

/// Fully connected layer y = W x + b, W of shape [out, in].
class Dense {
  public:
    Dense(std::size_t in_features, std::size_t out_features);
    Dense(Tensor weight, Tensor bias);

    static constexpr LayerKind kind = LayerKind::dense;
    [[nodiscard]] std::string name() const;
    [[nodiscard]] std::size_t in_features() const { return weight_.dim(1); }
    [[nodiscard]] std::size_t out_features() const { return weight_.dim(0); }

    [[nodiscard]] Shape output_shape(const Shape &input) const;
    Tensor forward(const Tensor &x, ActivationCache &cache) const;
    Tensor backward(const Tensor &upstream, const ActivationCache &cache,
                    std::span<Tensor> param_grads) const;

    void init(Rng &rng);
    std::vector<Tensor *> parameters() { return {&weight_, &bias_}; }
    [[nodiscard]] std::vector<const Tensor *> parameters() const { return {&weight_, &bias_}; }

  private:
    Tensor weight_;
    Tensor bias_;
};

/// Stride-1 "same" convolution over [C, H, W] inputs with an odd square kernel.
class Conv2d {
  public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel);
    Conv2d(Tensor weight, Tensor bias);

    static constexpr LayerKind kind = LayerKind::conv2d;
    [[nodiscard]] std::string name() const;
    [[nodiscard]] std::size_t in_channels() const { return weight_.dim(1); }
    [[nodiscard]] std::size_t out_channels() const { return weight_.dim(0); }
    [[nodiscard]] std::size_t kernel() const { return weight_.dim(2); }

    [[nodiscard]] Shape output_shape(const Shape &input) const;
    Tensor forward(const Tensor &x, ActivationCache &cache) const;
    Tensor backward(const Tensor &upstream, const ActivationCache &cache,
                    std::span<Tensor> param_grads) const;

    void init(Rng &rng);
    std::vector<Tensor *> parameters() { return {&weight_, &bias_}; }
    [[nodiscard]] std::vector<const Tensor *> parameters() const { return {&weight_, &bias_}; }

  private:
    Tensor weight_;
    Tensor bias_;
};

class Relu {
  public:
    static constexpr LayerKind kind = LayerKind::relu;
    [[nodiscard]] std::string name() const { return "relu"; }
    [[nodiscard]] Shape output_shape(const Shape &input) const { return input; }
    Tensor forward(const Tensor &x, ActivationCache &cache) const;
    Tensor backward(const Tensor &upstream, const ActivationCache &cache,
                    std::span<Tensor> param_grads) const;
    void init(Rng &) {}
    std::vector<Tensor *> parameters() { return {}; }
    [[nodiscard]] std::vector<const Tensor *> parameters() const { return {}; }
};

/// Non-overlapping max pooling (window == stride) over [C, H, W]; trailing
/// rows/columns that do not fill a window are dropped.
class MaxPool2d {
  public:
    explicit MaxPool2d(std::size_t window);

    static constexpr LayerKind kind = LayerKind::maxpool2d;
    [[nodiscard]] std::string name() const;
    [[nodiscard]] std::size_t window() const { return window_; }
    [[nodiscard]] Shape output_shape(const Shape &input) const;
    Tensor forward(const Tensor &x, ActivationCache &cache) const;
    Tensor backward(const Tensor &upstream, const ActivationCache &cache,
                    std::span<Tensor> param_grads) const;
    void init(Rng &) {}
    std::vector<Tensor *> parameters() { return {}; }
    [[nodiscard]] std::vector<const Tensor *> parameters() const { return {}; }

  private:
    std::size_t window_;
};

class Flatten {
  public:
    static constexpr LayerKind kind = LayerKind::flatten;
    [[nodiscard]] std::string name() const { return "flatten"; }
    [[nodiscard]] Shape output_shape(const Shape &input) const { return {shape_size(input)}; }
    Tensor forward(const Tensor &x, ActivationCache &cache) const;
    Tensor backward(const Tensor &upstream, const ActivationCache &cache,
                    std::span<Tensor> param_grads) const;
    void init(Rng &) {}
    std::vector<Tensor *> parameters() { return {}; }
    [[nodiscard]] std::vector<const Tensor *> parameters() const { return {}; }
};

/// Fresh zero tensors shaped like `layer`'s parameters.
template <class L> std::vector<Tensor> zero_grads(const L &layer) {
    std::vector<Tensor> grads;
    for (const Tensor *p : layer.parameters()) {
        grads.push_back(Tensor::zeros(p->shape()));
    }
    return grads;
}

/// Backward pass returning fresh parameter gradients and the input gradient.
template <class L>
Gradients backward(const L &layer, const Tensor &upstream, const ActivationCache &cache) {
    Gradients g;
    g.params = zero_grads(layer);
    g.input = layer.backward(upstream, cache, g.params);
    return g;
}

/// Error naming the layer and the mismatched shapes.
[[noreturn]] void throw_shape_mismatch(const std::string &layer, const Shape &expected,
                                       const Shape &got);
void require_ready(const std::string &layer, const ActivationCache &cache);

} // namespace qfed
