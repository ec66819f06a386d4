#include "qfed/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qfed {

std::string to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::dense:
        return "dense";
    case LayerKind::conv2d:
        return "conv2d";
    case LayerKind::relu:
        return "relu";
    case LayerKind::maxpool2d:
        return "maxpool2d";
    case LayerKind::flatten:
        return "flatten";
    case LayerKind::qdi:
        return "qdi";
    }
    return "unknown";
}

void throw_shape_mismatch(const std::string &layer, const Shape &expected, const Shape &got) {
    throw std::invalid_argument("layer " + layer + ": expected input shape " +
                                shape_string(expected) + ", got " + shape_string(got));
}

void require_ready(const std::string &layer, const ActivationCache &cache) {
    if (!cache.ready) {
        throw std::logic_error("layer " + layer + ": backward called without a prior forward");
    }
}

namespace {

void require_grad_shapes(const std::string &layer, std::span<Tensor> grads,
                         const std::vector<const Tensor *> &params) {
    if (grads.size() != params.size()) {
        throw std::invalid_argument("layer " + layer + ": expected " +
                                    std::to_string(params.size()) + " gradient buffers");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].shape() != params[i]->shape()) {
            throw_shape_mismatch(layer + " (parameter gradient)", params[i]->shape(),
                                 grads[i].shape());
        }
    }
}

void uniform_fill(Tensor &t, double bound, Rng &rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto &x : t.data()) {
        x = dist(rng);
    }
}

} // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in_features, std::size_t out_features)
    : weight_({out_features, in_features}), bias_({out_features}) {}

Dense::Dense(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (weight_.rank() != 2 || bias_.rank() != 1 || bias_.dim(0) != weight_.dim(0)) {
        throw std::invalid_argument("dense: weight must be [out, in] and bias [out], got " +
                                    shape_string(weight_.shape()) + " and " +
                                    shape_string(bias_.shape()));
    }
}

std::string Dense::name() const {
    return "dense(" + std::to_string(in_features()) + "->" + std::to_string(out_features()) +
           ")";
}

Shape Dense::output_shape(const Shape &input) const {
    if (input != Shape{in_features()}) {
        throw_shape_mismatch(name(), {in_features()}, input);
    }
    return {out_features()};
}

Tensor Dense::forward(const Tensor &x, ActivationCache &cache) const {
    (void)output_shape(x.shape());
    const std::size_t n_in = in_features();
    const std::size_t n_out = out_features();
    Tensor y({n_out});
    const double *w = weight_.data().data();
    const double *xv = x.data().data();
    for (std::size_t o = 0; o < n_out; ++o) {
        const double *row = w + o * n_in;
        double acc = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) {
            acc += row[i] * xv[i];
        }
        y[o] = acc + bias_[o];
    }
    cache.input = x;
    cache.ready = true;
    return y;
}

Tensor Dense::backward(const Tensor &upstream, const ActivationCache &cache,
                       std::span<Tensor> param_grads) const {
    require_ready(name(), cache);
    if (upstream.shape() != Shape{out_features()}) {
        throw_shape_mismatch(name() + " (upstream)", {out_features()}, upstream.shape());
    }
    require_grad_shapes(name(), param_grads, parameters());
    const std::size_t n_in = in_features();
    const std::size_t n_out = out_features();
    Tensor dx({n_in});
    const double *w = weight_.data().data();
    const double *xv = cache.input.data().data();
    double *dw = param_grads[0].data().data();
    double *dxv = dx.data().data();
    for (std::size_t o = 0; o < n_out; ++o) {
        const double u = upstream[o];
        const double *row = w + o * n_in;
        double *drow = dw + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) {
            dxv[i] += row[i] * u;
            drow[i] += u * xv[i];
        }
        param_grads[1][o] += u;
    }
    return dx;
}

void Dense::init(Rng &rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
    uniform_fill(weight_, bound, rng);
    uniform_fill(bias_, bound, rng);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel)
    : weight_({out_channels, in_channels, kernel, kernel}), bias_({out_channels}) {
    if (kernel % 2 == 0) {
        throw std::invalid_argument("conv2d: kernel size must be odd, got " +
                                    std::to_string(kernel));
    }
}

Conv2d::Conv2d(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (weight_.rank() != 4 || weight_.dim(2) != weight_.dim(3) || weight_.dim(2) % 2 == 0 ||
        bias_.rank() != 1 || bias_.dim(0) != weight_.dim(0)) {
        throw std::invalid_argument("conv2d: weight must be [out, in, k, k] with odd k and bias "
                                    "[out], got " +
                                    shape_string(weight_.shape()) + " and " +
                                    shape_string(bias_.shape()));
    }
}

std::string Conv2d::name() const {
    return "conv2d(" + std::to_string(in_channels()) + "->" + std::to_string(out_channels()) +
           ", k=" + std::to_string(kernel()) + ")";
}

Shape Conv2d::output_shape(const Shape &input) const {
    if (input.size() != 3 || input[0] != in_channels()) {
        throw_shape_mismatch(name(), {in_channels(), 0, 0}, input);
    }
    return {out_channels(), input[1], input[2]};
}

Tensor Conv2d::forward(const Tensor &x, ActivationCache &cache) const {
    const Shape out_shape = output_shape(x.shape());
    const std::size_t C = in_channels(), O = out_channels(), K = kernel();
    const std::size_t H = x.dim(1), W = x.dim(2);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
    Tensor y(out_shape);
    const double *in = x.data().data();
    const double *w = weight_.data().data();
    double *out = y.data().data();
    for (std::size_t o = 0; o < O; ++o) {
        double *plane = out + o * H * W;
        std::fill(plane, plane + H * W, bias_[o]);
        for (std::size_t c = 0; c < C; ++c) {
            const double *src = in + c * H * W;
            for (std::size_t ky = 0; ky < K; ++ky) {
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                const std::size_t y1 = dy > 0 ? H - static_cast<std::size_t>(dy) : H;
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                    const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                    const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
                    const double wv = w[((o * C + c) * K + ky) * K + kx];
                    for (std::size_t yy = y0; yy < y1; ++yy) {
                        double *dst = plane + yy * W;
                        const double *row = src + (yy + dy) * W + dx;
                        for (std::size_t xx = x0; xx < x1; ++xx) {
                            dst[xx] += wv * row[xx];
                        }
                    }
                }
            }
        }
    }
    cache.input = x;
    cache.ready = true;
    return y;
}

Tensor Conv2d::backward(const Tensor &upstream, const ActivationCache &cache,
                        std::span<Tensor> param_grads) const {
    require_ready(name(), cache);
    const Tensor &x = cache.input;
    const Shape out_shape = output_shape(x.shape());
    if (upstream.shape() != out_shape) {
        throw_shape_mismatch(name() + " (upstream)", out_shape, upstream.shape());
    }
    require_grad_shapes(name(), param_grads, parameters());
    const std::size_t C = in_channels(), O = out_channels(), K = kernel();
    const std::size_t H = x.dim(1), W = x.dim(2);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
    Tensor dx_t(x.shape());
    const double *in = x.data().data();
    const double *w = weight_.data().data();
    const double *up = upstream.data().data();
    double *dw = param_grads[0].data().data();
    double *din = dx_t.data().data();
    for (std::size_t o = 0; o < O; ++o) {
        const double *uplane = up + o * H * W;
        double bsum = 0.0;
        for (std::size_t i = 0; i < H * W; ++i) {
            bsum += uplane[i];
        }
        param_grads[1][o] += bsum;
        for (std::size_t c = 0; c < C; ++c) {
            const double *src = in + c * H * W;
            double *dsrc = din + c * H * W;
            for (std::size_t ky = 0; ky < K; ++ky) {
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                const std::size_t y1 = dy > 0 ? H - static_cast<std::size_t>(dy) : H;
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const std::ptrdiff_t dxo = static_cast<std::ptrdiff_t>(kx) - pad;
                    const std::size_t x0 = dxo < 0 ? static_cast<std::size_t>(-dxo) : 0;
                    const std::size_t x1 = dxo > 0 ? W - static_cast<std::size_t>(dxo) : W;
                    const std::size_t widx = ((o * C + c) * K + ky) * K + kx;
                    const double wv = w[widx];
                    double wsum = 0.0;
                    for (std::size_t yy = y0; yy < y1; ++yy) {
                        const double *urow = uplane + yy * W;
                        const double *row = src + (yy + dy) * W + dxo;
                        double *drow = dsrc + (yy + dy) * W + dxo;
                        for (std::size_t xx = x0; xx < x1; ++xx) {
                            wsum += urow[xx] * row[xx];
                            drow[xx] += wv * urow[xx];
                        }
                    }
                    dw[widx] += wsum;
                }
            }
        }
    }
    return dx_t;
}

void Conv2d::init(Rng &rng) {
    const double fan_in = static_cast<double>(in_channels() * kernel() * kernel());
    const double bound = 1.0 / std::sqrt(fan_in);
    uniform_fill(weight_, std::sqrt(6.0 / fan_in), rng);
    uniform_fill(bias_, bound, rng);
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor &x, ActivationCache &cache) const {
    Tensor y = x;
    for (auto &v : y.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    cache.input = x;
    cache.ready = true;
    return y;
}

Tensor Relu::backward(const Tensor &upstream, const ActivationCache &cache,
                      std::span<Tensor>) const {
    require_ready(name(), cache);
    if (upstream.shape() != cache.input.shape()) {
        throw_shape_mismatch(name() + " (upstream)", cache.input.shape(), upstream.shape());
    }
    Tensor dx = upstream;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(cache.input[i] > 0.0)) {
            dx[i] = 0.0;
        }
    }
    return dx;
}

// ---------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(std::size_t window) : window_(window) {
    if (window == 0) {
        throw std::invalid_argument("maxpool2d: window must be positive");
    }
}

std::string MaxPool2d::name() const { return "maxpool2d(" + std::to_string(window_) + ")"; }

Shape MaxPool2d::output_shape(const Shape &input) const {
    if (input.size() != 3 || input[1] < window_ || input[2] < window_) {
        throw_shape_mismatch(name(), {0, window_, window_}, input);
    }
    return {input[0], input[1] / window_, input[2] / window_};
}

Tensor MaxPool2d::forward(const Tensor &x, ActivationCache &cache) const {
    const Shape out_shape = output_shape(x.shape());
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t OH = out_shape[1], OW = out_shape[2];
    Tensor y(out_shape);
    cache.argmax.assign(y.size(), 0);
    const double *in = x.data().data();
    std::size_t out_i = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox, ++out_i) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_i = 0;
                for (std::size_t wy = 0; wy < window_; ++wy) {
                    const std::size_t base = (c * H + oy * window_ + wy) * W + ox * window_;
                    for (std::size_t wx = 0; wx < window_; ++wx) {
                        if (in[base + wx] > best) {
                            best = in[base + wx];
                            best_i = base + wx;
                        }
                    }
                }
                y[out_i] = best;
                cache.argmax[out_i] = best_i;
            }
        }
    }
    cache.input_shape = x.shape();
    cache.ready = true;
    return y;
}

Tensor MaxPool2d::backward(const Tensor &upstream, const ActivationCache &cache,
                           std::span<Tensor>) const {
    require_ready(name(), cache);
    if (upstream.size() != cache.argmax.size()) {
        throw std::invalid_argument("layer " + name() + ": upstream has " +
                                    std::to_string(upstream.size()) + " elements, expected " +
                                    std::to_string(cache.argmax.size()));
    }
    Tensor dx(cache.input_shape);
    for (std::size_t i = 0; i < upstream.size(); ++i) {
        dx[cache.argmax[i]] += upstream[i];
    }
    return dx;
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor &x, ActivationCache &cache) const {
    cache.input_shape = x.shape();
    cache.ready = true;
    return x.reshaped({x.size()});
}

Tensor Flatten::backward(const Tensor &upstream, const ActivationCache &cache,
                         std::span<Tensor>) const {
    require_ready(name(), cache);
    return upstream.reshaped(cache.input_shape);
}

} // namespace qfed
