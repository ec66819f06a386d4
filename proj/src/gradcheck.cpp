#include "qfed/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace qfed {

namespace {

double loss_at(const Model &model, const Tensor &x, int y, const LossConfig &lc) {
    return loss(model.predict(x), y, lc).value;
}

} // namespace

GradcheckResult gradcheck(const ModelSpec &spec, std::uint64_t seed,
                          const GradcheckConfig &config) {
    const auto start = std::chrono::steady_clock::now();
    Model model = build_model(spec, seed);
    Rng rng(derive_seed(seed, 0x6C4B));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor x(spec.input_shape);
    for (auto &v : x.data()) {
        v = u(rng);
    }
    const int y = static_cast<int>(rng() % 2);

    std::vector<ActivationCache> caches;
    const LossResult lr = loss(model.forward(x, caches), y, config.loss);
    ModelGrads grads = model.zero_grads();
    const Tensor d_input = model.backward(lr.d_logits, caches, grads);

    GradcheckResult result;
    const double h = config.step;
    auto check = [&](double analytic, double fp, double fm, const std::string &name) {
        const double numeric = (fp - fm) / (2 * h);
        const double err = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), config.floor});
        ++result.n_checked;
        if (err > result.max_rel_error || result.worst_entry.empty()) {
            result.max_rel_error = std::max(result.max_rel_error, err);
            result.worst_entry = name;
        }
    };

    const auto names = model.parameter_names();
    auto params = model.parameters();
    std::vector<const Tensor *> flat_grads;
    for (const auto &layer : grads) {
        for (const Tensor &g : layer) {
            flat_grads.push_back(&g);
        }
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor &t = *params[p];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double t0 = t[i];
            t[i] = t0 + h;
            const double fp = loss_at(model, x, y, config.loss);
            t[i] = t0 - h;
            const double fm = loss_at(model, x, y, config.loss);
            t[i] = t0;
            check((*flat_grads[p])[i], fp, fm, names[p] + "[" + std::to_string(i) + "]");
        }
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = loss_at(model, x, y, config.loss);
        x[i] = x0 - h;
        const double fm = loss_at(model, x, y, config.loss);
        x[i] = x0;
        check(d_input[i], fp, fm, "input[" + std::to_string(i) + "]");
    }
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

} // namespace qfed
