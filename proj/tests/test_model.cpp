#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "qfed/checkpoint.hpp"
#include "qfed/gradcheck.hpp"
#include "qfed/io.hpp"
#include "qfed/model.hpp"

using namespace qfed;

namespace {

/// Two Gaussian blobs in the plane centred at (-sep, -sep) and (+sep, +sep).
Dataset blobs(std::size_t per_class, double sep, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Dataset d;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const int y = static_cast<int>(i % 2);
        const double c = y == 1 ? sep : -sep;
        d.inputs.push_back(Tensor::vector({c + n(rng), c + n(rng)}));
        d.labels.push_back(y);
    }
    return d;
}

/// Linearly separable points: label = [x0 + x1 > 0], margin 0.2.
Dataset separable(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Dataset d;
    while (d.size() < n) {
        const double a = u(rng), b = u(rng);
        if (std::abs(a + b) < 0.2) {
            continue;
        }
        d.inputs.push_back(Tensor::vector({a, b}));
        d.labels.push_back(a + b > 0 ? 1 : 0);
    }
    return d;
}

double model_loss(const Model &m, const Tensor &x, int y, const LossConfig &lc) {
    return loss(m.predict(x), y, lc).value;
}

} // namespace

TEST_CASE("head parameter counts over a 256-dim backbone") {
    const Model hybrid = build_model(ModelSpec::external(256, Variant::hybrid), 0);
    const Model classical = build_model(ModelSpec::external(256, Variant::classical), 0);
    CHECK(count_parameters(hybrid) == 25817);
    CHECK(count_parameters(classical) == 25902);
    CHECK(count_parameters(Model{}) == 0);
}

TEST_CASE("default small-cnn backbone produces 256 features") {
    for (auto v : {Variant::hybrid, Variant::classical}) {
        ModelSpec spec;
        spec.variant = v;
        const Model m = build_model(spec, 1);
        CHECK(m.backbone_dim() == 256);
        const Tensor logits = m.predict(Tensor::filled({1, 64, 64}, 0.5));
        CHECK(logits.shape() == Shape{2});
    }
    const Model micro = build_model(ModelSpec::micro(), 1);
    CHECK(micro.backbone_dim() == 8);
}

TEST_CASE("hybrid variant holds exactly one QDI layer between dense layers") {
    const Model h = build_model(ModelSpec::external(10, Variant::hybrid), 0);
    const auto &layers = h.layers();
    std::size_t qdi = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layer_kind(layers[i]) == LayerKind::qdi) {
            ++qdi;
            REQUIRE(i > 0);
            REQUIRE(i + 1 == layers.size() - 1);
            CHECK(std::get<Dense>(layers[i - 1]).out_features() == 100);
            CHECK(std::get<Dense>(layers[i + 1]).out_features() == 2);
        }
    }
    CHECK(qdi == 1);
    const Model c = build_model(ModelSpec::external(10, Variant::classical), 0);
    for (const auto &l : c.layers()) {
        CHECK(layer_kind(l) != LayerKind::qdi);
    }
}

TEST_CASE("loss examples") {
    const LossConfig l1{1.0}, l3{3.0};
    CHECK(loss(Tensor::vector({800, -800}), 0, LossConfig{5.0}).value == doctest::Approx(0.0));
    CHECK(loss(Tensor::vector({0.3, 0.3}), 0, l1).value == doctest::Approx(std::log(2.0)));
    CHECK(loss(Tensor::vector({0.3, 0.3}), 1, l3).value == doctest::Approx(3 * std::log(2.0)));
    const auto r = loss(Tensor::vector({-800, 800}), 0, l1);
    CHECK(r.value == doctest::Approx(-std::log(probability_floor)));
    CHECK(std::isfinite(r.value));
    CHECK_THROWS(loss(Tensor::vector({0, 0}), 0, LossConfig{0.5}));
    CHECK_THROWS(loss(Tensor::vector({0, NAN}), 0, l1));
}

TEST_CASE("property: lambda scales the non-transplantable loss exactly") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> lam(1.0, 20.0);
    for (int i = 0; i < 200; ++i) {
        const Tensor logits = Tensor::vector({n(rng), n(rng)});
        const double l = lam(rng);
        const auto a = loss(logits, non_transplantable, LossConfig{l});
        const auto b = loss(logits, non_transplantable, LossConfig{1.0});
        CHECK(a.value == l * b.value);
        const auto t = loss(logits, transplantable, LossConfig{l});
        CHECK(t.value == loss(logits, transplantable, LossConfig{1.0}).value);
    }
}

TEST_CASE("loss gradient matches finite differences") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> z{n(rng), n(rng)};
        const int y = i % 2;
        const LossConfig lc{1.0 + i % 7};
        const auto r = loss(Tensor::vector(z), y, lc);
        for (std::size_t k = 0; k < 2; ++k) {
            const double fd = oracle::central_difference(
                [&](const std::vector<double> &v) { return loss(Tensor::vector(v), y, lc).value; },
                z, k, 1e-5);
            CHECK(oracle::relative_error(r.d_logits[k], fd) < 1e-6);
        }
    }
}

TEST_CASE("metrics examples") {
    Metrics m;
    m.confusion = {{{40, 10}, {5, 45}}};
    CHECK(m.total() == 100);
    CHECK(m.accuracy() == doctest::Approx(0.85));
    CHECK(m.fn_rate() == doctest::Approx(0.1));

    Metrics perfect;
    Metrics all_tx;
    for (int i = 0; i < 10; ++i) {
        perfect.record(i % 2, i % 2);
        all_tx.record(i % 2, transplantable);
    }
    CHECK(perfect.accuracy() == 1.0);
    CHECK(perfect.fn_rate() == 0.0);
    CHECK(all_tx.accuracy() == 0.5);
    CHECK(all_tx.fn_rate() == 1.0);
}

TEST_CASE("property: adding a constant to both logits leaves predictions unchanged") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    Metrics a, b;
    for (int i = 0; i < 500; ++i) {
        const double z0 = n(rng), z1 = n(rng), c = 100 * n(rng);
        const int y = i % 2;
        a.record(y, argmax(Tensor::vector({z0, z1})));
        b.record(y, argmax(Tensor::vector({z0 + c, z1 + c})));
    }
    CHECK(a == b);
    CHECK(argmax(Tensor::vector({1.0, 1.0})) == 0);
}

TEST_CASE("end-to-end gradient of the micro hybrid model") {
    const auto r = gradcheck(ModelSpec::micro(), 3);
    MESSAGE("max relative error " << r.max_rel_error << " at " << r.worst_entry << " over "
                                  << r.n_checked << " entries");
    CHECK(r.n_checked == 1037 + 16);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("oracle: independent finite differences through the micro model") {
    const ModelSpec spec = ModelSpec::micro();
    Model m = build_model(spec, 9);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor x({1, 4, 4});
    for (auto &v : x.data()) {
        v = u(rng);
    }
    const LossConfig lc{2.0};
    std::vector<ActivationCache> caches;
    const auto lr = loss(m.forward(x, caches), non_transplantable, lc);
    ModelGrads grads = m.zero_grads();
    (void)m.backward(lr.d_logits, caches, grads);

    std::vector<double> analytic;
    for (const auto &layer : grads) {
        for (const Tensor &g : layer) {
            analytic.insert(analytic.end(), g.data().begin(), g.data().end());
        }
    }
    const auto flat = m.flat_parameters();
    REQUIRE(flat.size() == analytic.size());
    std::vector<double> numeric(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
        numeric[i] = oracle::central_difference(
            [&](const std::vector<double> &p) {
                m.set_flat_parameters(p);
                return model_loss(m, x, non_transplantable, lc);
            },
            flat, i, 1e-5);
    }
    m.set_flat_parameters(flat);
    double worst = 0.0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
        worst = std::max(worst, oracle::relative_error(analytic[i], numeric[i]));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("flat parameters round-trip and reject bad lengths") {
    Model m = build_model(ModelSpec::micro(), 2);
    auto flat = m.flat_parameters();
    CHECK(flat.size() == count_parameters(m));
    flat[0] += 1.0;
    m.set_flat_parameters(flat);
    CHECK(m.flat_parameters() == flat);
    flat.pop_back();
    CHECK_THROWS(m.set_flat_parameters(flat));
}

TEST_CASE("separable toy set reaches 100% training accuracy") {
    const Dataset d = separable(200, 1);
    TrainConfig tc;
    tc.adam.lr = 0.01;
    const auto fr = fit(ModelSpec::external(2, Variant::classical), DatasetView::all(d),
                        DatasetView::all(d), LossConfig{1.0}, tc, 30, 1);
    const Metrics m = evaluate(fr.model, DatasetView::all(d));
    CHECK(m.accuracy() == 1.0);
}

TEST_CASE("determinism: identical seeds give bitwise-identical trajectories") {
    const Dataset d = blobs(40, 0.5, 2);
    for (auto v : {Variant::classical, Variant::hybrid}) {
        const auto spec = ModelSpec::external(2, v);
        const auto a = fit(spec, DatasetView::all(d), DatasetView::all(d), {2.0}, {}, 3, 7);
        const auto b = fit(spec, DatasetView::all(d), DatasetView::all(d), {2.0}, {}, 3, 7);
        CHECK(a.model.flat_parameters() == b.model.flat_parameters());
        for (std::size_t e = 0; e < 3; ++e) {
            CHECK(a.epochs[e].test == b.epochs[e].test);
        }
    }
}

TEST_CASE("parallel accumulation matches deterministic mode up to reassociation") {
    const Dataset d = blobs(50, 0.5, 3);
    const auto spec = ModelSpec::external(2, Variant::hybrid);
    TrainConfig serial, parallel;
    parallel.deterministic = false;
    parallel.workers = 3;
    const auto a = fit(spec, DatasetView::all(d), DatasetView::all(d), {}, serial, 2, 4);
    const auto b = fit(spec, DatasetView::all(d), DatasetView::all(d), {}, parallel, 2, 4);
    const auto pa = a.model.flat_parameters(), pb = b.model.flat_parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        worst = std::max(worst, std::abs(pa[i] - pb[i]));
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("larger lambda does not increase false negatives") {
    std::vector<double> fn1, fn10;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Dataset train = blobs(150, 0.4, 100 + seed);
        const Dataset test = blobs(150, 0.4, 200 + seed);
        TrainConfig tc;
        tc.adam.lr = 0.01;
        for (double lambda : {1.0, 10.0}) {
            const auto fr = fit(ModelSpec::external(2, Variant::classical), DatasetView::all(train),
                                DatasetView::all(test), LossConfig{lambda}, tc, 20, seed);
            const auto m = evaluate(fr.model, DatasetView::all(test));
            (lambda == 1.0 ? fn1 : fn10).push_back(static_cast<double>(m.confusion[1][0]));
        }
    }
    std::sort(fn1.begin(), fn1.end());
    std::sort(fn10.begin(), fn10.end());
    MESSAGE("median FN lambda=1: " << fn1[2] << ", lambda=10: " << fn10[2]);
    CHECK(fn10[2] <= fn1[2]);
}

TEST_CASE("train_epoch rejects empty data and evaluate reports consistent metrics") {
    Model m = build_model(ModelSpec::external(2, Variant::classical), 0);
    Optimizer opt(m, {});
    const Dataset empty;
    CHECK_THROWS(train_epoch(m, DatasetView::all(empty), opt, {}, {}, 0));
    const Dataset d = blobs(10, 1.0, 1);
    const Metrics e = evaluate(m, DatasetView::all(d));
    CHECK(e.total() == 20);
    CHECK(e.accuracy() == doctest::Approx(static_cast<double>(e.confusion[0][0] + e.confusion[1][1]) / 20));
}

TEST_CASE("checkpoint round-trips bitwise") {
    for (const auto &spec : {ModelSpec::micro(), ModelSpec::external(7, Variant::classical)}) {
        const Model m = build_model(spec, 12);
        const auto bytes = encode_checkpoint(m);
        const Model back = decode_checkpoint(bytes);
        CHECK(back.spec() == m.spec());
        CHECK(back.flat_parameters() == m.flat_parameters());
        CHECK(encode_checkpoint(back) == bytes);
    }
    const auto dir = std::filesystem::temp_directory_path() / "qfed_test_ckpt";
    std::filesystem::create_directories(dir);
    const Model m = build_model(ModelSpec::micro(), 5);
    save_checkpoint(dir / "m.ckpt", m);
    CHECK(load_checkpoint(dir / "m.ckpt").flat_parameters() == m.flat_parameters());
    std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected") {
    auto bytes = encode_checkpoint(build_model(ModelSpec::micro(), 1));
    auto truncated = bytes;
    truncated.resize(bytes.size() - 8);
    CHECK_THROWS(decode_checkpoint(truncated));
    CHECK_THROWS(decode_checkpoint(std::vector<std::uint8_t>(4, 0)));
    auto bad_len = bytes;
    bad_len[0] = 0xFF;
    bad_len[7] = 0x7F;
    CHECK_THROWS(decode_checkpoint(bad_len));
}

TEST_CASE("model spec JSON round-trip") {
    ModelSpec spec = ModelSpec::micro();
    spec.variant = Variant::classical;
    spec.qdi.n_reupload = 3;
    nlohmann::json j = spec;
    CHECK(j.get<ModelSpec>() == spec);
    CHECK_THROWS(variant_from_string("quantum"));
}
