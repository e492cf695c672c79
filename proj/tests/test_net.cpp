// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "srlab/net.hpp"
#include "testutil.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace srlab;
using linalg::Mat;
using net::LayerQuantConfig;
using net::MlpModel;
using net::QuantKnob;
using net::ThresholdPlan;
using quant::QuantGrid;
using quant::RoundingPolicy;
using quant::ThresholdSource;
using quant::ThresholdStream;

namespace {

const ThresholdSource kSource = ThresholdSource::prng(1);

QuantKnob rtn_knob(double step) {
    return QuantKnob{QuantGrid::uniform(step), RoundingPolicy::rtn()};
}

QuantKnob sr_knob(double step) {
    return QuantKnob{QuantGrid::uniform(step), RoundingPolicy::sr(kSource)};
}

MlpModel two_layer_model(rng::Rng& r, int d_in = 3, int hidden = 4, int d_out = 2) {
    MlpModel model;
    model.activation = net::Activation::Relu;
    model.loss = net::LossKind::Mse;
    model.weights.push_back(testutil::gaussian_mat(r, d_in, hidden, 0.7));
    model.weights.push_back(testutil::gaussian_mat(r, hidden, d_out, 0.7));
    return model;
}

std::vector<LayerQuantConfig> identity_cfgs(int n) {
    return std::vector<LayerQuantConfig>(n, LayerQuantConfig::identity());
}

double loss_at(const MlpModel& model, const Mat& x, const Mat& y) {
    const auto cfgs = identity_cfgs(model.n_layers());
    return net::grad_approx(model, x, y, cfgs, ThresholdPlan(kSource, 0, 0)).loss;
}

} // namespace

TEST_CASE("forward_linear applies the forward knobs") {
    ThresholdStream stream = ThresholdStream::seeded_uniform(1);

    // Identity knobs reproduce the exact product.
    rng::Rng r(41);
    const Mat a = testutil::gaussian_mat(r, 2, 3);
    const Mat w = testutil::gaussian_mat(r, 3, 2);
    const auto fo = net::forward_linear(a, w, LayerQuantConfig::identity(), stream);
    CHECK(fo.a_out == linalg::matmul(a, w));
    CHECK(fo.cache.a_in == a);
    CHECK(fo.cache.w == w);

    // Quantizing a weight already on the grid changes nothing.
    LayerQuantConfig w_only;
    w_only.fwd_w = rtn_knob(1.0);
    const auto fo2 = net::forward_linear(Mat{{0.7}}, Mat{{1.0}}, w_only, stream);
    CHECK(fo2.a_out(0, 0) == 0.7);

    // RTN on the activation rounds 0.7 up to 1.
    LayerQuantConfig a_only;
    a_only.fwd_act = rtn_knob(1.0);
    const auto fo3 = net::forward_linear(Mat{{0.7}}, Mat{{1.0}}, a_only, stream);
    CHECK(fo3.a_out(0, 0) == 1.0);

    CHECK_THROWS_AS(net::forward_linear(Mat(1, 3, 1.0), Mat(2, 2, 1.0),
                                        LayerQuantConfig::identity(), stream),
                    std::invalid_argument);
}

TEST_CASE("backward_linear quantizes the cached operands with the backward knobs") {
    ThresholdStream stream = ThresholdStream::seeded_uniform(2);

    LayerQuantConfig cfg;
    cfg.bwd_act = rtn_knob(1.0);
    const net::LinearCache cache{Mat{{0.7}}, Mat{{0.4}}};
    const auto bo = net::backward_linear(cache, Mat{{1.0}}, cfg, stream);
    CHECK(bo.grad_w(0, 0) == 1.0);   // Q(0.7) = 1 under RTN
    CHECK(bo.grad_in(0, 0) == 0.4);  // weight untouched by bwd_act knob

    CHECK_THROWS_AS(net::backward_linear(cache, Mat(2, 2, 1.0), cfg, stream),
                    std::invalid_argument);
}

TEST_CASE("identity backward matches the analytic least-squares gradient") {
    rng::Rng r(42);
    const Mat x = testutil::gaussian_mat(r, 8, 3);
    const Mat w = testutil::gaussian_mat(r, 3, 2);
    const Mat y = testutil::gaussian_mat(r, 8, 2);

    MlpModel model;
    model.activation = net::Activation::None;
    model.loss = net::LossKind::Mse;
    model.weights.push_back(w);

    const auto out = net::loss_and_true_grad(model, net::Dataset{x, y});
    // 2/n * X^T (XW - Y)
    const Mat resid = linalg::add_scaled(linalg::matmul(x, w), y, -1.0);
    Mat expected = linalg::matmul(x.transposed(), resid);
    for (double& v : expected.data()) v *= 2.0 / x.rows();
    CHECK(testutil::max_abs_diff(out.grad.grad_w[0], expected) < 1e-12);
}

TEST_CASE("SR backward knobs give an unbiased weight gradient") {
    const Mat a_in{{0.3, -0.45}};
    const Mat grad_out{{0.8}};
    const Mat w{{0.2}, {-0.6}};
    LayerQuantConfig cfg;
    cfg.bwd_act = sr_knob(0.5);
    cfg.bwd_grad = sr_knob(0.5);

    const Mat expected = linalg::matmul(a_in.transposed(), grad_out);
    std::vector<testutil::MeanAccum> acc(expected.size());
    ThresholdStream stream = ThresholdStream::seeded_uniform(43);
    for (int t = 0; t < 100'000; ++t) {
        const auto bo = net::backward_linear(net::LinearCache{a_in, w}, grad_out, cfg, stream);
        for (std::size_t i = 0; i < bo.grad_w.size(); ++i) acc[i].add(bo.grad_w.data()[i]);
    }
    for (std::size_t i = 0; i < acc.size(); ++i)
        CHECK(std::fabs(acc[i].mean() - expected.data()[i]) <= 4.0 * acc[i].stderr_of_mean());
}

TEST_CASE("identity grad_approx agrees with central finite differences") {
    rng::Rng r(44);
    MlpModel model = two_layer_model(r);
    const Mat x = testutil::gaussian_mat(r, 1, 3);
    const Mat y = testutil::gaussian_mat(r, 1, 2);

    const auto cfgs = identity_cfgs(2);
    const auto out = net::grad_approx(model, x, y, cfgs, ThresholdPlan(kSource, 0, 0));

    const double h = 1e-4;
    for (int probe = 0; probe < 10; ++probe) {
        const int layer = static_cast<int>(r.below(2));
        const int idx = static_cast<int>(r.below(model.weights[layer].size()));
        MlpModel plus = model, minus = model;
        plus.weights[layer].data()[idx] += h;
        minus.weights[layer].data()[idx] -= h;
        const double fd = (loss_at(plus, x, y) - loss_at(minus, x, y)) / (2.0 * h);
        const double an = out.grad.grad_w[layer].data()[idx];
        CHECK(std::fabs(fd - an) <= 1e-5 * std::max(1.0, std::fabs(an)));
    }
}

TEST_CASE("softmax cross-entropy gradients also pass finite differences") {
    rng::Rng r(45);
    MlpModel model = two_layer_model(r, 4, 5, 3);
    model.loss = net::LossKind::SoftmaxCrossEntropy;
    const Mat x = testutil::gaussian_mat(r, 1, 4);
    Mat y(1, 3);
    y(0, 1) = 1.0;

    const auto cfgs = identity_cfgs(2);
    const auto out = net::grad_approx(model, x, y, cfgs, ThresholdPlan(kSource, 0, 0));
    const double h = 1e-5;
    for (int probe = 0; probe < 10; ++probe) {
        const int layer = static_cast<int>(r.below(2));
        const int idx = static_cast<int>(r.below(model.weights[layer].size()));
        MlpModel plus = model, minus = model;
        plus.weights[layer].data()[idx] += h;
        minus.weights[layer].data()[idx] -= h;
        const double fd = (loss_at(plus, x, y) - loss_at(minus, x, y)) / (2.0 * h);
        const double an = out.grad.grad_w[layer].data()[idx];
        CHECK(std::fabs(fd - an) <= 1e-4 * std::max(1.0, std::fabs(an)));
    }
}

TEST_CASE("weight-only config equals the gradient at the quantized weights") {
    rng::Rng r(46);
    MlpModel model = two_layer_model(r);
    const Mat x = testutil::gaussian_mat(r, 4, 3);
    const Mat y = testutil::gaussian_mat(r, 4, 2);

    // Deterministic weight quantization: the plain pipeline already uses
    // identical thresholds in both passes.
    std::vector<LayerQuantConfig> cfgs(2);
    for (auto& c : cfgs) c.fwd_w = c.bwd_w = rtn_knob(0.25);
    const auto direct = net::grad_approx(model, x, y, cfgs, ThresholdPlan(kSource, 0, 0));

    MlpModel quantized = model;
    for (Mat& w : quantized.weights)
        for (double& v : w.data()) v = quant::rtn(v, QuantGrid::uniform(0.25));
    const auto reference =
        net::grad_approx(quantized, x, y, identity_cfgs(2), ThresholdPlan(kSource, 9, 9));

    REQUIRE(direct.grad.grad_w.size() == reference.grad.grad_w.size());
    for (std::size_t i = 0; i < direct.grad.grad_w.size(); ++i)
        CHECK(direct.grad.grad_w[i] == reference.grad.grad_w[i]);  // bitwise
    CHECK(direct.loss == reference.loss);
    CHECK(linalg::frob_norm_sq(reference.grad.grad_w[0]) > 0.0);  // fixture is alive
}

TEST_CASE("stochastic weight thresholds shared across passes keep the equivalence") {
    rng::Rng r(47);
    MlpModel model = two_layer_model(r);
    const Mat x = testutil::gaussian_mat(r, 4, 3);
    const Mat y = testutil::gaussian_mat(r, 4, 2);

    std::vector<LayerQuantConfig> cfgs(2);
    for (auto& c : cfgs) c.fwd_w = c.bwd_w = sr_knob(0.25);

    ThresholdStream wstream = ThresholdStream::seeded_uniform(48);
    const net::QuantizedWeights qw = net::quantize_weights(model, cfgs, wstream);
    for (int i = 0; i < 2; ++i) CHECK(qw.fwd[i] == qw.bwd[i]);  // single shared quantization

    const auto direct = net::grad_approx(model, x, y, cfgs, ThresholdPlan(kSource, 0, 0), &qw);

    MlpModel quantized = model;
    quantized.weights = qw.fwd;
    const auto reference =
        net::grad_approx(quantized, x, y, identity_cfgs(2), ThresholdPlan(kSource, 5, 5));
    for (std::size_t i = 0; i < direct.grad.grad_w.size(); ++i)
        CHECK(direct.grad.grad_w[i] == reference.grad.grad_w[i]);
    CHECK(direct.loss == reference.loss);
    CHECK(linalg::frob_norm_sq(reference.grad.grad_w[0]) > 0.0);  // fixture is alive
}

TEST_CASE("split weight thresholds draw independently for the two passes") {
    rng::Rng r(49);
    MlpModel model = two_layer_model(r);
    std::vector<LayerQuantConfig> cfgs(2);
    for (auto& c : cfgs) c.fwd_w = c.bwd_w = sr_knob(0.25);
    ThresholdStream s1 = ThresholdStream::seeded_uniform(50);
    const auto split = net::quantize_weights(model, cfgs, s1, /*split_thresholds=*/true);
    bool any_diff = false;
    for (int i = 0; i < 2; ++i) any_diff = any_diff || !(split.fwd[i] == split.bwd[i]);
    CHECK(any_diff);
}

TEST_CASE("SR mixed config is an unbiased estimator of the QAT gradient") {
    rng::Rng r(51);
    MlpModel model = two_layer_model(r);
    const Mat x = testutil::gaussian_mat(r, 4, 3);
    const Mat y = testutil::gaussian_mat(r, 4, 2);
    const double step = 0.5;

    // fwd_act high precision, everything else on the grid.
    std::vector<LayerQuantConfig> cfgs(2);
    for (auto& c : cfgs) {
        c.fwd_w = c.bwd_w = sr_knob(step);
        c.bwd_act = sr_knob(step);
        c.bwd_grad = sr_knob(step);
    }

    // One fixed shared weight quantization; the target is the exact gradient
    // of the network evaluated at those weights.
    ThresholdStream wstream = ThresholdStream::seeded_uniform(52);
    const net::QuantizedWeights qw = net::quantize_weights(model, cfgs, wstream);
    MlpModel quantized = model;
    quantized.weights = qw.fwd;
    const auto target =
        net::grad_approx(quantized, x, y, identity_cfgs(2), ThresholdPlan(kSource, 7, 7));
    REQUIRE(linalg::frob_norm_sq(target.grad.grad_w[0]) > 0.0);  // fixture is alive

    const int trials = 60'000;
    std::vector<std::vector<testutil::MeanAccum>> acc(2);
    for (int i = 0; i < 2; ++i) acc[i].resize(model.weights[i].size());
    for (int t = 0; t < trials; ++t) {
        const auto g = net::grad_approx(model, x, y, cfgs,
                                        ThresholdPlan(kSource, 1, static_cast<std::uint64_t>(t)),
                                        &qw);
        for (int i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < acc[i].size(); ++k)
                acc[i][k].add(g.grad.grad_w[i].data()[k]);
    }
    for (int i = 0; i < 2; ++i) {
        for (std::size_t k = 0; k < acc[i].size(); ++k) {
            const double want = target.grad.grad_w[i].data()[k];
            CHECK(std::fabs(acc[i][k].mean() - want) <=
                  4.0 * std::max(acc[i][k].stderr_of_mean(), 1e-15));
        }
    }
}

TEST_CASE("RTN backward is a biased estimator where SR backward is not") {
    rng::Rng r(53);
    MlpModel model = two_layer_model(r);
    const Mat x = testutil::gaussian_mat(r, 1, 3);
    const Mat y = testutil::gaussian_mat(r, 1, 2);
    const double step = 0.5;

    const auto truth =
        net::grad_approx(model, x, y, identity_cfgs(2), ThresholdPlan(kSource, 0, 0));

    // SR on the backward quantizations only: the Monte Carlo mean tracks the
    // true gradient because the forward pass stays exact.
    std::vector<LayerQuantConfig> sr_cfgs(2);
    for (auto& c : sr_cfgs) {
        c.bwd_act = sr_knob(step);
        c.bwd_grad = sr_knob(step);
    }
    const int trials = 20'000;
    std::vector<testutil::MeanAccum> acc(model.weights[0].size());
    for (int t = 0; t < trials; ++t) {
        const auto g = net::grad_approx(model, x, y, sr_cfgs,
                                        ThresholdPlan(kSource, 2, static_cast<std::uint64_t>(t)));
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k].add(g.grad.grad_w[0].data()[k]);
    }

    // Pinning every threshold at 0.5 instead gives a deterministic gradient
    // whose fixed deviation from the truth dwarfs that statistical resolution.
    std::vector<LayerQuantConfig> rtn_cfgs(2);
    for (auto& c : rtn_cfgs) {
        c.bwd_act = rtn_knob(step);
        c.bwd_grad = rtn_knob(step);
    }
    const auto rtn_g = net::grad_approx(model, x, y, rtn_cfgs, ThresholdPlan(kSource, 0, 0));
    const auto rtn_g2 = net::grad_approx(model, x, y, rtn_cfgs, ThresholdPlan(kSource, 3, 4));
    for (std::size_t i = 0; i < rtn_g.grad.grad_w.size(); ++i)
        CHECK(rtn_g.grad.grad_w[i] == rtn_g2.grad.grad_w[i]);  // threshold-independent

    bool strongly_biased = false;
    for (std::size_t k = 0; k < acc.size(); ++k) {
        const double truth_k = truth.grad.grad_w[0].data()[k];
        const double se = std::max(acc[k].stderr_of_mean(), 1e-15);
        CHECK(std::fabs(acc[k].mean() - truth_k) <= 5.0 * se);
        if (std::fabs(rtn_g.grad.grad_w[0].data()[k] - truth_k) > 10.0 * se)
            strongly_biased = true;
    }
    CHECK(strongly_biased);

    // Pinning all five knobs at 0.5 deviates at least as decisively.
    std::vector<LayerQuantConfig> rtn_all(2);
    for (auto& c : rtn_all)
        c.fwd_act = c.fwd_w = c.bwd_act = c.bwd_w = c.bwd_grad = rtn_knob(step);
    const auto rtn_all_g = net::grad_approx(model, x, y, rtn_all, ThresholdPlan(kSource, 0, 0));
    bool all_biased = false;
    for (std::size_t k = 0; k < acc.size(); ++k) {
        const double truth_k = truth.grad.grad_w[0].data()[k];
        const double se = std::max(acc[k].stderr_of_mean(), 1e-15);
        if (std::fabs(rtn_all_g.grad.grad_w[0].data()[k] - truth_k) > 10.0 * se)
            all_biased = true;
    }
    CHECK(all_biased);
}

TEST_CASE("loss_and_true_grad basics") {
    rng::Rng r(54);
    MlpModel model = two_layer_model(r);
    const Mat x = testutil::gaussian_mat(r, 1, 3);
    const Mat y = testutil::gaussian_mat(r, 1, 2);

    // Single sample: identical to identity grad_approx.
    const auto a = net::loss_and_true_grad(model, net::Dataset{x, y});
    const auto b = net::grad_approx(model, x, y, identity_cfgs(2), ThresholdPlan(kSource, 0, 0));
    CHECK(a.loss == b.loss);
    for (std::size_t i = 0; i < a.grad.grad_w.size(); ++i)
        CHECK(a.grad.grad_w[i] == b.grad.grad_w[i]);

    // Duplicating the dataset leaves the averaged gradient unchanged.
    Mat x2(2, 3), y2(2, 2);
    for (int c = 0; c < 3; ++c) x2(0, c) = x2(1, c) = x(0, c);
    for (int c = 0; c < 2; ++c) y2(0, c) = y2(1, c) = y(0, c);
    const auto doubled = net::loss_and_true_grad(model, net::Dataset{x2, y2});
    CHECK(doubled.loss == doctest::Approx(a.loss).epsilon(1e-12));
    for (std::size_t i = 0; i < a.grad.grad_w.size(); ++i)
        CHECK(testutil::max_abs_diff(doubled.grad.grad_w[i], a.grad.grad_w[i]) < 1e-12);

    CHECK_THROWS_AS(net::loss_and_true_grad(model, net::Dataset{Mat(), Mat()}),
                    std::invalid_argument);
}

TEST_CASE("layer errors carry the layer index") {
    rng::Rng r(55);
    MlpModel model = two_layer_model(r);
    const Mat x = testutil::gaussian_mat(r, 1, 3);
    const Mat y_bad = testutil::gaussian_mat(r, 1, 5);
    CHECK_THROWS_WITH_AS(net::grad_approx(model, x, y_bad, identity_cfgs(2),
                                          ThresholdPlan(kSource, 0, 0)),
                         doctest::Contains("loss"), std::invalid_argument);
    CHECK_THROWS_AS(net::grad_approx(model, x, testutil::gaussian_mat(r, 1, 2),
                                     identity_cfgs(1), ThresholdPlan(kSource, 0, 0)),
                    std::invalid_argument);
    CHECK_THROWS_WITH_AS(net::grad_approx(model, testutil::gaussian_mat(r, 1, 7),
                                          testutil::gaussian_mat(r, 1, 2), identity_cfgs(2),
                                          ThresholdPlan(kSource, 0, 0)),
                         doctest::Contains("input width"), std::invalid_argument);
}

TEST_CASE("relu masks come from the forward pre-activations") {
    // One hidden unit is pushed negative: its fan-in weights get zero grad.
    MlpModel model;
    model.activation = net::Activation::Relu;
    model.loss = net::LossKind::Mse;
    model.weights.push_back(Mat{{1.0, -1.0}});   // 1 -> 2
    model.weights.push_back(Mat{{1.0}, {1.0}});  // 2 -> 1
    const Mat x{{2.0}};  // pre-activations: (2, -2)
    const Mat y{{0.0}};
    const auto out =
        net::grad_approx(model, x, y, identity_cfgs(2), ThresholdPlan(kSource, 0, 0));
    CHECK(out.grad.grad_w[0](0, 0) != 0.0);
    CHECK(out.grad.grad_w[0](0, 1) == 0.0);  // masked by relu
    CHECK(out.grad.grad_w[1](1, 0) == 0.0);  // dead unit contributes nothing
}
