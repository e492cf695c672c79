// SPDX-License-Identifier: Apache-2.0

#include "srlab/net.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace srlab::net {

namespace {

constexpr std::uint64_t kForwardTag = 0xF0F0F0F0ull;
constexpr std::uint64_t kBackwardTag = 0xB0B0B0B0ull;

Mat relu(const Mat& m) {
    Mat out = m;
    for (double& v : out.data())
        if (v < 0.0) v = 0.0;
    return out;
}

// Mask taken from the high-precision pre-activations of the forward pass.
Mat relu_backward(const Mat& grad, const Mat& pre_act) {
    Mat out = grad;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (pre_act.data()[i] <= 0.0) out.data()[i] = 0.0;
    return out;
}

Mat softmax_rows(const Mat& z) {
    Mat p(z.rows(), z.cols());
    for (int r = 0; r < z.rows(); ++r) {
        double mx = z(r, 0);
        for (int c = 1; c < z.cols(); ++c) mx = std::max(mx, z(r, c));
        double sum = 0.0;
        for (int c = 0; c < z.cols(); ++c) {
            p(r, c) = std::exp(z(r, c) - mx);
            sum += p(r, c);
        }
        for (int c = 0; c < z.cols(); ++c) p(r, c) /= sum;
    }
    return p;
}

bool same_grid(const quant::QuantGrid& a, const quant::QuantGrid& b) {
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
        case quant::QuantGrid::Kind::Identity: return true;
        case quant::QuantGrid::Kind::Uniform: return a.step() == b.step();
        case quant::QuantGrid::Kind::FloatExMy:
            return a.exp_bits() == b.exp_bits() && a.man_bits() == b.man_bits();
    }
    return false;
}

} // namespace

bool same_knob(const QuantKnob& a, const QuantKnob& b) {
    return a.policy.mode == b.policy.mode && same_grid(a.grid, b.grid);
}

void MlpModel::validate() const {
    if (weights.empty()) throw std::invalid_argument("MlpModel: no layers");
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
        if (weights[i].cols() != weights[i + 1].rows())
            throw std::invalid_argument("MlpModel: layer " + std::to_string(i) + " output " +
                                        std::to_string(weights[i].cols()) +
                                        " does not feed layer " + std::to_string(i + 1));
    }
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (!linalg::all_finite(weights[i]))
            throw std::invalid_argument("MlpModel: non-finite weight in layer " + std::to_string(i));
}

ForwardOut forward_linear(const Mat& a_in, const Mat& w, const LayerQuantConfig& cfg,
                          quant::ThresholdStream& stream, const Mat* shared_w) {
    if (a_in.cols() != w.rows())
        throw std::invalid_argument("forward_linear: shape mismatch " + a_in.shape_str() +
                                    " * " + w.shape_str());
    const Mat qa = quant::quantize_matrix(a_in, cfg.fwd_act.grid, cfg.fwd_act.policy, stream);
    const Mat qw = shared_w ? *shared_w
                            : quant::quantize_matrix(w, cfg.fwd_w.grid, cfg.fwd_w.policy, stream);
    return ForwardOut{linalg::matmul(qa, qw), LinearCache{a_in, w}};
}

BackwardOut backward_linear(const LinearCache& cache, const Mat& grad_out,
                            const LayerQuantConfig& cfg, quant::ThresholdStream& stream,
                            const Mat* shared_w) {
    if (cache.a_in.empty() || cache.w.empty())
        throw std::invalid_argument("backward_linear: empty cache");
    if (grad_out.rows() != cache.a_in.rows() || grad_out.cols() != cache.w.cols())
        throw std::invalid_argument("backward_linear: grad_out shape " + grad_out.shape_str() +
                                    " does not match layer output");
    const Mat qa = quant::quantize_matrix(cache.a_in, cfg.bwd_act.grid, cfg.bwd_act.policy, stream);
    const Mat qw = shared_w ? *shared_w
                            : quant::quantize_matrix(cache.w, cfg.bwd_w.grid, cfg.bwd_w.policy, stream);
    const Mat qg = quant::quantize_matrix(grad_out, cfg.bwd_grad.grid, cfg.bwd_grad.policy, stream);
    return BackwardOut{linalg::matmul(qg, qw.transposed()), linalg::matmul(qa.transposed(), qg)};
}

QuantizedWeights quantize_weights(const MlpModel& model, std::span<const LayerQuantConfig> cfgs,
                                  quant::ThresholdStream& stream, bool split_thresholds) {
    if (cfgs.size() != model.weights.size())
        throw std::invalid_argument("quantize_weights: expected one config per layer");
    QuantizedWeights out;
    out.fwd.reserve(model.weights.size());
    out.bwd.reserve(model.weights.size());
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
        const auto& cfg = cfgs[i];
        if (!split_thresholds && same_knob(cfg.fwd_w, cfg.bwd_w)) {
            // One quantization, shared by both passes.
            Mat q = quant::quantize_matrix(model.weights[i], cfg.fwd_w.grid, cfg.fwd_w.policy, stream);
            out.fwd.push_back(q);
            out.bwd.push_back(std::move(q));
        } else {
            out.fwd.push_back(
                quant::quantize_matrix(model.weights[i], cfg.fwd_w.grid, cfg.fwd_w.policy, stream));
            out.bwd.push_back(
                quant::quantize_matrix(model.weights[i], cfg.bwd_w.grid, cfg.bwd_w.policy, stream));
        }
    }
    return out;
}

quant::ThresholdStream derive_stream(const quant::ThresholdSource& base, std::uint64_t salt) {
    if (base.kind == quant::ThresholdSource::Kind::Lfsr6) {
        const std::uint64_t mixed = rng::seed_mix(static_cast<std::uint64_t>(base.state), salt);
        return quant::ThresholdStream::lfsr6(static_cast<std::uint8_t>(mixed % 63u + 1u));
    }
    return quant::ThresholdStream::seeded_uniform(rng::seed_mix(base.seed, salt));
}

std::uint64_t ThresholdPlan::forward_salt(int layer) const {
    return rng::seed_mix(kForwardTag, step_, sample_, static_cast<std::uint64_t>(layer));
}

std::uint64_t ThresholdPlan::backward_salt(int layer) const {
    return rng::seed_mix(kBackwardTag, step_, sample_, static_cast<std::uint64_t>(layer));
}

double loss_value(const Mat& pred, const Mat& target, LossKind kind) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("loss_value: prediction " + pred.shape_str() +
                                    " vs target " + target.shape_str());
    const int n = pred.rows();
    if (n == 0) throw std::invalid_argument("loss_value: empty batch");
    if (kind == LossKind::Mse) {
        long double acc = 0.0L;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const long double d = pred.data()[i] - target.data()[i];
            acc += d * d;
        }
        return static_cast<double>(acc / n);
    }
    const Mat p = softmax_rows(pred);
    long double acc = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (target.data()[i] != 0.0)
            acc -= target.data()[i] * std::log(std::max(p.data()[i], 1e-300));
    }
    return static_cast<double>(acc / n);
}

Mat loss_grad(const Mat& pred, const Mat& target, LossKind kind) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("loss_grad: prediction " + pred.shape_str() + " vs target " +
                                    target.shape_str());
    const int n = pred.rows();
    if (n == 0) throw std::invalid_argument("loss_grad: empty batch");
    if (kind == LossKind::Mse) {
        Mat g(pred.rows(), pred.cols());
        for (std::size_t i = 0; i < g.size(); ++i)
            g.data()[i] = 2.0 / n * (pred.data()[i] - target.data()[i]);
        return g;
    }
    Mat g = softmax_rows(pred);
    for (std::size_t i = 0; i < g.size(); ++i)
        g.data()[i] = (g.data()[i] - target.data()[i]) / n;
    return g;
}

GradOut grad_approx(const MlpModel& model, const Mat& x, const Mat& y,
                    std::span<const LayerQuantConfig> cfgs, const ThresholdPlan& plan,
                    const QuantizedWeights* shared) {
    model.validate();
    if (cfgs.size() != model.weights.size())
        throw std::invalid_argument("grad_approx: expected one config per layer");
    if (x.cols() != model.input_dim())
        throw std::invalid_argument("grad_approx: input width " + std::to_string(x.cols()) +
                                    " does not match model input " +
                                    std::to_string(model.input_dim()));
    const int n = model.n_layers();

    GradOut out;
    out.grad.grad_w.resize(n);
    out.grad.fwd_seeds.resize(n);
    out.grad.bwd_seeds.resize(n);

    std::vector<LinearCache> caches(n);
    std::vector<Mat> pre_acts(n);
    Mat a = x;
    for (int i = 0; i < n; ++i) {
        out.grad.fwd_seeds[i] = plan.forward_salt(i);
        quant::ThresholdStream stream = plan.forward(i);
        try {
            ForwardOut fo = forward_linear(a, model.weights[i], cfgs[i], stream,
                                           shared ? &shared->fwd[i] : nullptr);
            caches[i] = std::move(fo.cache);
            pre_acts[i] = fo.a_out;
            a = (model.activation == Activation::Relu && i + 1 < n) ? relu(fo.a_out)
                                                                    : std::move(fo.a_out);
        } catch (const std::domain_error& e) {
            throw std::domain_error("layer " + std::to_string(i) + ": " + e.what());
        } catch (const std::exception& e) {
            throw std::invalid_argument("layer " + std::to_string(i) + ": " + e.what());
        }
    }

    out.loss = loss_value(a, y, model.loss);
    Mat grad_a = loss_grad(a, y, model.loss);
    for (int i = n - 1; i >= 0; --i) {
        const Mat grad_z = (model.activation == Activation::Relu && i + 1 < n)
                               ? relu_backward(grad_a, pre_acts[i])
                               : std::move(grad_a);
        out.grad.bwd_seeds[i] = plan.backward_salt(i);
        quant::ThresholdStream stream = plan.backward(i);
        try {
            BackwardOut bo = backward_linear(caches[i], grad_z, cfgs[i], stream,
                                             shared ? &shared->bwd[i] : nullptr);
            out.grad.grad_w[i] = std::move(bo.grad_w);
            grad_a = std::move(bo.grad_in);
        } catch (const std::domain_error& e) {
            throw std::domain_error("layer " + std::to_string(i) + ": " + e.what());
        } catch (const std::exception& e) {
            throw std::invalid_argument("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

GradOut loss_and_true_grad(const MlpModel& model, const Dataset& data) {
    if (data.size() == 0) throw std::invalid_argument("loss_and_true_grad: empty dataset");
    const std::vector<LayerQuantConfig> cfgs(model.weights.size(), LayerQuantConfig::identity());
    const ThresholdPlan plan(quant::ThresholdSource::prng(0), 0, 0);
    return grad_approx(model, data.inputs, data.targets, cfgs, plan);
}

} // namespace srlab::net
