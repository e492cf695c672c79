// SPDX-License-Identifier: Apache-2.0

#include "srlab/trainer.hpp"
#include "srlab/text.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace srlab::trainer {

namespace {

constexpr std::uint64_t kWeightTag = 0x3E16A7ull;
constexpr std::uint64_t kBatchTag = 0xBA7C4ull;

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

} // namespace

std::string mode_to_string(const TrainMode& mode) {
    switch (mode.tag) {
        case ModeTag::FullPrecision: return "full_precision";
        case ModeTag::RtnAll: return "rtn_all";
        case ModeTag::WeightOnlyQat:
            return mode.weight_rounding == quant::RoundMode::Rtn ? "weight_only_rtn"
                                                                 : "weight_only";
        case ModeTag::SrMixedQat:
            return mode.weight_rounding == quant::RoundMode::Rtn ? "sr_mixed_rtnw" : "sr_mixed";
    }
    return "unknown";
}

net::LayerQuantConfig layer_config_for(const TrainMode& mode, const quant::QuantGrid& grid,
                                       std::uint64_t seed) {
    using quant::RoundingPolicy;
    using quant::ThresholdSource;
    net::LayerQuantConfig cfg;  // all Identity
    const auto source = ThresholdSource::prng(seed);
    const RoundingPolicy weight_policy = mode.weight_rounding == quant::RoundMode::Rtn
                                             ? RoundingPolicy::rtn()
                                             : RoundingPolicy::sr(source);
    switch (mode.tag) {
        case ModeTag::FullPrecision:
            break;
        case ModeTag::RtnAll:
            cfg.fwd_act = cfg.fwd_w = cfg.bwd_act = cfg.bwd_w = cfg.bwd_grad =
                net::QuantKnob{grid, RoundingPolicy::rtn()};
            break;
        case ModeTag::WeightOnlyQat:
            cfg.fwd_w = cfg.bwd_w = net::QuantKnob{grid, weight_policy};
            break;
        case ModeTag::SrMixedQat:
            cfg.fwd_w = cfg.bwd_w = net::QuantKnob{grid, weight_policy};
            cfg.bwd_act = cfg.bwd_grad = net::QuantKnob{grid, RoundingPolicy::sr(source)};
            break;
    }
    return cfg;
}

std::vector<net::LayerQuantConfig> layer_configs_for(const TrainMode& mode,
                                                     const quant::QuantGrid& grid,
                                                     std::uint64_t seed, int n_layers) {
    return std::vector<net::LayerQuantConfig>(static_cast<std::size_t>(n_layers),
                                              layer_config_for(mode, grid, seed));
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
}

std::string TrainConfig::fingerprint() const {
    std::uint64_t h = rng::seed_mix(
        0xC0FFEEull, static_cast<std::uint64_t>(mode.tag),
        static_cast<std::uint64_t>(mode.weight_rounding),
        std::hash<std::string>{}(quant::grid_to_string(grid)),
        static_cast<std::uint64_t>(batch_size), std::bit_cast<std::uint64_t>(learning_rate),
        static_cast<std::uint64_t>(steps), seed, static_cast<std::uint64_t>(eval_every),
        static_cast<std::uint64_t>(split_weight_thresholds));
    return hex64(h);
}

bool learning_rate_flagged(const TrainConfig& cfg) {
    return cfg.smoothness_hint > 0.0 && cfg.learning_rate > 1.0 / (4.0 * cfg.smoothness_hint);
}

std::vector<double> GradientEstimate::flatten() const {
    std::vector<double> out;
    std::size_t total = 0;
    for (const Mat& m : per_layer) total += m.size();
    out.reserve(total);
    for (const Mat& m : per_layer) out.insert(out.end(), m.data().begin(), m.data().end());
    return out;
}

bool GradientEstimate::finite() const {
    if (!std::isfinite(minibatch_loss)) return false;
    for (const Mat& m : per_layer)
        if (!linalg::all_finite(m)) return false;
    return true;
}

std::vector<int> sample_batch(rng::Rng& rng, int dataset_size, int batch_size) {
    if (dataset_size < 1) throw std::invalid_argument("sample_batch: empty dataset");
    std::vector<int> out(static_cast<std::size_t>(batch_size));
    for (int& idx : out) idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(dataset_size)));
    return out;
}

GradientEstimate minibatch_gradient(const net::MlpModel& model, const net::Dataset& data,
                                    std::span<const int> batch, const TrainConfig& cfg,
                                    std::uint64_t step) {
    if (batch.empty()) throw std::invalid_argument("minibatch_gradient: empty batch");
    const int n_layers = model.n_layers();
    const auto cfgs = layer_configs_for(cfg.mode, cfg.grid, cfg.seed, n_layers);
    const auto base_source = quant::ThresholdSource::prng(cfg.seed);

    // One shared weight quantization per step.
    quant::ThresholdStream weight_stream =
        net::derive_stream(base_source, rng::seed_mix(kWeightTag, step));
    const net::QuantizedWeights qw =
        net::quantize_weights(model, cfgs, weight_stream, cfg.split_weight_thresholds);

    GradientEstimate est;
    est.mode = cfg.mode.tag;
    est.batch_size = static_cast<int>(batch.size());
    est.seed = cfg.seed;
    est.shared_weights = qw;
    est.per_layer.reserve(n_layers);
    for (const Mat& w : model.weights) est.per_layer.emplace_back(w.rows(), w.cols());

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss_acc = 0.0;
    for (std::size_t pos = 0; pos < batch.size(); ++pos) {
        const int idx = batch[pos];
        if (idx < 0 || idx >= data.size())
            throw std::invalid_argument("minibatch_gradient: sample index out of range");
        // Activation/gradient thresholds are keyed by batch position so that
        // repeated samples still get independent draws.
        const net::ThresholdPlan plan(base_source, step, pos);
        net::GradOut g = net::grad_approx(model, data.inputs.row(idx), data.targets.row(idx),
                                          cfgs, plan, &qw);
        loss_acc += g.loss;
        for (int i = 0; i < n_layers; ++i)
            for (std::size_t k = 0; k < est.per_layer[i].size(); ++k)
                est.per_layer[i].data()[k] += inv_b * g.grad.grad_w[i].data()[k];
    }
    est.minibatch_loss = loss_acc * inv_b;
    return est;
}

void sgd_step(std::vector<Mat>& weights, const GradientEstimate& g, double learning_rate) {
    if (weights.size() != g.per_layer.size())
        throw std::invalid_argument("sgd_step: layer count mismatch");
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!weights[i].same_shape(g.per_layer[i]))
            throw std::invalid_argument("sgd_step: shape mismatch in layer " + std::to_string(i));
        if (!linalg::all_finite(g.per_layer[i]))
            throw std::runtime_error("sgd_step: non-finite gradient in layer " +
                                     std::to_string(i));
    }
    for (std::size_t i = 0; i < weights.size(); ++i)
        for (std::size_t k = 0; k < weights[i].size(); ++k)
            weights[i].data()[k] -= learning_rate * g.per_layer[i].data()[k];
}

std::vector<RunRecord> train(net::MlpModel model, const net::Dataset& data,
                             const TrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    if (learning_rate_flagged(cfg))
        std::fprintf(stderr, "train: learning rate %g exceeds 1/(4L) for L estimate %g\n",
                     cfg.learning_rate, cfg.smoothness_hint);

    const std::string fp = cfg.fingerprint();
    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const auto eval_record = [&](int step) {
        const net::GradOut full = net::loss_and_true_grad(model, data);
        double norm_sq = 0.0;
        for (const Mat& gw : full.grad.grad_w) norm_sq += linalg::frob_norm_sq(gw);
        return RunRecord{step, full.loss, norm_sq, elapsed(), fp, false};
    };

    std::vector<RunRecord> records;
    records.push_back(eval_record(0));

    for (int t = 0; t < cfg.steps; ++t) {
        rng::Rng batch_rng(rng::seed_mix(kBatchTag, cfg.seed, static_cast<std::uint64_t>(t)));
        const std::vector<int> batch = sample_batch(batch_rng, data.size(), cfg.batch_size);
        GradientEstimate g;
        try {
            g = minibatch_gradient(model, data, batch, cfg, static_cast<std::uint64_t>(t));
        } catch (const std::domain_error&) {
            // Non-finite values reached a quantizer: the run has diverged.
            records.push_back(RunRecord{t, std::numeric_limits<double>::quiet_NaN(),
                                        std::numeric_limits<double>::quiet_NaN(), elapsed(), fp,
                                        true});
            break;
        }
        if (!g.finite()) {
            records.push_back(RunRecord{t, g.minibatch_loss,
                                        std::numeric_limits<double>::quiet_NaN(), elapsed(), fp,
                                        true});
            break;
        }
        sgd_step(model.weights, g, cfg.learning_rate);
        if ((t + 1) % cfg.eval_every == 0) {
            bool weights_ok = true;
            for (const Mat& w : model.weights) weights_ok = weights_ok && linalg::all_finite(w);
            if (!weights_ok) {
                records.push_back(RunRecord{t + 1, std::numeric_limits<double>::quiet_NaN(),
                                            std::numeric_limits<double>::quiet_NaN(), elapsed(),
                                            fp, true});
                break;
            }
            records.push_back(eval_record(t + 1));
            if (!std::isfinite(records.back().train_loss)) {
                records.back().diverged = true;
                break;
            }
        }
    }
    return records;
}

double tail_mean_grad_norm_sq(std::span<const RunRecord> records) {
    std::vector<double> vals;
    for (const RunRecord& r : records)
        if (!r.diverged) vals.push_back(r.grad_norm_sq);
    if (vals.empty()) throw std::invalid_argument("tail_mean_grad_norm_sq: no valid records");
    const std::size_t tail = std::max<std::size_t>(1, vals.size() / 4);
    double acc = 0.0;
    for (std::size_t i = vals.size() - tail; i < vals.size(); ++i) acc += vals[i];
    return acc / static_cast<double>(tail);
}

} // namespace srlab::trainer
