// SPDX-License-Identifier: Apache-2.0
//
// Quantized linear layers composed into a small MLP.
//
// Each layer has five quantization knobs: forward activations, forward
// weights, backward activations, backward weights, backward upstream
// gradients. The forward pass multiplies the quantized input by the
// quantized weight; the backward pass re-quantizes the cached unquantized
// operands with the backward knobs and forms grad_in = Qg * Qw^T and
// grad_w = Qa^T * Qg. Nonlinearity (ReLU) and the loss are evaluated in
// high precision; only the five matmul-adjacent quantizations are modeled.

#pragma once

#include "srlab/linalg.hpp"
#include "srlab/quant.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace srlab::net {

using linalg::Mat;

struct QuantKnob {
    quant::QuantGrid grid{};
    quant::RoundingPolicy policy{};

    bool is_identity() const noexcept {
        return policy.mode == quant::RoundMode::Identity || grid.is_identity();
    }
    static QuantKnob identity() { return {}; }
};

bool same_knob(const QuantKnob& a, const QuantKnob& b);

// The five per-layer knobs.
struct LayerQuantConfig {
    QuantKnob fwd_act, fwd_w, bwd_act, bwd_w, bwd_grad;

    static LayerQuantConfig identity() { return {}; }
    bool all_identity() const noexcept {
        return fwd_act.is_identity() && fwd_w.is_identity() && bwd_act.is_identity() &&
               bwd_w.is_identity() && bwd_grad.is_identity();
    }
};

enum class Activation { None, Relu };
enum class LossKind { Mse, SoftmaxCrossEntropy };

// n linear layers without bias; W_i has shape fan_in x fan_out, ReLU between
// layers (never after the last), loss on the final activations.
struct MlpModel {
    std::vector<Mat> weights;
    Activation activation = Activation::Relu;
    LossKind loss = LossKind::Mse;

    int n_layers() const noexcept { return static_cast<int>(weights.size()); }
    int input_dim() const { return weights.front().rows(); }
    int output_dim() const { return weights.back().cols(); }
    void validate() const;
};

struct Dataset {
    Mat inputs;   // n x d_in
    Mat targets;  // n x d_out (one-hot rows for classification)

    int size() const noexcept { return inputs.rows(); }
};

// Unquantized operands kept for the backward pass; the backward knobs
// re-quantize them independently of the forward quantization.
struct LinearCache {
    Mat a_in;
    Mat w;
};

struct ForwardOut {
    Mat a_out;
    LinearCache cache;
};

struct BackwardOut {
    Mat grad_in;
    Mat grad_w;
};

// Forward: a_out = Q(a_in) * Q(w). Thresholds are consumed from `stream`
// in operand order (a_in fully, then w), row-major within each matrix.
// When `shared_w` is given it is used as the already-quantized weight and
// the fwd_w knob draws nothing.
ForwardOut forward_linear(const Mat& a_in, const Mat& w, const LayerQuantConfig& cfg,
                          quant::ThresholdStream& stream, const Mat* shared_w = nullptr);

// Backward: quantizes a_in (bwd_act), w (bwd_w), grad_out (bwd_grad) in that
// order, then grad_in = Qg * Qw^T and grad_w = Qa^T * Qg.
BackwardOut backward_linear(const LinearCache& cache, const Mat& grad_out,
                            const LayerQuantConfig& cfg, quant::ThresholdStream& stream,
                            const Mat* shared_w = nullptr);

// Per-layer quantized weight tensors for one optimization step. With
// split_thresholds false (default) a layer whose fwd_w and bwd_w knobs agree
// is quantized once and the result shared by both passes.
struct QuantizedWeights {
    std::vector<Mat> fwd, bwd;
};
QuantizedWeights quantize_weights(const MlpModel& model, std::span<const LayerQuantConfig> cfgs,
                                  quant::ThresholdStream& stream, bool split_thresholds = false);

// Deterministic stream derivation: every quantization site gets an
// independent stream keyed by a salt. For a PRNG source the derived seed is
// seed_mix(seed, salt); for an LFSR source the derived state is
// seed_mix(state, salt) mapped onto [1, 63].
quant::ThresholdStream derive_stream(const quant::ThresholdSource& base, std::uint64_t salt);

// Streams for one sample's forward and backward passes, one per (pass,
// layer), keyed by (step, sample, layer). Any single quantization event is
// replayable from those coordinates.
class ThresholdPlan {
  public:
    ThresholdPlan(quant::ThresholdSource base, std::uint64_t step, std::uint64_t sample)
        : base_(base), step_(step), sample_(sample) {}

    std::uint64_t forward_salt(int layer) const;
    std::uint64_t backward_salt(int layer) const;
    quant::ThresholdStream forward(int layer) const { return derive_stream(base_, forward_salt(layer)); }
    quant::ThresholdStream backward(int layer) const { return derive_stream(base_, backward_salt(layer)); }

  private:
    quant::ThresholdSource base_;
    std::uint64_t step_ = 0;
    std::uint64_t sample_ = 0;
};

struct PerSampleGradient {
    std::vector<Mat> grad_w;  // shapes match model.weights
    std::uint64_t sample_id = 0;
    std::vector<std::uint64_t> fwd_seeds, bwd_seeds;  // per-layer stream salts
};

struct GradOut {
    PerSampleGradient grad;
    double loss = 0.0;
};

// Loss value and gradient w.r.t. the final activations, both in high
// precision. Losses average over rows, so a multi-row call is the mean over
// the batch.
double loss_value(const Mat& pred, const Mat& target, LossKind kind);
Mat loss_grad(const Mat& pred, const Mat& target, LossKind kind);

// Full forward and backward through all layers for one sample (or one
// matrix of samples sharing threshold draws). When `shared` is given the
// weight knobs use those tensors instead of drawing their own thresholds.
GradOut grad_approx(const MlpModel& model, const Mat& x, const Mat& y,
                    std::span<const LayerQuantConfig> cfgs, const ThresholdPlan& plan,
                    const QuantizedWeights* shared = nullptr);

// Exact full-batch loss and gradient (all-Identity knobs).
GradOut loss_and_true_grad(const MlpModel& model, const Dataset& data);

} // namespace srlab::net
