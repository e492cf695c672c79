// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch SGD with the four rounding regimes. Weight quantization
// thresholds are drawn once per step and shared across the batch;
// activation/gradient thresholds are fresh per sample. Weights stay in high
// precision between steps; quantization happens inside gradient evaluation.

#pragma once

#include "srlab/net.hpp"
#include "srlab/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace srlab::trainer {

using linalg::Mat;

enum class ModeTag { FullPrecision, RtnAll, WeightOnlyQat, SrMixedQat };

struct TrainMode {
    ModeTag tag = ModeTag::FullPrecision;
    // Threshold policy for weight quantization in the QAT modes: Sr draws a
    // fresh shared threshold set each step, Rtn fixes every eps at 0.5.
    quant::RoundMode weight_rounding = quant::RoundMode::Sr;

    static TrainMode full_precision() { return {ModeTag::FullPrecision, quant::RoundMode::Sr}; }
    static TrainMode rtn_all() { return {ModeTag::RtnAll, quant::RoundMode::Rtn}; }
    static TrainMode weight_only(quant::RoundMode wr = quant::RoundMode::Sr) {
        return {ModeTag::WeightOnlyQat, wr};
    }
    static TrainMode sr_mixed(quant::RoundMode wr = quant::RoundMode::Sr) {
        return {ModeTag::SrMixedQat, wr};
    }
};

std::string mode_to_string(const TrainMode& mode);

// Expands (mode, grid) into the five per-layer knobs:
//   FullPrecision: all Identity.
//   RtnAll:        every knob RTN on the grid (all eps pinned at 0.5).
//   WeightOnlyQat: fwd_w = bwd_w on the grid, everything else Identity.
//   SrMixedQat:    fwd_act Identity, weights on the grid, SR on
//                  bwd_act/bwd_grad.
net::LayerQuantConfig layer_config_for(const TrainMode& mode, const quant::QuantGrid& grid,
                                       std::uint64_t seed);
std::vector<net::LayerQuantConfig> layer_configs_for(const TrainMode& mode,
                                                     const quant::QuantGrid& grid,
                                                     std::uint64_t seed, int n_layers);

struct TrainConfig {
    TrainMode mode{};
    quant::QuantGrid grid{};
    int batch_size = 1;
    double learning_rate = 0.01;
    int steps = 100;
    std::uint64_t seed = 0;
    int eval_every = 10;
    bool split_weight_thresholds = false;
    double smoothness_hint = 0.0;  // L estimate when one exists; 0 = unknown

    void validate() const;
    std::string fingerprint() const;  // stable hex digest of the cell config
};

// True when a smoothness estimate exists and the learning rate exceeds
// 1/(4*L). Flagged, not enforced.
bool learning_rate_flagged(const TrainConfig& cfg);

struct GradientEstimate {
    std::vector<Mat> per_layer;
    ModeTag mode = ModeTag::FullPrecision;
    int batch_size = 0;
    std::uint64_t seed = 0;
    double minibatch_loss = 0.0;
    // The shared quantized weight tensors every sample in the batch saw.
    net::QuantizedWeights shared_weights;

    std::vector<double> flatten() const;
    bool finite() const;
};

// Indices drawn i.i.d. with replacement.
std::vector<int> sample_batch(rng::Rng& rng, int dataset_size, int batch_size);

// G = (1/b) sum_j g(w, x_j, y_j); the weight thresholds are drawn once from
// (seed, step) and shared across the batch, activation/gradient thresholds
// are keyed by (seed, step, batch position).
GradientEstimate minibatch_gradient(const net::MlpModel& model, const net::Dataset& data,
                                    std::span<const int> batch, const TrainConfig& cfg,
                                    std::uint64_t step);

// w -= lr * g, element-wise. Throws on non-finite gradients.
void sgd_step(std::vector<Mat>& weights, const GradientEstimate& g, double learning_rate);

struct RunRecord {
    int step = 0;
    double train_loss = 0.0;    // full-precision loss over the whole dataset
    double grad_norm_sq = 0.0;  // ||grad L(w_t)||^2, full precision, whole dataset
    double wallclock_sec = 0.0;
    std::string fingerprint;
    bool diverged = false;
};

// Runs cfg.steps SGD steps, evaluating the full-precision loss and squared
// gradient norm every eval_every steps (plus once at step 0). Fully
// deterministic given cfg.seed. A non-finite minibatch loss or gradient
// truncates the run with a record marked diverged.
std::vector<RunRecord> train(net::MlpModel model, const net::Dataset& data,
                             const TrainConfig& cfg);

// Mean grad_norm_sq over the last quarter of evaluation records.
double tail_mean_grad_norm_sq(std::span<const RunRecord> records);

} // namespace srlab::trainer
