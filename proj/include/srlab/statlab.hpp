// SPDX-License-Identifier: Apache-2.0
//
// Monte Carlo and closed-form probes for the estimator's error structure:
// the sampling/quantization MSE split of a mini-batch gradient component,
// its scaling in batch size and mantissa bits, and the weight-quantization
// bias bound for models with certified smoothness.

#pragma once

#include "srlab/net.hpp"
#include "srlab/trainer.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace srlab::statlab {

using linalg::Mat;

// Empirical split of E[(full - quant_mini)^2] into sampling and
// quantization parts plus the cross term; one standard error per field.
// The identity total = sampling + quant + cross holds per trial by
// construction; the interesting question is whether cross is
// statistically zero.
struct MseDecomposition {
    double total = 0.0, sampling = 0.0, quant = 0.0, cross = 0.0;
    double total_se = 0.0, sampling_se = 0.0, quant_se = 0.0, cross_se = 0.0;
    long trials = 0;
};

// Decomposes the MSE of the quantized mini-batch estimate of the gradient
// component (i, j): full = (1/D) sum_k a(k,i)*aout(k,j). Per trial a batch
// of b rows is sampled (with replacement by default) and both factors are
// quantized element-wise. The sampling term reuses the same batches without
// quantization (paired estimator).
MseDecomposition mse_decompose(const Mat& a, const Mat& aout, int b,
                               const quant::QuantGrid& grid_a, const quant::QuantGrid& grid_aout,
                               long trials, std::uint64_t seed, int i = 0, int j = 0,
                               quant::RoundMode mode = quant::RoundMode::Sr,
                               bool with_replacement = true);

struct TqBoundResult {
    double measured = 0.0;
    double measured_se = 0.0;
    double bound = 0.0;
    bool within = false;  // measured <= bound * (1 + 4 * relative stderr)
};

// Measured quantization MSE term for component (i, j) at batch size b under
// SR with uniform steps, against the second-moment bound
//   (1/b) * (m2_a * d_out^2 + m2_out * d_a^2 + d_a^2 * d_out^2).
// All-zero inputs sit on every grid, so both the bound and the measured
// value collapse to zero.
TqBoundResult tq_bound_check(const Mat& a, const Mat& aout, int b, double delta_a,
                             double delta_aout, long trials, std::uint64_t seed, int i = 0,
                             int j = 0);

enum class ScalingLaw {
    InverseB,      // y ~ c / x: slope of ln y vs ln x, expected -1
    TwoPowMinus2B  // y ~ c * 4^-B: slope of log2 y vs B, expected -2 per bit
};

struct ScalingFit {
    std::vector<double> xs, ys;
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // RMS residual in the fit domain
};

// Least-squares fit in the law's log domain. Requires >= 4 strictly
// increasing xs and positive ys.
ScalingFit fit_scaling(std::span<const double> xs, std::span<const double> ys, ScalingLaw law);

struct BiasReport {
    double measured_bias = 0.0;  // ||grad L(w_hat) - grad L(w)||, worst over trials for SR
    double bound = 0.0;          // (1/2) L sqrt(d) dW for RTN, L sqrt(d) dW for SR
    double smoothness = 0.0;     // certified L for the model
    int dim = 0;
    double delta_w = 0.0;
    quant::RoundMode policy = quant::RoundMode::Rtn;
};

// Weight-quantization bias against the smoothness bound. Only single-layer
// linear least-squares models are accepted: their gradient map is
// 2/n * X^T X (. - W), whose Lipschitz constant 2*lambda_max(X^T X)/n is
// computed directly. Anything else is refused rather than reported against
// an uncertified constant.
BiasReport bias_check(const net::MlpModel& model, const net::Dataset& data, double delta_w,
                      quant::RoundMode policy, long trials, std::uint64_t seed);

// Largest eigenvalue of a symmetric matrix (cyclic Jacobi).
double max_eigenvalue_sym(const Mat& m);

struct FloorCell {
    std::string format;
    int batch_size = 0;
    double tail_mean = 0.0;  // mean grad_norm_sq over the last 25% of evals
    double tail_se = 0.0;    // standard error of that mean
    bool valid = false;
};

// Trains one run per (grid, batch size) cell and reports the tail-window
// mean of the full-precision squared gradient norm. Each cell gets a
// distinct derived seed; diverged runs are marked invalid.
std::vector<FloorCell> error_floor_probe(const net::MlpModel& model, const net::Dataset& data,
                                         std::span<const std::pair<quant::QuantGrid, int>> cells,
                                         const trainer::TrainConfig& base);

} // namespace srlab::statlab
