// SPDX-License-Identifier: Apache-2.0
//
// Quantization grids and the three rounding modes.
//
// The single primitive is threshold quantization on a uniform lattice with
// step d: a value x is floored to the lattice unless the fractional part of
// x/d reaches the threshold eps, in which case it is rounded up. Round-to-
// nearest is the special case eps = 0.5 (ties toward +inf); stochastic
// rounding draws eps fresh from [0,1) per value, which makes the quantizer
// an unbiased estimator of its input.
//
// ExMy grids (e exponent bits, m mantissa bits) apply the same rule with the
// local binade step 2^(e_x - m) and then saturate to +-max_finite. There are
// no infinity or NaN encodings; subnormals extend the smallest binade's step
// down to zero.

#pragma once

#include "srlab/mat.hpp"
#include "srlab/rng.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace srlab::quant {

class QuantGrid {
  public:
    enum class Kind { Identity, Uniform, FloatExMy };

    static QuantGrid identity() { return QuantGrid{}; }

    // step 0 degenerates to the identity grid.
    static QuantGrid uniform(double step);

    static QuantGrid ex_my(int exp_bits, int man_bits);

    Kind kind() const noexcept { return kind_; }
    double step() const noexcept { return step_; }
    int exp_bits() const noexcept { return exp_bits_; }
    int man_bits() const noexcept { return man_bits_; }
    int exp_bias() const noexcept { return exp_bias_; }
    double max_finite() const noexcept { return max_finite_; }

    bool is_identity() const noexcept {
        return kind_ == Kind::Identity || (kind_ == Kind::Uniform && step_ == 0.0);
    }

    // Lattice spacing at x: the uniform step, or the step of x's binade
    // (clamped to the subnormal/top binade at the extremes). 0 for identity.
    double local_step(double x) const;

  private:
    Kind kind_ = Kind::Identity;
    double step_ = 0.0;
    int exp_bits_ = 0;
    int man_bits_ = 0;
    int exp_bias_ = 0;
    double max_finite_ = 0.0;
};

// Where SR thresholds come from: a seeded software generator, or the 6-bit
// LFSR a hardware rounding unit would use.
struct ThresholdSource {
    enum class Kind { SeededUniform, Lfsr6 };

    Kind kind = Kind::SeededUniform;
    std::uint64_t seed = 0;  // SeededUniform
    std::uint8_t state = 1;  // Lfsr6 initial state, in [1, 63]

    static ThresholdSource prng(std::uint64_t seed) {
        return ThresholdSource{Kind::SeededUniform, seed, 1};
    }
    static ThresholdSource lfsr6(std::uint8_t initial_state);
};

enum class RoundMode { Identity, Rtn, Sr };

struct RoundingPolicy {
    RoundMode mode = RoundMode::Identity;
    ThresholdSource source{};  // consulted only when mode == Sr

    static RoundingPolicy identity() { return {RoundMode::Identity, {}}; }
    static RoundingPolicy rtn() { return {RoundMode::Rtn, {}}; }
    static RoundingPolicy sr(ThresholdSource src) { return {RoundMode::Sr, src}; }
};

// One step of the 6-bit Fibonacci LFSR, taps at bits 6 and 5
// (x^6 + x^5 + 1, maximal length: period 63 over the nonzero states).
// The emitted threshold is the current register content over 64.
struct LfsrStep {
    double eps;
    std::uint8_t next_state;
};
LfsrStep lfsr6_next(std::uint8_t state);

// Single-owner stream of thresholds in [0,1). Streams are not shareable
// mid-sequence; parallel callers derive independent streams from distinct
// seeds (rng::seed_mix).
class ThresholdStream {
  public:
    static ThresholdStream seeded_uniform(std::uint64_t seed);
    static ThresholdStream lfsr6(std::uint8_t initial_state);
    static ThresholdStream from_source(const ThresholdSource& src);

    // Next threshold in [0,1).
    double next();

    std::uint64_t draws() const noexcept { return draws_; }

  private:
    explicit ThresholdStream(std::uint64_t seed)
        : kind_(ThresholdSource::Kind::SeededUniform), prng_(seed) {}
    explicit ThresholdStream(std::uint8_t state)
        : kind_(ThresholdSource::Kind::Lfsr6), prng_(0), lfsr_state_(state) {}

    ThresholdSource::Kind kind_;
    rng::SplitMix64 prng_;
    std::uint8_t lfsr_state_ = 1;
    std::uint64_t draws_ = 0;
};

// Threshold quantization of x on the grid. eps must lie in [0,1]; x must be
// finite. Grid points are returned unchanged for every eps; otherwise the
// floor branch is taken exactly when frac(x/step) < eps. ExMy grids use the
// local binade step and saturate to +-max_finite.
double threshold_quantize(double x, const QuantGrid& grid, double eps);

// Round-to-nearest: threshold quantization at eps = 0.5, ties toward +inf.
double rtn(double x, const QuantGrid& grid);

// Stochastic rounding: one threshold drawn from the stream per call.
double sr(double x, const QuantGrid& grid, ThresholdStream& stream);

// Element-wise SR with one fresh threshold per element, consumed in
// row-major order. Element errors are reported with their (row, col).
linalg::Mat sr_matrix(const linalg::Mat& m, const QuantGrid& grid, ThresholdStream& stream);

// Applies a rounding policy to a scalar / matrix. Identity copies, Rtn is
// deterministic, Sr consumes thresholds (row-major for matrices).
double apply_policy(double x, const QuantGrid& grid, const RoundingPolicy& policy,
                    ThresholdStream& stream);
linalg::Mat quantize_matrix(const linalg::Mat& m, const QuantGrid& grid,
                            const RoundingPolicy& policy, ThresholdStream& stream);

// Variance of the two-point SR output distribution at x: p(1-p)*d^2 with
// p = frac(x/d) and d the (local) step. Zero on grid points and identity
// grids; always <= d^2/4.
double sr_error_variance(double x, const QuantGrid& grid);

// Spec strings: "u:<step>" | "fp:E<e>M<m>" | "id", and "prng:<seed>" |
// "lfsr6:<state>". parse_* throw std::invalid_argument with the offending
// token; to_string round-trips.
QuantGrid parse_grid(std::string_view text);
std::string grid_to_string(const QuantGrid& grid);
ThresholdSource parse_threshold_source(std::string_view text);
std::string source_to_string(const ThresholdSource& src);

} // namespace srlab::quant
