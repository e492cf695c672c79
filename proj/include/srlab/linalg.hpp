// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "srlab/mat.hpp"
#include "srlab/quant.hpp"

namespace srlab::linalg {

// Exact product with accumulation in the widest native real type
// (long double); no intermediate rounding beyond the final store.
Mat matmul(const Mat& a, const Mat& b);

// Mixed-precision product: both operands are quantized element-wise first
// (A fully, then B, row-major, one shared threshold stream), then multiplied
// exactly. With both policies Identity this is bit-for-bit matmul(a, b).
Mat mp_matmul(const Mat& a, const Mat& b,
              const quant::QuantGrid& grid_a, const quant::RoundingPolicy& policy_a,
              const quant::QuantGrid& grid_b, const quant::RoundingPolicy& policy_b,
              quant::ThresholdStream& stream);

// Frobenius norm squared and a few small conveniences shared by the
// training and verification code.
double frob_norm_sq(const Mat& m);
Mat add_scaled(const Mat& a, const Mat& b, double scale);  // a + scale*b
bool all_finite(const Mat& m);

} // namespace srlab::linalg
