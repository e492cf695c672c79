// SPDX-License-Identifier: Apache-2.0

#include "srlab/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace srlab::linalg {

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() + " * " +
                                    b.shape_str());
    Mat out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < b.cols(); ++j) {
            long double acc = 0.0L;
            for (int k = 0; k < a.cols(); ++k)
                acc += static_cast<long double>(a(i, k)) * static_cast<long double>(b(k, j));
            out(i, j) = static_cast<double>(acc);
        }
    }
    return out;
}

Mat mp_matmul(const Mat& a, const Mat& b,
              const quant::QuantGrid& grid_a, const quant::RoundingPolicy& policy_a,
              const quant::QuantGrid& grid_b, const quant::RoundingPolicy& policy_b,
              quant::ThresholdStream& stream) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("mp_matmul: shape mismatch " + a.shape_str() + " * " +
                                    b.shape_str());
    const Mat qa = quant::quantize_matrix(a, grid_a, policy_a, stream);
    const Mat qb = quant::quantize_matrix(b, grid_b, policy_b, stream);
    return matmul(qa, qb);
}

double frob_norm_sq(const Mat& m) {
    long double acc = 0.0L;
    for (double v : m.data()) acc += static_cast<long double>(v) * v;
    return static_cast<double>(acc);
}

Mat add_scaled(const Mat& a, const Mat& b, double scale) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add_scaled: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    Mat out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += scale * b.data()[i];
    return out;
}

bool all_finite(const Mat& m) {
    for (double v : m.data())
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace srlab::linalg
