// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "srlab/mat.hpp"
#include "srlab/rng.hpp"

#include <cmath>
#include <vector>

namespace testutil {

// Mean and standard error of the mean for Monte Carlo gates.
struct MeanAccum {
    double sum = 0.0, sum_sq = 0.0;
    long n = 0;

    void add(double x) {
        sum += x;
        sum_sq += x * x;
        ++n;
    }
    double mean() const { return sum / n; }
    double stderr_of_mean() const {
        const double m = mean();
        double var = (sum_sq - n * m * m) / (n - 1);
        if (var < 0.0) var = 0.0;
        return std::sqrt(var / n);
    }
};

inline srlab::linalg::Mat gaussian_mat(srlab::rng::Rng& rng, int rows, int cols,
                                       double scale = 1.0) {
    srlab::linalg::Mat m(rows, cols);
    for (double& v : m.data()) v = scale * rng.gaussian();
    return m;
}

inline double max_abs_diff(const srlab::linalg::Mat& a, const srlab::linalg::Mat& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
    return worst;
}

} // namespace testutil
