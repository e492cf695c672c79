// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "srlab/linalg.hpp"
#include "testutil.hpp"

#include <cmath>
#include <stdexcept>

using namespace srlab;
using linalg::Mat;
using quant::QuantGrid;
using quant::RoundingPolicy;
using quant::ThresholdSource;
using quant::ThresholdStream;

TEST_CASE("matmul basics") {
    Mat id{{1.0, 0.0}, {0.0, 1.0}};
    Mat b{{3.0, -1.0}, {2.0, 5.0}};
    CHECK(linalg::matmul(id, b) == b);

    Mat a{{1.0, 2.0}, {3.0, 4.0}};
    Mat ones{{1.0}, {1.0}};
    const Mat prod = linalg::matmul(a, ones);
    CHECK(prod.rows() == 2);
    CHECK(prod.cols() == 1);
    CHECK(prod(0, 0) == 3.0);
    CHECK(prod(1, 0) == 7.0);

    Mat zero(2, 3, 0.0);
    const Mat az = linalg::matmul(a, Mat(2, 3, 0.0));
    for (double v : az.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(linalg::matmul(a, Mat(3, 2, 1.0)), std::invalid_argument);
}

TEST_CASE("mp_matmul with identity policies is exact") {
    rng::Rng r(31);
    const Mat a = testutil::gaussian_mat(r, 4, 6);
    const Mat b = testutil::gaussian_mat(r, 6, 3);
    ThresholdStream stream = ThresholdStream::seeded_uniform(1);
    const Mat exact = linalg::matmul(a, b);
    const Mat mp = linalg::mp_matmul(a, b, QuantGrid::identity(), RoundingPolicy::identity(),
                                     QuantGrid::identity(), RoundingPolicy::identity(), stream);
    CHECK(mp == exact);
    CHECK(stream.draws() == 0);
}

TEST_CASE("mp_matmul quantizes operands before multiplying") {
    // Both 0.5 entries tie up to 1 under RTN, so the product is 1.
    Mat a{{0.5}};
    Mat b{{0.5}};
    ThresholdStream stream = ThresholdStream::seeded_uniform(1);
    const QuantGrid unit = QuantGrid::uniform(1.0);
    const Mat out = linalg::mp_matmul(a, b, unit, RoundingPolicy::rtn(), unit,
                                      RoundingPolicy::rtn(), stream);
    CHECK(out(0, 0) == 1.0);
}

TEST_CASE("mp_matmul with SR on one operand is unbiased") {
    Mat a{{0.7}};
    Mat b{{1.0}};
    const QuantGrid unit = QuantGrid::uniform(1.0);
    ThresholdStream stream = ThresholdStream::seeded_uniform(32);
    testutil::MeanAccum acc;
    for (int t = 0; t < 1'000'000; ++t) {
        const Mat out = linalg::mp_matmul(a, b, unit, RoundingPolicy::sr(ThresholdSource::prng(0)),
                                          unit, RoundingPolicy::identity(), stream);
        acc.add(out(0, 0));
    }
    CHECK(std::fabs(acc.mean() - 0.7) <= 4.0 * acc.stderr_of_mean());
}

TEST_CASE("mp_matmul on pre-quantized inputs equals matmul") {
    rng::Rng r(33);
    const QuantGrid grid = QuantGrid::uniform(0.25);
    Mat a = testutil::gaussian_mat(r, 3, 4);
    Mat b = testutil::gaussian_mat(r, 4, 2);
    for (double& v : a.data()) v = quant::rtn(v, grid);
    for (double& v : b.data()) v = quant::rtn(v, grid);
    ThresholdStream stream = ThresholdStream::seeded_uniform(34);
    const Mat mp = linalg::mp_matmul(a, b, grid, RoundingPolicy::sr(ThresholdSource::prng(0)),
                                     grid, RoundingPolicy::sr(ThresholdSource::prng(0)), stream);
    CHECK(mp == linalg::matmul(a, b));
}

TEST_CASE("mp_matmul SR is entry-wise unbiased on random matrices") {
    rng::Rng r(35);
    const QuantGrid grid = QuantGrid::uniform(0.5);
    const Mat a = testutil::gaussian_mat(r, 2, 3);
    const Mat b = testutil::gaussian_mat(r, 3, 2);
    const Mat exact = linalg::matmul(a, b);
    ThresholdStream stream = ThresholdStream::seeded_uniform(36);
    const RoundingPolicy sr_policy = RoundingPolicy::sr(ThresholdSource::prng(0));

    const int trials = 200'000;
    std::vector<testutil::MeanAccum> acc(exact.size());
    for (int t = 0; t < trials; ++t) {
        const Mat out = linalg::mp_matmul(a, b, grid, sr_policy, grid, sr_policy, stream);
        for (std::size_t i = 0; i < out.size(); ++i) acc[i].add(out.data()[i]);
    }
    for (std::size_t i = 0; i < acc.size(); ++i)
        CHECK(std::fabs(acc[i].mean() - exact.data()[i]) <= 4.0 * acc[i].stderr_of_mean());
}

TEST_CASE("rtn mp_matmul error respects the worst-case expansion") {
    // |XY - Qx Qy| <= |X| dB/2 + |Y| dA/2 + dA dB / 4 summed over k.
    rng::Rng r(37);
    const double da = 0.25, db = 0.5;
    const QuantGrid ga = QuantGrid::uniform(da);
    const QuantGrid gb = QuantGrid::uniform(db);
    for (int rep = 0; rep < 200; ++rep) {
        const Mat a = testutil::gaussian_mat(r, 2, 5);
        const Mat b = testutil::gaussian_mat(r, 5, 2);
        ThresholdStream stream = ThresholdStream::seeded_uniform(38);
        const Mat mp =
            linalg::mp_matmul(a, b, ga, RoundingPolicy::rtn(), gb, RoundingPolicy::rtn(), stream);
        const Mat exact = linalg::matmul(a, b);
        for (int i = 0; i < exact.rows(); ++i) {
            for (int j = 0; j < exact.cols(); ++j) {
                double bound = 0.0;
                for (int k = 0; k < a.cols(); ++k)
                    bound += std::fabs(a(i, k)) * db / 2 + std::fabs(b(k, j)) * da / 2 +
                             da * db / 4;
                CHECK(std::fabs(mp(i, j) - exact(i, j)) <= bound * (1.0 + 1e-12));
            }
        }
    }
}

TEST_CASE("helper routines") {
    Mat m{{3.0, 4.0}};
    CHECK(linalg::frob_norm_sq(m) == 25.0);
    const Mat s = linalg::add_scaled(m, Mat{{1.0, 1.0}}, -2.0);
    CHECK(s(0, 0) == 1.0);
    CHECK(s(0, 1) == 2.0);
    CHECK(linalg::all_finite(m));
    Mat bad{{1.0, INFINITY}};
    CHECK(!linalg::all_finite(bad));
    CHECK(m.transposed().rows() == 2);
    CHECK(m.transposed()(1, 0) == 4.0);
}
