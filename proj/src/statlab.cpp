// SPDX-License-Identifier: Apache-2.0

#include "srlab/statlab.hpp"
#include "srlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace srlab::statlab {

namespace {

constexpr std::uint64_t kTrialTag = 0x7121A15ull;
constexpr std::uint64_t kCellTag = 0xCE11ull;

// Running mean / standard error of the mean.
struct Accum {
    long double sum = 0.0L, sum_sq = 0.0L;
    long n = 0;

    void add(double x) {
        sum += x;
        sum_sq += static_cast<long double>(x) * x;
        ++n;
    }
    double mean() const { return static_cast<double>(sum / n); }
    double se() const {
        if (n < 2) return 0.0;
        const long double m = sum / n;
        long double var = (sum_sq - static_cast<long double>(n) * m * m) / (n - 1);
        if (var < 0.0L) var = 0.0L;
        return static_cast<double>(std::sqrt(static_cast<double>(var) / static_cast<double>(n)));
    }
};

std::vector<int> draw_batch(rng::Rng& rng, int dataset_size, int b, bool with_replacement) {
    std::vector<int> idx(static_cast<std::size_t>(b));
    if (with_replacement) {
        for (int& v : idx) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(dataset_size)));
        return idx;
    }
    // Partial Fisher-Yates, then sorted so that sums are order-stable.
    std::vector<int> pool(static_cast<std::size_t>(dataset_size));
    std::iota(pool.begin(), pool.end(), 0);
    for (int k = 0; k < b; ++k) {
        const int pick = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(dataset_size - k)));
        std::swap(pool[k], pool[pick]);
        idx[k] = pool[k];
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

double quantize_one(double x, const quant::QuantGrid& grid, quant::RoundMode mode,
                    quant::ThresholdStream& stream) {
    switch (mode) {
        case quant::RoundMode::Identity: return x;
        case quant::RoundMode::Rtn: return quant::rtn(x, grid);
        case quant::RoundMode::Sr: return quant::sr(x, grid, stream);
    }
    return x;
}

} // namespace

MseDecomposition mse_decompose(const Mat& a, const Mat& aout, int b,
                               const quant::QuantGrid& grid_a, const quant::QuantGrid& grid_aout,
                               long trials, std::uint64_t seed, int i, int j,
                               quant::RoundMode mode, bool with_replacement) {
    const int dataset = a.rows();
    if (dataset == 0 || aout.rows() != dataset)
        throw std::invalid_argument("mse_decompose: a and aout must share a nonzero row count");
    if (i < 0 || i >= a.cols() || j < 0 || j >= aout.cols())
        throw std::invalid_argument("mse_decompose: component (i, j) out of range");
    if (b < 1 || trials < 1) throw std::invalid_argument("mse_decompose: b and trials must be >= 1");
    if (!with_replacement && b > dataset)
        throw std::invalid_argument("mse_decompose: b exceeds dataset without replacement");

    long double full_acc = 0.0L;
    for (int k = 0; k < dataset; ++k)
        full_acc += static_cast<long double>(a(k, i)) * aout(k, j);
    const double full = static_cast<double>(full_acc / dataset);

    rng::Rng batch_rng(rng::seed_mix(seed, kTrialTag, 1));
    Accum total, sampling, quantization, cross;
    for (long t = 0; t < trials; ++t) {
        const std::vector<int> batch = draw_batch(batch_rng, dataset, b, with_replacement);
        quant::ThresholdStream stream = quant::ThresholdStream::seeded_uniform(
            rng::seed_mix(seed, kTrialTag, 2, static_cast<std::uint64_t>(t)));
        long double true_acc = 0.0L, quant_acc = 0.0L;
        for (const int k : batch) {
            const double x = a(k, i);
            const double y = aout(k, j);
            true_acc += static_cast<long double>(x) * y;
            const double qx = quantize_one(x, grid_a, mode, stream);
            const double qy = quantize_one(y, grid_aout, mode, stream);
            quant_acc += static_cast<long double>(qx) * qy;
        }
        const double true_mini = static_cast<double>(true_acc / b);
        const double quant_mini = static_cast<double>(quant_acc / b);
        const double s = full - true_mini;
        const double q = true_mini - quant_mini;
        total.add((s + q) * (s + q));
        sampling.add(s * s);
        quantization.add(q * q);
        cross.add(2.0 * s * q);
    }

    MseDecomposition out;
    out.total = total.mean();
    out.sampling = sampling.mean();
    out.quant = quantization.mean();
    out.cross = cross.mean();
    out.total_se = total.se();
    out.sampling_se = sampling.se();
    out.quant_se = quantization.se();
    out.cross_se = cross.se();
    out.trials = trials;
    return out;
}

TqBoundResult tq_bound_check(const Mat& a, const Mat& aout, int b, double delta_a,
                             double delta_aout, long trials, std::uint64_t seed, int i, int j) {
    const int dataset = a.rows();
    if (dataset == 0 || aout.rows() != dataset)
        throw std::invalid_argument("tq_bound_check: a and aout must share a nonzero row count");
    if (i < 0 || i >= a.cols() || j < 0 || j >= aout.cols())
        throw std::invalid_argument("tq_bound_check: component (i, j) out of range");
    if (b < 1 || trials < 1) throw std::invalid_argument("tq_bound_check: b and trials must be >= 1");

    long double m2_a_acc = 0.0L, m2_out_acc = 0.0L;
    for (int k = 0; k < dataset; ++k) {
        m2_a_acc += static_cast<long double>(a(k, i)) * a(k, i);
        m2_out_acc += static_cast<long double>(aout(k, j)) * aout(k, j);
    }
    const double m2_a = static_cast<double>(m2_a_acc / dataset);
    const double m2_out = static_cast<double>(m2_out_acc / dataset);

    TqBoundResult out;
    if (m2_a == 0.0 && m2_out == 0.0) {
        // Zeros lie on every grid: no quantization error, vacuous bound.
        out.bound = 0.0;
    } else {
        out.bound = (m2_a * delta_aout * delta_aout + m2_out * delta_a * delta_a +
                     delta_a * delta_a * delta_aout * delta_aout) /
                    static_cast<double>(b);
    }

    const quant::QuantGrid grid_a = quant::QuantGrid::uniform(delta_a);
    const quant::QuantGrid grid_out = quant::QuantGrid::uniform(delta_aout);
    rng::Rng batch_rng(rng::seed_mix(seed, kTrialTag, 3));
    Accum q_sq;
    for (long t = 0; t < trials; ++t) {
        quant::ThresholdStream stream = quant::ThresholdStream::seeded_uniform(
            rng::seed_mix(seed, kTrialTag, 4, static_cast<std::uint64_t>(t)));
        long double err_acc = 0.0L;
        for (int s = 0; s < b; ++s) {
            const int k = static_cast<int>(batch_rng.below(static_cast<std::uint64_t>(dataset)));
            const double x = a(k, i);
            const double y = aout(k, j);
            const double qx = quant::sr(x, grid_a, stream);
            const double qy = quant::sr(y, grid_out, stream);
            err_acc += static_cast<long double>(x) * y - static_cast<long double>(qx) * qy;
        }
        const double q = static_cast<double>(err_acc / b);
        q_sq.add(q * q);
    }
    out.measured = q_sq.mean();
    out.measured_se = q_sq.se();
    if (out.measured == 0.0) {
        out.within = true;
    } else {
        const double rel_se = out.measured_se / out.measured;
        out.within = out.measured <= out.bound * (1.0 + 4.0 * rel_se);
    }
    return out;
}

ScalingFit fit_scaling(std::span<const double> xs, std::span<const double> ys, ScalingLaw law) {
    if (xs.size() != ys.size()) throw std::invalid_argument("fit_scaling: xs/ys length mismatch");
    if (xs.size() < 4) throw std::invalid_argument("fit_scaling: need at least 4 points");
    for (std::size_t k = 1; k < xs.size(); ++k)
        if (!(xs[k] > xs[k - 1])) throw std::invalid_argument("fit_scaling: xs must be strictly increasing");
    for (double y : ys)
        if (!(y > 0.0)) throw std::invalid_argument("fit_scaling: ys must be positive");

    std::vector<double> u(xs.size()), v(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (law == ScalingLaw::InverseB) {
            if (!(xs[k] > 0.0)) throw std::invalid_argument("fit_scaling: xs must be positive for log-log fit");
            u[k] = std::log(xs[k]);
            v[k] = std::log(ys[k]);
        } else {
            u[k] = xs[k];  // bits
            v[k] = std::log2(ys[k]);
        }
    }
    const double n = static_cast<double>(u.size());
    double um = 0.0, vm = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        um += u[k];
        vm += v[k];
    }
    um /= n;
    vm /= n;
    double suv = 0.0, suu = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        suv += (u[k] - um) * (v[k] - vm);
        suu += (u[k] - um) * (u[k] - um);
    }
    ScalingFit fit;
    fit.xs.assign(xs.begin(), xs.end());
    fit.ys.assign(ys.begin(), ys.end());
    fit.slope = suv / suu;
    fit.intercept = vm - fit.slope * um;
    double rss = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        const double r = v[k] - (fit.intercept + fit.slope * u[k]);
        rss += r * r;
    }
    fit.residual = std::sqrt(rss / n);
    return fit;
}

double max_eigenvalue_sym(const Mat& m) {
    if (m.rows() != m.cols() || m.rows() == 0)
        throw std::invalid_argument("max_eigenvalue_sym: square matrix required");
    Mat b = m;
    const int n = b.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += b(p, q) * b(p, q);
        if (off < 1e-28) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (b(p, q) == 0.0) continue;
                const double theta = (b(q, q) - b(p, p)) / (2.0 * b(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double bkp = b(k, p), bkq = b(k, q);
                    b(k, p) = c * bkp - s * bkq;
                    b(k, q) = s * bkp + c * bkq;
                }
                for (int k = 0; k < n; ++k) {
                    const double bpk = b(p, k), bqk = b(q, k);
                    b(p, k) = c * bpk - s * bqk;
                    b(q, k) = s * bpk + c * bqk;
                }
            }
        }
    }
    double mx = b(0, 0);
    for (int k = 1; k < n; ++k) mx = std::max(mx, b(k, k));
    return mx;
}

BiasReport bias_check(const net::MlpModel& model, const net::Dataset& data, double delta_w,
                      quant::RoundMode policy, long trials, std::uint64_t seed) {
    if (model.n_layers() != 1 || model.activation != net::Activation::None ||
        model.loss != net::LossKind::Mse)
        throw std::domain_error(
            "bias_check: smoothness is certified only for single-layer least-squares models");
    if (policy == quant::RoundMode::Identity)
        throw std::invalid_argument("bias_check: policy must be Rtn or Sr");
    if (delta_w < 0.0 || trials < 1)
        throw std::invalid_argument("bias_check: delta_w must be >= 0 and trials >= 1");

    const Mat& x = data.inputs;
    const Mat gram = linalg::matmul(x.transposed(), x);
    const double smoothness = 2.0 * max_eigenvalue_sym(gram) / data.size();

    const quant::QuantGrid grid = quant::QuantGrid::uniform(delta_w);
    const net::GradOut base = net::loss_and_true_grad(model, data);

    const auto bias_for = [&](const Mat& w_hat) {
        net::MlpModel quantized = model;
        quantized.weights[0] = w_hat;
        const net::GradOut g = net::loss_and_true_grad(quantized, data);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.grad.grad_w.size(); ++i) {
            const Mat diff = linalg::add_scaled(g.grad.grad_w[i], base.grad.grad_w[i], -1.0);
            acc += linalg::frob_norm_sq(diff);
        }
        return std::sqrt(acc);
    };

    BiasReport report;
    report.policy = policy;
    report.delta_w = delta_w;
    report.smoothness = smoothness;
    report.dim = static_cast<int>(model.weights[0].size());
    const double root_d = std::sqrt(static_cast<double>(report.dim));
    if (policy == quant::RoundMode::Rtn) {
        quant::ThresholdStream unused = quant::ThresholdStream::seeded_uniform(0);
        const Mat w_hat =
            quant::quantize_matrix(model.weights[0], grid, quant::RoundingPolicy::rtn(), unused);
        report.measured_bias = bias_for(w_hat);
        report.bound = 0.5 * smoothness * root_d * delta_w;
    } else {
        double worst = 0.0;
        for (long t = 0; t < trials; ++t) {
            quant::ThresholdStream stream = quant::ThresholdStream::seeded_uniform(
                rng::seed_mix(seed, kTrialTag, 5, static_cast<std::uint64_t>(t)));
            const Mat w_hat = quant::sr_matrix(model.weights[0], grid, stream);
            worst = std::max(worst, bias_for(w_hat));
        }
        report.measured_bias = worst;
        report.bound = smoothness * root_d * delta_w;
    }
    return report;
}

std::vector<FloorCell> error_floor_probe(const net::MlpModel& model, const net::Dataset& data,
                                         std::span<const std::pair<quant::QuantGrid, int>> cells,
                                         const trainer::TrainConfig& base) {
    std::vector<FloorCell> out;
    out.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        trainer::TrainConfig cfg = base;
        cfg.grid = cells[c].first;
        cfg.batch_size = cells[c].second;
        cfg.seed = rng::seed_mix(base.seed, kCellTag, static_cast<std::uint64_t>(c));
        FloorCell cell;
        cell.format = quant::grid_to_string(cfg.grid);
        cell.batch_size = cfg.batch_size;
        const std::vector<trainer::RunRecord> records = trainer::train(model, data, cfg);
        const bool diverged = !records.empty() && records.back().diverged;
        if (!diverged) {
            cell.tail_mean = trainer::tail_mean_grad_norm_sq(records);
            const std::size_t tail = std::max<std::size_t>(1, records.size() / 4);
            Accum acc;
            for (std::size_t k = records.size() - tail; k < records.size(); ++k)
                acc.add(records[k].grad_norm_sq);
            cell.tail_se = acc.se();
            cell.valid = true;
        }
        out.push_back(std::move(cell));
    }
    return out;
}

} // namespace srlab::statlab
