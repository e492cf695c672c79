// SPDX-License-Identifier: Apache-2.0

#include "srlab/quant.hpp"
#include "srlab/text.hpp"

#include <cmath>
#include <stdexcept>

namespace srlab::quant {

namespace {

// Threshold rule on a uniform lattice with spacing `step`. Exact lattice
// points are returned unchanged for every eps; the x == hi test catches
// x/step rounding down across an integer.
double lattice_round(double x, double step, double eps) {
    const double u = x / step;
    const double k = std::floor(u);
    const double lo = step * k;
    const double hi = step * (k + 1.0);
    if (x == lo) return lo;
    if (x == hi) return hi;
    return (u - k < eps) ? lo : hi;
}

} // namespace

QuantGrid QuantGrid::uniform(double step) {
    if (!std::isfinite(step) || step < 0.0)
        throw std::invalid_argument("QuantGrid::uniform: step must be finite and >= 0");
    QuantGrid g;
    g.kind_ = Kind::Uniform;
    g.step_ = step;
    return g;
}

QuantGrid QuantGrid::ex_my(int exp_bits, int man_bits) {
    if (exp_bits < 1 || exp_bits > 11)
        throw std::invalid_argument("QuantGrid::ex_my: exp_bits must be in [1, 11]");
    if (man_bits < 0 || man_bits > 52)
        throw std::invalid_argument("QuantGrid::ex_my: man_bits must be in [0, 52]");
    QuantGrid g;
    g.kind_ = Kind::FloatExMy;
    g.exp_bits_ = exp_bits;
    g.man_bits_ = man_bits;
    g.exp_bias_ = (1 << (exp_bits - 1)) - 1;
    // Top binade has unbiased exponent 2^(e-1); with no inf/NaN encodings the
    // full mantissa range is representable there.
    const int e_max = ((1 << exp_bits) - 1) - g.exp_bias_;
    const double top_sig = man_bits > 0 ? 2.0 - std::ldexp(1.0, -man_bits) : 1.0;
    g.max_finite_ = top_sig * std::ldexp(1.0, e_max);
    return g;
}

double QuantGrid::local_step(double x) const {
    switch (kind_) {
        case Kind::Identity:
            return 0.0;
        case Kind::Uniform:
            return step_;
        case Kind::FloatExMy: {
            const double a = std::fabs(x);
            const int e_min = 1 - exp_bias_;
            const int e_max = ((1 << exp_bits_) - 1) - exp_bias_;
            if (a < std::ldexp(1.0, e_min))
                return std::ldexp(1.0, e_min - man_bits_);  // subnormal range
            int e = std::ilogb(a);
            if (e > e_max) e = e_max;
            return std::ldexp(1.0, e - man_bits_);
        }
    }
    return 0.0;
}

ThresholdSource ThresholdSource::lfsr6(std::uint8_t initial_state) {
    if (initial_state == 0 || initial_state > 63)
        throw std::domain_error("ThresholdSource::lfsr6: state must be in [1, 63]");
    ThresholdSource s;
    s.kind = Kind::Lfsr6;
    s.state = initial_state;
    return s;
}

LfsrStep lfsr6_next(std::uint8_t state) {
    if (state == 0 || state > 63)
        throw std::domain_error("lfsr6_next: state must be in [1, 63]");
    const std::uint8_t feedback = ((state >> 5) ^ (state >> 4)) & 1u;
    const std::uint8_t next = static_cast<std::uint8_t>(((state << 1) | feedback) & 0x3Fu);
    return LfsrStep{static_cast<double>(state) / 64.0, next};
}

ThresholdStream ThresholdStream::seeded_uniform(std::uint64_t seed) {
    return ThresholdStream(seed);
}

ThresholdStream ThresholdStream::lfsr6(std::uint8_t initial_state) {
    if (initial_state == 0 || initial_state > 63)
        throw std::domain_error("ThresholdStream::lfsr6: state must be in [1, 63]");
    return ThresholdStream(initial_state);
}

ThresholdStream ThresholdStream::from_source(const ThresholdSource& src) {
    if (src.kind == ThresholdSource::Kind::Lfsr6) return lfsr6(src.state);
    return seeded_uniform(src.seed);
}

double ThresholdStream::next() {
    ++draws_;
    if (kind_ == ThresholdSource::Kind::Lfsr6) {
        const LfsrStep step = lfsr6_next(lfsr_state_);
        lfsr_state_ = step.next_state;
        return step.eps;
    }
    return static_cast<double>(prng_.next() >> 11) * 0x1.0p-53;
}

double threshold_quantize(double x, const QuantGrid& grid, double eps) {
    if (!std::isfinite(x))
        throw std::domain_error("threshold_quantize: non-finite input");
    if (!(eps >= 0.0 && eps <= 1.0))
        throw std::domain_error("threshold_quantize: eps must lie in [0, 1]");
    if (grid.is_identity()) return x;
    if (grid.kind() == QuantGrid::Kind::Uniform) return lattice_round(x, grid.step(), eps);

    // ExMy: threshold rule with the binade step, then saturate.
    if (x == 0.0) return 0.0;
    const double q = lattice_round(x, grid.local_step(x), eps);
    const double m = grid.max_finite();
    if (q > m) return m;
    if (q < -m) return -m;
    return q;
}

double rtn(double x, const QuantGrid& grid) {
    return threshold_quantize(x, grid, 0.5);
}

double sr(double x, const QuantGrid& grid, ThresholdStream& stream) {
    return threshold_quantize(x, grid, stream.next());
}

linalg::Mat sr_matrix(const linalg::Mat& m, const QuantGrid& grid, ThresholdStream& stream) {
    linalg::Mat out(m.rows(), m.cols());
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            if (!std::isfinite(v))
                throw std::domain_error("sr_matrix: non-finite entry at (" + std::to_string(r) +
                                        ", " + std::to_string(c) + ")");
            out(r, c) = sr(v, grid, stream);
        }
    }
    return out;
}

double apply_policy(double x, const QuantGrid& grid, const RoundingPolicy& policy,
                    ThresholdStream& stream) {
    switch (policy.mode) {
        case RoundMode::Identity: return x;
        case RoundMode::Rtn: return rtn(x, grid);
        case RoundMode::Sr: return sr(x, grid, stream);
    }
    return x;
}

linalg::Mat quantize_matrix(const linalg::Mat& m, const QuantGrid& grid,
                            const RoundingPolicy& policy, ThresholdStream& stream) {
    if (policy.mode == RoundMode::Identity) return m;
    linalg::Mat out(m.rows(), m.cols());
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            if (!std::isfinite(v))
                throw std::domain_error("quantize_matrix: non-finite entry at (" +
                                        std::to_string(r) + ", " + std::to_string(c) + ")");
            out(r, c) = policy.mode == RoundMode::Rtn ? rtn(v, grid) : sr(v, grid, stream);
        }
    }
    return out;
}

double sr_error_variance(double x, const QuantGrid& grid) {
    if (!std::isfinite(x))
        throw std::domain_error("sr_error_variance: non-finite input");
    if (grid.is_identity()) return 0.0;
    const double d = grid.local_step(x);
    const double u = x / d;
    const double k = std::floor(u);
    if (x == d * k || x == d * (k + 1.0)) return 0.0;
    const double p = u - k;
    return p * (1.0 - p) * d * d;
}

QuantGrid parse_grid(std::string_view raw) {
    const std::string_view s = text::trim(raw);
    if (s == "id") return QuantGrid::identity();
    if (s.starts_with("u:")) {
        const auto step = text::parse_double(s.substr(2));
        if (!step)
            throw std::invalid_argument("grid spec '" + std::string(raw) + "': bad step");
        return QuantGrid::uniform(*step);
    }
    if (s.starts_with("fp:")) {
        const std::string_view body = s.substr(3);
        if (body.size() < 4 || body[0] != 'E')
            throw std::invalid_argument("grid spec '" + std::string(raw) + "': expected fp:E<e>M<m>");
        const std::size_t mpos = body.find('M', 1);
        if (mpos == std::string_view::npos)
            throw std::invalid_argument("grid spec '" + std::string(raw) + "': expected fp:E<e>M<m>");
        const auto e = text::parse_int(body.substr(1, mpos - 1));
        const auto m = text::parse_int(body.substr(mpos + 1));
        if (!e || !m)
            throw std::invalid_argument("grid spec '" + std::string(raw) + "': bad E/M fields");
        return QuantGrid::ex_my(static_cast<int>(*e), static_cast<int>(*m));
    }
    throw std::invalid_argument("grid spec '" + std::string(raw) + "': unknown kind");
}

std::string grid_to_string(const QuantGrid& grid) {
    switch (grid.kind()) {
        case QuantGrid::Kind::Identity: return "id";
        case QuantGrid::Kind::Uniform: return "u:" + text::format_double(grid.step());
        case QuantGrid::Kind::FloatExMy:
            return "fp:E" + std::to_string(grid.exp_bits()) + "M" + std::to_string(grid.man_bits());
    }
    return "id";
}

ThresholdSource parse_threshold_source(std::string_view raw) {
    const std::string_view s = text::trim(raw);
    if (s.starts_with("prng:")) {
        const auto seed = text::parse_uint(s.substr(5));
        if (!seed)
            throw std::invalid_argument("threshold source '" + std::string(raw) + "': bad seed");
        return ThresholdSource::prng(*seed);
    }
    if (s.starts_with("lfsr6:")) {
        const auto state = text::parse_uint(s.substr(6));
        if (!state || *state == 0 || *state > 63)
            throw std::invalid_argument("threshold source '" + std::string(raw) +
                                        "': state must be in [1, 63]");
        return ThresholdSource::lfsr6(static_cast<std::uint8_t>(*state));
    }
    throw std::invalid_argument("threshold source '" + std::string(raw) + "': unknown kind");
}

std::string source_to_string(const ThresholdSource& src) {
    if (src.kind == ThresholdSource::Kind::Lfsr6)
        return "lfsr6:" + std::to_string(static_cast<int>(src.state));
    return "prng:" + std::to_string(src.seed);
}

} // namespace srlab::quant
