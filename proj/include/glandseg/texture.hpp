#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "glandseg/error.hpp"
#include "glandseg/raster.hpp"

namespace glandseg {

struct LbpParams {
    int n_points = 8;
    double radius = 1.0;

    bool operator==(const LbpParams&) const = default;
};

struct LbpMap {
    Raster<std::uint32_t> codes;
    LbpParams params;
};

inline void validate(const LbpParams& p) {
    require(p.n_points >= 4 && p.n_points <= 24, "LBP point count must lie in [4, 24]");
    require(p.radius > 0.0 && std::isfinite(p.radius), "LBP radius must be positive");
}

/// Circular right rotation of an n_bits-wide code.
inline std::uint32_t ror(std::uint32_t code, int shift, int n_bits) {
    require(n_bits >= 1 && n_bits <= 31, "ror width must lie in [1, 31]");
    const std::uint32_t mask = (1u << n_bits) - 1u;
    require(code <= mask, "LBP code out of range for the bit width");
    const int s = ((shift % n_bits) + n_bits) % n_bits;
    if (s == 0) return code;
    return ((code >> s) | (code << (n_bits - s))) & mask;
}

/// Smallest value over all rotations of code.
inline std::uint32_t min_rotation(std::uint32_t code, int n_bits) {
    std::uint32_t best = code;
    for (int i = 1; i < n_bits; ++i) best = std::min(best, ror(code, i, n_bits));
    return best;
}

namespace detail {

struct SampleOffset {
    double dx;
    double dy;
};

inline double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

// Offsets at angles 2*pi*k/N, x to the right, y up (row index decreasing).
// When N is divisible by 4 (or 2) later quadrants are derived from the first
// by exact swaps and negations, so a 90/180 degree image rotation permutes
// the samples without changing a single bit of their values.
inline std::vector<SampleOffset> sample_offsets(const LbpParams& p) {
    const int n = p.n_points;
    std::vector<SampleOffset> off(n);
    auto direct = [&](int k) {
        const double a = 2.0 * std::numbers::pi * k / n;
        return SampleOffset{snap(p.radius * std::cos(a)), snap(-p.radius * std::sin(a))};
    };
    if (n % 4 == 0) {
        const int q = n / 4;
        for (int k = 0; k < q; ++k) {
            const auto o = direct(k);
            off[k] = o;
            off[k + q] = {o.dy, -o.dx};
            off[k + 2 * q] = {-o.dx, -o.dy};
            off[k + 3 * q] = {-o.dy, o.dx};
        }
    } else if (n % 2 == 0) {
        const int h = n / 2;
        for (int k = 0; k < h; ++k) {
            off[k] = direct(k);
            off[k + h] = {-off[k].dx, -off[k].dy};
        }
    } else {
        for (int k = 0; k < n; ++k) off[k] = direct(k);
    }
    return off;
}

// Bilinear sample relative to (cx, cy). Corners are named near/far relative
// to the centre and the x-first and y-first interpolations are averaged, so
// the arithmetic is identical for mirrored or transposed offsets. A constant
// neighbourhood yields exactly its value.
inline double sample(const GrayImage& img, int cx, int cy, const SampleOffset& o) {
    const double ax = std::abs(o.dx), ay = std::abs(o.dy);
    const int sx = o.dx < 0 ? -1 : 1, sy = o.dy < 0 ? -1 : 1;
    const int ix = static_cast<int>(std::floor(ax)), iy = static_cast<int>(std::floor(ay));
    const double fx = ax - ix, fy = ay - iy;
    const int xn = cx + sx * ix, xf = cx + sx * (ix + 1);
    const int yn = cy + sy * iy, yf = cy + sy * (iy + 1);
    const double nn = img.at_clamped(xn, yn);
    if (fx == 0.0 && fy == 0.0) return nn;
    const double fn = img.at_clamped(xf, yn);
    const double nf = img.at_clamped(xn, yf);
    const double ff = img.at_clamped(xf, yf);
    const double x_first_near = nn + fx * (fn - nn);
    const double x_first_far = nf + fx * (ff - nf);
    const double x_first = x_first_near + fy * (x_first_far - x_first_near);
    const double y_first_near = nn + fy * (nf - nn);
    const double y_first_far = fn + fy * (ff - fn);
    const double y_first = y_first_near + fx * (y_first_far - y_first_near);
    return 0.5 * (x_first + y_first);
}

}  // namespace detail

/// Standard LBP: bit k is set when the k-th circular neighbour is >= the
/// centre. Borders replicate the edge so the map has the image's extent.
inline LbpMap lbp(const GrayImage& img, const LbpParams& params = {}) {
    validate(params);
    const auto offsets = detail::sample_offsets(params);
    LbpMap out{Raster<std::uint32_t>(img.width(), img.height()), params};
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const double centre = img(x, y);
            std::uint32_t code = 0;
            for (int k = 0; k < params.n_points; ++k)
                if (detail::sample(img, x, y, offsets[k]) >= centre) code |= 1u << k;
            out.codes(x, y) = code;
        }
    }
    return out;
}

/// Rotation-invariant LBP: per pixel, the minimum over all circular rotations
/// of the standard code.
inline LbpMap lbp_invariant(const GrayImage& img, const LbpParams& params = {}) {
    LbpMap out = lbp(img, params);
    for (auto& c : out.codes.pixels()) c = min_rotation(c, params.n_points);
    return out;
}

/// Invariant codes scaled by 1 / (2^N - 1) into [0, 1].
inline GrayImage lbp_feature_channel(const GrayImage& img, const LbpParams& params = {}) {
    const LbpMap m = lbp_invariant(img, params);
    const double scale = 1.0 / static_cast<double>((1u << params.n_points) - 1u);
    GrayImage out(img.width(), img.height());
    auto src = m.codes.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i] * scale);
    return out;
}

}  // namespace glandseg
