#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "glandseg/error.hpp"
#include "glandseg/raster.hpp"

namespace glandseg {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

/// Rows are stains (hematoxylin, eosin, DAB), columns are (R, G, B) optical
/// densities. An RGB optical-density row vector is the concentration-weighted
/// sum of the rows: od = c * M.
class StainMatrix {
public:
    /// Ruifrok-Johnston H/E/DAB vectors as published, without renormalisation.
    static constexpr Mat3 ruifrok_johnston{{{0.65, 0.70, 0.29}, {0.07, 0.99, 0.11}, {0.27, 0.57, 0.78}}};

    StainMatrix() : StainMatrix(ruifrok_johnston) {}

    explicit StainMatrix(const Mat3& rows) : rows_(rows) {
        const double det = determinant(rows_);
        if (!(std::abs(det) > 1e-9)) throw NumericError("stain matrix is singular");
        const auto& m = rows_;
        Mat3 adj{};
        adj[0][0] = m[1][1] * m[2][2] - m[1][2] * m[2][1];
        adj[0][1] = m[0][2] * m[2][1] - m[0][1] * m[2][2];
        adj[0][2] = m[0][1] * m[1][2] - m[0][2] * m[1][1];
        adj[1][0] = m[1][2] * m[2][0] - m[1][0] * m[2][2];
        adj[1][1] = m[0][0] * m[2][2] - m[0][2] * m[2][0];
        adj[1][2] = m[0][2] * m[1][0] - m[0][0] * m[1][2];
        adj[2][0] = m[1][0] * m[2][1] - m[1][1] * m[2][0];
        adj[2][1] = m[0][1] * m[2][0] - m[0][0] * m[2][1];
        adj[2][2] = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        for (auto& row : adj)
            for (auto& v : row) v /= det;
        inverse_ = adj;
    }

    const Mat3& rows() const noexcept { return rows_; }
    /// The colour-deconvolution matrix M^-1.
    const Mat3& inverse() const noexcept { return inverse_; }

    static double determinant(const Mat3& m) {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }

    /// od = c * M (row-vector convention).
    Vec3 mix(const Vec3& conc) const {
        Vec3 od{};
        for (int ch = 0; ch < 3; ++ch)
            for (int s = 0; s < 3; ++s) od[ch] += conc[s] * rows_[s][ch];
        return od;
    }

    /// c = od * M^-1.
    Vec3 unmix(const Vec3& od) const {
        Vec3 c{};
        for (int s = 0; s < 3; ++s)
            for (int ch = 0; ch < 3; ++ch) c[s] += od[ch] * inverse_[ch][s];
        return c;
    }

    bool operator==(const StainMatrix& o) const { return rows_ == o.rows_; }

private:
    Mat3 rows_;
    Mat3 inverse_;
};

/// Optical density of a single channel. Intensities are floored at 1 so black
/// pixels stay finite, and the result is clamped at 0 (brighter than the
/// incident level is treated as unstained).
inline double optical_density(double intensity, double incident = 255.0) {
    require(incident > 0.0, "incident intensity must be positive");
    const double od = -std::log10(std::max(intensity, 1.0) / incident);
    return std::max(od, 0.0);
}

inline Vec3 optical_density(const Vec3& rgb, double incident = 255.0) {
    return {optical_density(rgb[0], incident), optical_density(rgb[1], incident),
            optical_density(rgb[2], incident)};
}

inline Vec3 optical_density(const Rgb& rgb, double incident = 255.0) {
    return optical_density(Vec3{double(rgb[0]), double(rgb[1]), double(rgb[2])}, incident);
}

/// Transmitted intensities for the given stain amounts: I = I0 * 10^-od.
/// Inverse of optical_density wherever the floor and clamp are inactive.
inline Vec3 compose(const Vec3& conc, const StainMatrix& m = {}, double incident = 255.0) {
    const Vec3 od = m.mix(conc);
    return {incident * std::pow(10.0, -od[0]), incident * std::pow(10.0, -od[1]),
            incident * std::pow(10.0, -od[2])};
}

/// Per-stain concentrations of one pixel. Negative values are kept.
inline Vec3 deconvolve_pixel(const Vec3& rgb, const StainMatrix& m = {}, double incident = 255.0) {
    return m.unmix(optical_density(rgb, incident));
}

struct ConcentrationMap {
    Raster<float> hematoxylin;
    Raster<float> eosin;
    Raster<float> dab;
};

inline ConcentrationMap deconvolve(const RgbImage& img, const StainMatrix& m = {}) {
    ConcentrationMap out{Raster<float>(img.width(), img.height()), Raster<float>(img.width(), img.height()),
                         Raster<float>(img.width(), img.height())};
    auto px = img.pixels();
    auto h = out.hematoxylin.pixels();
    auto e = out.eosin.pixels();
    auto d = out.dab.pixels();
    // 256^3 colours but only 256 OD values per channel.
    std::array<double, 256> od_lut{};
    for (int i = 0; i < 256; ++i) od_lut[i] = optical_density(static_cast<double>(i));
    for (std::size_t i = 0; i < px.size(); ++i) {
        const Vec3 c = m.unmix({od_lut[px[i][0]], od_lut[px[i][1]], od_lut[px[i][2]]});
        h[i] = static_cast<float>(c[0]);
        e[i] = static_cast<float>(c[1]);
        d[i] = static_cast<float>(c[2]);
    }
    return out;
}

/// Clamps negatives to zero and min-max scales to [0, 1]; a constant map
/// becomes all zeros.
inline GrayImage normalize_channel(const Raster<float>& raw) {
    GrayImage out(raw.width(), raw.height());
    float lo = std::numeric_limits<float>::max(), hi = 0.0f;
    for (float v : raw.pixels()) {
        const float c = std::max(v, 0.0f);
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    auto src = raw.pixels();
    auto dst = out.pixels();
    if (!(hi > lo)) return out;
    const double span = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = static_cast<float>((std::max(src[i], 0.0f) - lo) / span);
    return out;
}

inline GrayImage hematoxylin_channel(const RgbImage& img, const StainMatrix& m = {}) {
    return normalize_channel(deconvolve(img, m).hematoxylin);
}

}  // namespace glandseg
