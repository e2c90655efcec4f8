#pragma once

// Synthetic gland images: elliptical glands (dark epithelial ring around a
// pale lumen) on a noisy stroma background. Colours are produced by mixing
// stain concentrations through the stain model, so hematoxylin deconvolution
// lights up on the rings. Instance masks are exact by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "glandseg/error.hpp"
#include "glandseg/random.hpp"
#include "glandseg/raster.hpp"
#include "glandseg/stain.hpp"

namespace glandseg {

struct SynthSpec {
    int width = 64;
    int height = 64;
    int min_glands = 1;
    int max_glands = 3;
    double min_radius = 7.0;
    double max_radius = 13.0;
    /// Lumen semi-axes as a fraction of the gland semi-axes.
    double lumen_ratio = 0.5;
    /// Amplitude of the uniform per-pixel concentration noise.
    double noise = 0.1;
    /// Minimum Chebyshev gap in pixels between two glands.
    int gap = 3;
    int max_attempts = 200;
    std::uint64_t seed = 1;

    void validate() const {
        require(width >= 1 && height >= 1, "synth image dimensions must be >= 1");
        require(min_glands >= 0 && max_glands >= min_glands, "synth gland count range is invalid");
        require(min_radius >= 1.0 && max_radius >= min_radius, "synth radius range is invalid");
        require(lumen_ratio >= 0.0 && lumen_ratio < 1.0, "synth lumen ratio must lie in [0, 1)");
        require(noise >= 0.0, "synth noise must be >= 0");
        require(gap >= 0 && max_attempts >= 1, "synth gap and attempt budget must be non-negative / positive");
    }
};

struct SynthSample {
    RgbImage image;
    InstanceMask mask;
};

namespace detail {

struct Ellipse {
    double cx, cy, rx, ry, cos_t, sin_t;

    // Squared normalised radius of pixel centre (x, y); <= 1 means inside.
    double level(int x, int y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * cos_t + dy * sin_t) / rx;
        const double v = (-dx * sin_t + dy * cos_t) / ry;
        return u * u + v * v;
    }
};

// Stain concentrations (hematoxylin, eosin, dab) of the three tissue zones.
inline constexpr Vec3 kStroma{0.12, 0.35, 0.0};
inline constexpr Vec3 kEpithelium{0.85, 0.30, 0.0};
inline constexpr Vec3 kLumen{0.02, 0.04, 0.0};

// Tries to lay out `count` disjoint glands; returns false when some gland
// found no free spot.
inline bool place_glands(const SynthSpec& spec, int count, Rng& rng, InstanceMask& mask,
                         std::vector<Ellipse>& glands) {
    mask = InstanceMask(spec.width, spec.height, 0);
    BinaryMask blocked(spec.width, spec.height, 0);
    glands.clear();
    for (int label = 1; label <= count; ++label) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            const double rx = rng.uniform(spec.min_radius, spec.max_radius);
            const double ry = rng.uniform(spec.min_radius, spec.max_radius);
            const double reach = std::max(rx, ry);
            if (2 * reach + 2 > spec.width || 2 * reach + 2 > spec.height) continue;
            const double theta = rng.uniform(0.0, std::numbers::pi);
            const Ellipse e{rng.uniform(reach + 1, spec.width - 1 - reach), rng.uniform(reach + 1, spec.height - 1 - reach),
                            rx, ry, std::cos(theta), std::sin(theta)};
            const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - reach)));
            const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(e.cx + reach)));
            const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - reach)));
            const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(e.cy + reach)));
            bool free = true;
            for (int y = y0; y <= y1 && free; ++y)
                for (int x = x0; x <= x1; ++x)
                    if (e.level(x, y) <= 1.0 && blocked(x, y)) {
                        free = false;
                        break;
                    }
            if (!free) continue;
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    if (e.level(x, y) > 1.0) continue;
                    mask(x, y) = label;
                    for (int by = std::max(0, y - spec.gap); by <= std::min(spec.height - 1, y + spec.gap); ++by)
                        for (int bx = std::max(0, x - spec.gap); bx <= std::min(spec.width - 1, x + spec.gap); ++bx)
                            blocked(bx, by) = 1;
                }
            glands.push_back(e);
            placed = true;
        }
        if (!placed) return false;
    }
    return true;
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace detail

/// One synthetic image. Image `index` of a dataset depends only on
/// (spec, index), never on how many images are generated.
inline SynthSample synth_image(const SynthSpec& spec, std::uint64_t index) {
    spec.validate();
    Rng rng(spec.seed * 0x9E3779B97F4A7C15ull + index);
    const int count = static_cast<int>(rng.between(spec.min_glands, spec.max_glands));
    SynthSample s;
    std::vector<detail::Ellipse> glands;
    bool ok = false;
    for (int layout = 0; layout < spec.max_attempts && !ok; ++layout) ok = detail::place_glands(spec, count, rng, s.mask, glands);
    if (!ok)
        throw DataError("synth: could not pack " + std::to_string(count) + " glands into " + std::to_string(spec.width) +
                        "x" + std::to_string(spec.height) + " after bounded retries");

    const StainMatrix m;
    const double lumen2 = spec.lumen_ratio * spec.lumen_ratio;
    s.image = RgbImage(spec.width, spec.height);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            Vec3 c = detail::kStroma;
            if (const int label = s.mask(x, y); label > 0)
                c = glands[static_cast<std::size_t>(label - 1)].level(x, y) <= lumen2 ? detail::kLumen : detail::kEpithelium;
            for (int k = 0; k < 2; ++k) c[k] = std::max(0.0, c[k] + spec.noise * (rng.uniform() - 0.5));
            const Vec3 rgb = compose(c, m);
            s.image(x, y) = {detail::to_byte(rgb[0]), detail::to_byte(rgb[1]), detail::to_byte(rgb[2])};
        }
    return s;
}

inline std::vector<SynthSample> synth_generate(const SynthSpec& spec, int count) {
    spec.validate();
    require(count >= 0, "synth count must be >= 0");
    std::vector<SynthSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(synth_image(spec, static_cast<std::uint64_t>(i)));
    return out;
}

}  // namespace glandseg
