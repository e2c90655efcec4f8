#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glandseg/error.hpp"
#include "glandseg/raster.hpp"

namespace glandseg {

// ---------------------------------------------------------------------------
// Geometric transforms
// ---------------------------------------------------------------------------

enum class Transform { identity, rot180, hflip, vflip };

inline const char* to_string(Transform t) {
    switch (t) {
        case Transform::identity: return "identity";
        case Transform::rot180: return "rot180";
        case Transform::hflip: return "hflip";
        case Transform::vflip: return "vflip";
    }
    return "?";
}

template <typename Pixel>
Raster<Pixel> apply_transform(const Raster<Pixel>& img, Transform t) {
    const int w = img.width(), h = img.height();
    Raster<Pixel> out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            switch (t) {
                case Transform::identity: out(x, y) = img(x, y); break;
                case Transform::rot180: out(x, y) = img(w - 1 - x, h - 1 - y); break;
                case Transform::hflip: out(x, y) = img(w - 1 - x, y); break;
                case Transform::vflip: out(x, y) = img(x, h - 1 - y); break;
            }
        }
    }
    return out;
}

/// Quarter turn clockwise; width and height swap.
template <typename Pixel>
Raster<Pixel> rotate90(const Raster<Pixel>& img) {
    const int w = img.width(), h = img.height();
    Raster<Pixel> out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(h - 1 - y, x) = img(x, y);
    return out;
}

template <typename Pixel>
Raster<Pixel> crop(const Raster<Pixel>& img, int x0, int y0, int w, int h) {
    require(x0 >= 0 && y0 >= 0 && w >= 1 && h >= 1 && x0 + w <= img.width() &&
                y0 + h <= img.height(),
            "crop window outside image");
    Raster<Pixel> out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(x, y) = img(x0 + x, y0 + y);
    return out;
}

// ---------------------------------------------------------------------------
// Resizing
// ---------------------------------------------------------------------------

enum class Interpolation { bilinear, nearest };

namespace detail {

// Pixel-centre aligned source coordinate for destination index d.
inline double source_coord(int d, double scale) { return (d + 0.5) * scale - 0.5; }

inline int nearest_index(int d, double scale, int extent) {
    const int s = static_cast<int>(std::floor((d + 0.5) * scale));
    return std::clamp(s, 0, extent - 1);
}

template <typename Pixel>
struct PixelTraits;

template <>
struct PixelTraits<Rgb> {
    static constexpr int channels = 3;
    static double get(const Rgb& p, int c) { return p[c]; }
    static void set(Rgb& p, int c, double v) {
        p[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
};

template <>
struct PixelTraits<float> {
    static constexpr int channels = 1;
    static double get(float p, int) { return p; }
    static void set(float& p, int, double v) { p = static_cast<float>(v); }
};

}  // namespace detail

template <typename Pixel>
Raster<Pixel> resize_nearest(const Raster<Pixel>& img, int target_w, int target_h) {
    require(target_w >= 1 && target_h >= 1, "resize target dimensions must be >= 1");
    const double sx = static_cast<double>(img.width()) / target_w;
    const double sy = static_cast<double>(img.height()) / target_h;
    Raster<Pixel> out(target_w, target_h);
    for (int y = 0; y < target_h; ++y) {
        const int src_y = detail::nearest_index(y, sy, img.height());
        for (int x = 0; x < target_w; ++x)
            out(x, y) = img(detail::nearest_index(x, sx, img.width()), src_y);
    }
    return out;
}

template <typename Pixel>
Raster<Pixel> resize_bilinear(const Raster<Pixel>& img, int target_w, int target_h) {
    using Traits = detail::PixelTraits<Pixel>;
    require(target_w >= 1 && target_h >= 1, "resize target dimensions must be >= 1");
    if (target_w == img.width() && target_h == img.height()) return img;
    const double sx = static_cast<double>(img.width()) / target_w;
    const double sy = static_cast<double>(img.height()) / target_h;
    Raster<Pixel> out(target_w, target_h);
    for (int y = 0; y < target_h; ++y) {
        const double fy = std::clamp(detail::source_coord(y, sy), 0.0, img.height() - 1.0);
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, img.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            const double fx = std::clamp(detail::source_coord(x, sx), 0.0, img.width() - 1.0);
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double wx = fx - x0;
            Pixel p{};
            for (int c = 0; c < Traits::channels; ++c) {
                const double top = Traits::get(img(x0, y0), c) * (1 - wx) + Traits::get(img(x1, y0), c) * wx;
                const double bot = Traits::get(img(x0, y1), c) * (1 - wx) + Traits::get(img(x1, y1), c) * wx;
                Traits::set(p, c, top * (1 - wy) + bot * wy);
            }
            out(x, y) = p;
        }
    }
    return out;
}

/// Bilinear is meant for intensity images, nearest for label masks.
template <typename Pixel>
Raster<Pixel> resize(const Raster<Pixel>& img, int target_w, int target_h, Interpolation mode) {
    if constexpr (requires { detail::PixelTraits<Pixel>::channels; }) {
        if (mode == Interpolation::bilinear) return resize_bilinear(img, target_w, target_h);
    } else {
        require(mode == Interpolation::nearest, "bilinear resize is only defined for intensity images");
    }
    return resize_nearest(img, target_w, target_h);
}

// ---------------------------------------------------------------------------
// Canonical sizing
// ---------------------------------------------------------------------------

struct CanonicalSizing {
    enum class Mode { fixed, round_up };
    Mode mode = Mode::fixed;
    int width = 832;
    int height = 576;

    bool operator==(const CanonicalSizing&) const = default;
};

inline int round_up_to_64(int v) { return ((v + 63) / 64) * 64; }

/// Fixed mode returns the configured size; round-up mode lifts each extent
/// to the next multiple of 64.
inline std::pair<int, int> canonical_size(int w, int h, const CanonicalSizing& sizing = {}) {
    require(w >= 1 && h >= 1, "image dimensions must be >= 1");
    if (sizing.mode == CanonicalSizing::Mode::fixed) return {sizing.width, sizing.height};
    return {round_up_to_64(w), round_up_to_64(h)};
}

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

inline GrayImage extract_red(const RgbImage& img) {
    GrayImage out(img.width(), img.height());
    auto src = img.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i][0] / 255.0);
    return out;
}

inline GrayImage to_grayscale(const RgbImage& img) {
    GrayImage out(img.width(), img.height());
    auto src = img.pixels();
    auto dst = out.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double l = 0.299 * src[i][0] + 0.587 * src[i][1] + 0.114 * src[i][2];
        dst[i] = static_cast<float>(std::clamp(l / 255.0, 0.0, 1.0));
    }
    return out;
}

/// Named float channels sharing one extent; the network input.
class FeatureStack {
public:
    FeatureStack() = default;
    FeatureStack(int width, int height) : width_(width), height_(height) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t channel_count() const noexcept { return channels_.size(); }

    void add(std::string name, GrayImage channel) {
        if (channels_.empty() && width_ == 0) {
            width_ = channel.width();
            height_ = channel.height();
        }
        require_shape(channel.width() == width_ && channel.height() == height_,
                      "feature channel '" + name + "' has mismatched dimensions");
        for (const auto& [n, _] : channels_)
            require(n != name, "duplicate feature channel '" + name + "'");
        channels_.emplace_back(std::move(name), std::move(channel));
    }

    const GrayImage& channel(const std::string& name) const {
        for (const auto& [n, c] : channels_)
            if (n == name) return c;
        throw UsageError("no feature channel named '" + name + "'");
    }
    const GrayImage& channel(std::size_t i) const { return channels_.at(i).second; }
    const std::string& name(std::size_t i) const { return channels_.at(i).first; }

    bool operator==(const FeatureStack&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::pair<std::string, GrayImage>> channels_;
};

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class Corner { top_left, top_right, bottom_left, bottom_right };

struct AugmentationRecipe {
    std::vector<Transform> base_transforms{Transform::identity, Transform::rot180, Transform::hflip,
                                           Transform::vflip};
    double crop_fraction = 0.75;
    std::vector<Corner> crop_anchors{Corner::top_left, Corner::top_right, Corner::bottom_left,
                                     Corner::bottom_right};
    std::vector<Transform> final_transforms{Transform::rot180, Transform::hflip, Transform::vflip};

    std::size_t variants_per_image() const {
        return base_transforms.size() +
               base_transforms.size() * crop_anchors.size() * final_transforms.size();
    }
};

struct AugmentedPair {
    RgbImage image;
    InstanceMask mask;
};

/// Deterministic augmentation. Output order: every base variant, then for
/// each base variant and each anchor a corner crop (resized back to the
/// input size) under each final transform. Image and mask always receive the
/// same geometry; the mask is resampled with nearest-neighbour.
inline std::vector<AugmentedPair> augment(const RgbImage& img, const InstanceMask& mask,
                                          const AugmentationRecipe& recipe = {}) {
    require_same_dims(img, mask, "augment");
    require(recipe.crop_fraction > 0.0 && recipe.crop_fraction <= 1.0,
            "crop fraction must lie in (0, 1]");
    const int w = img.width(), h = img.height();
    const int cw = std::max(1, static_cast<int>(std::lround(w * recipe.crop_fraction)));
    const int ch = std::max(1, static_cast<int>(std::lround(h * recipe.crop_fraction)));

    std::vector<AugmentedPair> out;
    out.reserve(recipe.variants_per_image());
    std::vector<AugmentedPair> bases;
    for (Transform t : recipe.base_transforms)
        bases.push_back({apply_transform(img, t), apply_transform(mask, t)});
    out.insert(out.end(), bases.begin(), bases.end());

    for (const auto& base : bases) {
        for (Corner c : recipe.crop_anchors) {
            const int x0 = (c == Corner::top_right || c == Corner::bottom_right) ? w - cw : 0;
            const int y0 = (c == Corner::bottom_left || c == Corner::bottom_right) ? h - ch : 0;
            const RgbImage ci = resize_bilinear(crop(base.image, x0, y0, cw, ch), w, h);
            const InstanceMask cm = resize_nearest(crop(base.mask, x0, y0, cw, ch), w, h);
            for (Transform t : recipe.final_transforms)
                out.push_back({apply_transform(ci, t), apply_transform(cm, t)});
        }
    }
    return out;
}

}  // namespace glandseg
