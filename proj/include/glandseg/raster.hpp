#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glandseg/error.hpp"

namespace glandseg {

/// Row-major 2-D grid of pixels. Every image type in the library is one of
/// these; geometric operations are written once against the template.
template <typename Pixel>
class Raster {
public:
    using value_type = Pixel;

    Raster() = default;
    Raster(int width, int height, Pixel fill = Pixel{}) : width_(width), height_(height) {
        require(width >= 1 && height >= 1, "raster dimensions must be >= 1");
        data_.assign(static_cast<std::size_t>(width) * height, fill);
    }
    Raster(int width, int height, std::vector<Pixel> data)
        : width_(width), height_(height), data_(std::move(data)) {
        require(width >= 1 && height >= 1, "raster dimensions must be >= 1");
        require_shape(data_.size() == static_cast<std::size_t>(width) * height,
                      "raster data length does not match dimensions");
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    Pixel& operator()(int x, int y) { return data_[index(x, y)]; }
    const Pixel& operator()(int x, int y) const { return data_[index(x, y)]; }

    /// Clamped access: coordinates outside the raster replicate the edge.
    const Pixel& at_clamped(int x, int y) const {
        x = x < 0 ? 0 : (x >= width_ ? width_ - 1 : x);
        y = y < 0 ? 0 : (y >= height_ ? height_ - 1 : y);
        return data_[index(x, y)];
    }

    std::span<Pixel> pixels() noexcept { return data_; }
    std::span<const Pixel> pixels() const noexcept { return data_; }
    std::vector<Pixel>& data() noexcept { return data_; }
    const std::vector<Pixel>& data() const noexcept { return data_; }

    bool same_dims(const auto& other) const noexcept {
        return width_ == other.width() && height_ == other.height();
    }

    bool operator==(const Raster&) const = default;

private:
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * width_ + x;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<Pixel> data_;
};

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB raster.
using RgbImage = Raster<Rgb>;
/// Single-channel float raster; values are expected in [0, 1].
using GrayImage = Raster<float>;
/// Per-pixel gland probability in [0, 1].
using ProbabilityMap = Raster<float>;
/// Per-pixel {0, 1}.
using BinaryMask = Raster<std::uint8_t>;
/// Per-pixel instance label, 0 = background.
using InstanceMask = Raster<std::int32_t>;

inline void require_same_dims(const auto& a, const auto& b, const std::string& what) {
    require_shape(a.width() == b.width() && a.height() == b.height(), what + ": dimension mismatch");
}

}  // namespace glandseg
