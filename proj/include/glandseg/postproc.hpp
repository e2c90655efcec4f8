#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "glandseg/raster.hpp"

namespace glandseg {

inline constexpr int kOtsuBins = 256;

/// Histogram bin of a probability: floor(256 p), clamped to [0, 255].
inline int otsu_bin(float p) {
    const int b = static_cast<int>(std::floor(static_cast<double>(p) * kOtsuBins));
    return std::clamp(b, 0, kOtsuBins - 1);
}

/// Between-class variance of the split {bins < k} / {bins >= k}, from exact
/// integer class statistics (counts and sums of bin indices). Bin indices
/// stand in for bin centres; the affine map does not move the argmax.
inline double between_class_variance(std::int64_t total_count, std::int64_t total_sum, std::int64_t n0,
                                     std::int64_t s0) {
    const std::int64_t n1 = total_count - n0;
    if (n0 == 0 || n1 == 0) return 0.0;
    const double w0 = static_cast<double>(n0) / total_count;
    const double w1 = static_cast<double>(n1) / total_count;
    const double mu0 = static_cast<double>(s0) / n0;
    const double mu1 = static_cast<double>(total_sum - s0) / n1;
    return w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
}

/// Otsu threshold over a 256-bin histogram of [0, 1]. Candidates are the bin
/// boundaries k/256, k = 1..255; the first maximiser wins. Maps with no
/// positive between-class variance (e.g. constant maps) return 0.5.
inline double otsu_threshold(const ProbabilityMap& p) {
    std::array<std::int64_t, kOtsuBins> hist{};
    for (float v : p.pixels()) ++hist[static_cast<std::size_t>(otsu_bin(v))];
    std::int64_t total = 0, total_sum = 0;
    for (int b = 0; b < kOtsuBins; ++b) {
        total += hist[b];
        total_sum += hist[b] * b;
    }
    double best = 0.0;
    int best_k = -1;
    std::int64_t n0 = 0, s0 = 0;
    for (int k = 1; k < kOtsuBins; ++k) {
        n0 += hist[k - 1];
        s0 += hist[k - 1] * (k - 1);
        const double v = between_class_variance(total, total_sum, n0, s0);
        if (v > best) {
            best = v;
            best_k = k;
        }
    }
    return best_k < 0 ? 0.5 : static_cast<double>(best_k) / kOtsuBins;
}

/// 1 where p > t.
inline BinaryMask binarize(const ProbabilityMap& p, double t) {
    BinaryMask m(p.width(), p.height());
    auto src = p.pixels();
    auto dst = m.pixels();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > t ? 1 : 0;
    return m;
}

namespace detail {

inline constexpr std::array<std::array<int, 2>, 4> kCross{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
inline constexpr std::array<std::array<int, 2>, 8> kRing{
    {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};

// Out-of-image neighbours are ignored by both erosion and dilation.
inline BinaryMask erode_cross(const BinaryMask& m) {
    BinaryMask out(m.width(), m.height());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m(x, y)) continue;
            bool keep = true;
            for (auto [dx, dy] : kCross) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || ny < 0 || nx >= m.width() || ny >= m.height()) continue;
                if (!m(nx, ny)) {
                    keep = false;
                    break;
                }
            }
            out(x, y) = keep ? 1 : 0;
        }
    return out;
}

inline BinaryMask dilate_cross(const BinaryMask& m) {
    BinaryMask out = m;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m(x, y)) continue;
            for (auto [dx, dy] : kCross) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || ny < 0 || nx >= m.width() || ny >= m.height()) continue;
                out(nx, ny) = 1;
            }
        }
    return out;
}

// Labels connected components of pixels equal to `value`, in raster order of
// their first pixel. Returns the component count.
template <std::size_t N>
int label_components(const BinaryMask& m, std::uint8_t value, const std::array<std::array<int, 2>, N>& nbrs,
                     InstanceMask& labels) {
    labels = InstanceMask(m.width(), m.height(), 0);
    int next = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) != value || labels(x, y) != 0) continue;
            labels(x, y) = ++next;
            queue.emplace_back(x, y);
            while (!queue.empty()) {
                auto [cx, cy] = queue.front();
                queue.pop_front();
                for (auto [dx, dy] : nbrs) {
                    const int nx = cx + dx, ny = cy + dy;
                    if (nx < 0 || ny < 0 || nx >= m.width() || ny >= m.height()) continue;
                    if (m(nx, ny) != value || labels(nx, ny) != 0) continue;
                    labels(nx, ny) = next;
                    queue.emplace_back(nx, ny);
                }
            }
        }
    return next;
}

}  // namespace detail

/// Opening with a 3x3 cross.
inline BinaryMask open_cross(const BinaryMask& m) { return detail::dilate_cross(detail::erode_cross(m)); }

/// Background regions not 4-connected to the image border become foreground.
inline BinaryMask fill_holes(const BinaryMask& m) {
    InstanceMask bg;
    const int n = detail::label_components(m, 0, detail::kCross, bg);
    std::vector<char> touches(static_cast<std::size_t>(n) + 1, 0);
    for (int x = 0; x < m.width(); ++x) {
        touches[static_cast<std::size_t>(bg(x, 0))] = 1;
        touches[static_cast<std::size_t>(bg(x, m.height() - 1))] = 1;
    }
    for (int y = 0; y < m.height(); ++y) {
        touches[static_cast<std::size_t>(bg(0, y))] = 1;
        touches[static_cast<std::size_t>(bg(m.width() - 1, y))] = 1;
    }
    BinaryMask out = m;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int l = bg.pixels()[i];
        if (l > 0 && !touches[static_cast<std::size_t>(l)]) out.pixels()[i] = 1;
    }
    return out;
}

/// Drops 8-connected foreground components smaller than min_area pixels.
inline BinaryMask remove_small_objects(const BinaryMask& m, std::size_t min_area) {
    InstanceMask fg;
    const int n = detail::label_components(m, 1, detail::kRing, fg);
    std::vector<std::size_t> area(static_cast<std::size_t>(n) + 1, 0);
    for (int l : fg.pixels()) ++area[static_cast<std::size_t>(l)];
    BinaryMask out = m;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int l = fg.pixels()[i];
        if (l > 0 && area[static_cast<std::size_t>(l)] < min_area) out.pixels()[i] = 0;
    }
    return out;
}

/// Opening, then hole filling, then removal of components with area below
/// min_area_frac of the image.
inline BinaryMask morph_cleanup(const BinaryMask& m, double min_area_frac = 0.001) {
    const auto min_area = static_cast<std::size_t>(std::ceil(min_area_frac * static_cast<double>(m.size())));
    return remove_small_objects(fill_holes(open_cross(m)), min_area);
}

/// 8-connected labelling; labels 1..n in raster order of each component's
/// first pixel.
inline InstanceMask extract_instances(const BinaryMask& m) {
    InstanceMask labels;
    detail::label_components(m, 1, detail::kRing, labels);
    return labels;
}

inline int instance_count(const InstanceMask& m) {
    int n = 0;
    for (int l : m.pixels()) n = std::max(n, l);
    return n;
}

}  // namespace glandseg
