#pragma once

// Object-level segmentation metrics for instance masks (label 0 =
// background, any positive label = one object; labels need not be
// contiguous).
//
// Conventions that keep every metric total:
//   dice of two empty sets                1
//   hausdorff against an empty set        image diagonal sqrt(W^2 + H^2)
//   object dice, both masks empty         1
//   object hausdorff, both masks empty    0
//   detection F1, both masks empty        1 (precision = recall = 1)
//   an empty side contributes 0 to the corresponding half of the object
//   dice / hausdorff sums

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "glandseg/raster.hpp"

namespace glandseg {

struct Point {
    int x = 0;
    int y = 0;
    auto operator<=>(const Point&) const = default;
};

using PixelSet = std::vector<Point>;

/// 2|a ∩ b| / (|a| + |b|) from counts.
inline double dice_from_counts(std::size_t intersection, std::size_t a, std::size_t b) {
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(intersection) / static_cast<double>(a + b);
}

inline double dice(PixelSet a, PixelSet b) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    PixelSet common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    return dice_from_counts(common.size(), a.size(), b.size());
}

namespace detail {

inline constexpr double kFar = std::numeric_limits<double>::infinity();

// Exact 1-D squared distance transform (lower envelope of parabolas) over
// the finite entries of f.
inline void squared_dt_1d(const std::vector<double>& f, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    std::vector<int> v;
    std::vector<double> z;
    v.reserve(f.size());
    z.reserve(f.size() + 1);
    for (int q = 0; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        while (!v.empty()) {
            const int p = v.back();
            const double s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
            if (s <= z.back()) {
                v.pop_back();
                z.pop_back();
            } else {
                break;
            }
        }
        if (v.empty()) {
            v.push_back(q);
            z.assign(1, -kFar);
        } else {
            const int p = v.back();
            const double s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
            v.push_back(q);
            z.push_back(s);
        }
    }
    d.assign(f.size(), kFar);
    if (v.empty()) return;
    z.push_back(kFar);
    std::size_t k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

// Squared Euclidean distance to the nearest target cell for every cell of a
// w x h grid.
inline std::vector<double> squared_edt(const std::vector<char>& target, int w, int h) {
    std::vector<double> grid(static_cast<std::size_t>(w) * h, kFar);
    std::vector<double> f, d;
    for (int x = 0; x < w; ++x) {
        f.assign(static_cast<std::size_t>(h), kFar);
        for (int y = 0; y < h; ++y)
            if (target[static_cast<std::size_t>(y) * w + x]) f[y] = 0.0;
        squared_dt_1d(f, d);
        for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
    }
    for (int y = 0; y < h; ++y) {
        f.assign(grid.begin() + static_cast<std::ptrdiff_t>(y) * w, grid.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
        squared_dt_1d(f, d);
        std::copy(d.begin(), d.end(), grid.begin() + static_cast<std::ptrdiff_t>(y) * w);
    }
    return grid;
}

}  // namespace detail

/// Symmetric Hausdorff distance between two non-empty pixel sets, exact,
/// via a distance transform over the joint bounding box. Returns
/// `empty_penalty` when either set is empty.
inline double hausdorff(const PixelSet& a, const PixelSet& b, double empty_penalty) {
    if (a.empty() || b.empty()) return empty_penalty;
    int x0 = a[0].x, x1 = a[0].x, y0 = a[0].y, y1 = a[0].y;
    for (const auto* s : {&a, &b})
        for (const auto& p : *s) {
            x0 = std::min(x0, p.x);
            x1 = std::max(x1, p.x);
            y0 = std::min(y0, p.y);
            y1 = std::max(y1, p.y);
        }
    const int w = x1 - x0 + 1, h = y1 - y0 + 1;
    auto directed = [&](const PixelSet& from, const PixelSet& to) {
        std::vector<char> target(static_cast<std::size_t>(w) * h, 0);
        for (const auto& p : to) target[static_cast<std::size_t>(p.y - y0) * w + (p.x - x0)] = 1;
        const auto edt = detail::squared_edt(target, w, h);
        double worst = 0.0;
        for (const auto& p : from) worst = std::max(worst, edt[static_cast<std::size_t>(p.y - y0) * w + (p.x - x0)]);
        return worst;
    };
    return std::sqrt(std::max(directed(a, b), directed(b, a)));
}

inline double image_diagonal(int w, int h) { return std::sqrt(double(w) * w + double(h) * h); }

/// Per-object statistics of a prediction / ground-truth pair.
class ObjectTable {
public:
    ObjectTable(const InstanceMask& prediction, const InstanceMask& ground_truth)
        : width_(prediction.width()), height_(prediction.height()) {
        require_same_dims(prediction, ground_truth, "metrics");
        std::map<int, std::size_t> pi, gi;
        auto index_of = [](std::map<int, std::size_t>& m, std::vector<int>& labels, int l) {
            auto [it, inserted] = m.try_emplace(l, labels.size());
            if (inserted) labels.push_back(l);
            return it->second;
        };
        // Labels are collected in first-seen order, then sorted.
        for (int l : prediction.pixels())
            if (l > 0) index_of(pi, pred_labels_, l);
        for (int l : ground_truth.pixels())
            if (l > 0) index_of(gi, gt_labels_, l);
        std::sort(pred_labels_.begin(), pred_labels_.end());
        std::sort(gt_labels_.begin(), gt_labels_.end());
        for (std::size_t i = 0; i < pred_labels_.size(); ++i) pi[pred_labels_[i]] = i;
        for (std::size_t j = 0; j < gt_labels_.size(); ++j) gi[gt_labels_[j]] = j;

        pred_area_.assign(pred_labels_.size(), 0);
        gt_area_.assign(gt_labels_.size(), 0);
        pred_points_.resize(pred_labels_.size());
        gt_points_.resize(gt_labels_.size());
        overlap_.assign(pred_labels_.size(), std::vector<std::size_t>(gt_labels_.size(), 0));
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                const int lp = prediction(x, y), lg = ground_truth(x, y);
                std::size_t ip = 0, ig = 0;
                if (lp > 0) {
                    ip = pi[lp];
                    ++pred_area_[ip];
                    pred_points_[ip].push_back({x, y});
                }
                if (lg > 0) {
                    ig = gi[lg];
                    ++gt_area_[ig];
                    gt_points_[ig].push_back({x, y});
                }
                if (lp > 0 && lg > 0) ++overlap_[ip][ig];
            }
    }

    std::size_t pred_count() const noexcept { return pred_labels_.size(); }
    std::size_t gt_count() const noexcept { return gt_labels_.size(); }
    std::size_t pred_area(std::size_t i) const { return pred_area_[i]; }
    std::size_t gt_area(std::size_t j) const { return gt_area_[j]; }
    std::size_t overlap(std::size_t i, std::size_t j) const { return overlap_[i][j]; }
    const PixelSet& pred_points(std::size_t i) const { return pred_points_[i]; }
    const PixelSet& gt_points(std::size_t j) const { return gt_points_[j]; }
    double diagonal() const { return image_diagonal(width_, height_); }

    /// Ground-truth object with the largest overlap with prediction i; equal
    /// overlaps go to the smaller object, then to the lower label. -1 when
    /// nothing overlaps.
    long best_gt_for(std::size_t i) const {
        long best = -1;
        for (std::size_t j = 0; j < gt_count(); ++j) {
            if (overlap_[i][j] == 0) continue;
            const auto b = static_cast<std::size_t>(best);
            if (best < 0 || overlap_[i][j] > overlap_[i][b] ||
                (overlap_[i][j] == overlap_[i][b] && gt_area_[j] < gt_area_[b]))
                best = static_cast<long>(j);
        }
        return best;
    }

    long best_pred_for(std::size_t j) const {
        long best = -1;
        for (std::size_t i = 0; i < pred_count(); ++i) {
            if (overlap_[i][j] == 0) continue;
            const auto b = static_cast<std::size_t>(best);
            if (best < 0 || overlap_[i][j] > overlap_[b][j] ||
                (overlap_[i][j] == overlap_[b][j] && pred_area_[i] < pred_area_[b]))
                best = static_cast<long>(i);
        }
        return best;
    }

private:
    int width_;
    int height_;
    std::vector<int> pred_labels_;
    std::vector<int> gt_labels_;
    std::vector<std::size_t> pred_area_;
    std::vector<std::size_t> gt_area_;
    std::vector<PixelSet> pred_points_;
    std::vector<PixelSet> gt_points_;
    std::vector<std::vector<std::size_t>> overlap_;
};

namespace detail {

// Area-weighted, max-overlap-matched average of `term` over both directions.
template <typename Term>
double object_level(const ObjectTable& t, Term&& term, double unmatched) {
    double pred_side = 0.0, gt_side = 0.0;
    std::size_t pred_total = 0, gt_total = 0;
    for (std::size_t i = 0; i < t.pred_count(); ++i) pred_total += t.pred_area(i);
    for (std::size_t j = 0; j < t.gt_count(); ++j) gt_total += t.gt_area(j);
    for (std::size_t i = 0; i < t.pred_count(); ++i) {
        const long j = t.best_gt_for(i);
        const double v = j < 0 ? unmatched : term(i, static_cast<std::size_t>(j));
        pred_side += static_cast<double>(t.pred_area(i)) / pred_total * v;
    }
    for (std::size_t j = 0; j < t.gt_count(); ++j) {
        const long i = t.best_pred_for(j);
        const double v = i < 0 ? unmatched : term(static_cast<std::size_t>(i), j);
        gt_side += static_cast<double>(t.gt_area(j)) / gt_total * v;
    }
    return 0.5 * (pred_side + gt_side);
}

}  // namespace detail

inline double object_dice(const ObjectTable& t) {
    if (t.pred_count() == 0 && t.gt_count() == 0) return 1.0;
    return detail::object_level(
        t, [&](std::size_t i, std::size_t j) { return dice_from_counts(t.overlap(i, j), t.pred_area(i), t.gt_area(j)); },
        0.0);
}

inline double object_dice(const InstanceMask& prediction, const InstanceMask& ground_truth) {
    return object_dice(ObjectTable(prediction, ground_truth));
}

inline double object_hausdorff(const ObjectTable& t) {
    if (t.pred_count() == 0 && t.gt_count() == 0) return 0.0;
    const double penalty = t.diagonal();
    return detail::object_level(
        t, [&](std::size_t i, std::size_t j) { return hausdorff(t.pred_points(i), t.gt_points(j), penalty); },
        penalty);
}

inline double object_hausdorff(const InstanceMask& prediction, const InstanceMask& ground_truth) {
    return object_hausdorff(ObjectTable(prediction, ground_truth));
}

struct Detection {
    double f1 = 0;
    double precision = 0;
    double recall = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

/// A prediction is a true positive when it covers more than half of its
/// maximum-overlap ground-truth object and that object is still unclaimed;
/// claims are made greedily in order of decreasing overlap.
inline Detection detection_f1(const ObjectTable& t) {
    Detection d;
    if (t.pred_count() == 0 && t.gt_count() == 0) {
        d.f1 = d.precision = d.recall = 1.0;
        return d;
    }
    struct Candidate {
        std::size_t overlap, pred, gt;
    };
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < t.pred_count(); ++i) {
        const long j = t.best_gt_for(i);
        if (j < 0) continue;
        const auto ju = static_cast<std::size_t>(j);
        if (2 * t.overlap(i, ju) > t.gt_area(ju)) cands.push_back({t.overlap(i, ju), i, ju});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        return std::tie(b.overlap, a.pred, a.gt) < std::tie(a.overlap, b.pred, b.gt);
    });
    std::vector<char> claimed(t.gt_count(), 0);
    for (const auto& c : cands) {
        if (claimed[c.gt]) continue;
        claimed[c.gt] = 1;
        ++d.tp;
    }
    d.fp = t.pred_count() - d.tp;
    d.fn = t.gt_count() - d.tp;
    d.precision = d.tp + d.fp > 0 ? static_cast<double>(d.tp) / static_cast<double>(d.tp + d.fp) : 0.0;
    d.recall = d.tp + d.fn > 0 ? static_cast<double>(d.tp) / static_cast<double>(d.tp + d.fn) : 0.0;
    d.f1 = d.precision + d.recall > 0 ? 2 * d.precision * d.recall / (d.precision + d.recall) : 0.0;
    return d;
}

inline Detection detection_f1(const InstanceMask& prediction, const InstanceMask& ground_truth) {
    return detection_f1(ObjectTable(prediction, ground_truth));
}

struct MetricsReport {
    double object_dice = 0;
    double object_hausdorff = 0;
    double f1 = 0;
    double precision = 0;
    double recall = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

inline MetricsReport evaluate(const InstanceMask& prediction, const InstanceMask& ground_truth) {
    const ObjectTable t(prediction, ground_truth);
    const auto det = detection_f1(t);
    return {object_dice(t), object_hausdorff(t), det.f1, det.precision, det.recall, det.tp, det.fp, det.fn};
}

/// Corpus summary: per-image mean of the ratios, sums of the counts.
inline MetricsReport corpus_mean(const std::vector<MetricsReport>& per_image) {
    MetricsReport m;
    if (per_image.empty()) return m;
    for (const auto& r : per_image) {
        m.object_dice += r.object_dice;
        m.object_hausdorff += r.object_hausdorff;
        m.f1 += r.f1;
        m.precision += r.precision;
        m.recall += r.recall;
        m.tp += r.tp;
        m.fp += r.fp;
        m.fn += r.fn;
    }
    const double n = static_cast<double>(per_image.size());
    m.object_dice /= n;
    m.object_hausdorff /= n;
    m.f1 /= n;
    m.precision /= n;
    m.recall /= n;
    return m;
}

/// CSV with one row per image plus a trailing "mean" row.
inline std::string metrics_csv(const std::vector<std::string>& names, const std::vector<MetricsReport>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "image,object_dice,object_hausdorff,f1,precision,recall,tp,fp,fn\n";
    auto line = [&](const std::string& name, const MetricsReport& r) {
        os << name << ',' << r.object_dice << ',' << r.object_hausdorff << ',' << r.f1 << ',' << r.precision << ','
           << r.recall << ',' << r.tp << ',' << r.fp << ',' << r.fn << '\n';
    };
    for (std::size_t i = 0; i < rows.size(); ++i) line(names.at(i), rows[i]);
    line("mean", corpus_mean(rows));
    return os.str();
}

}  // namespace glandseg
