#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace glandseg;

namespace {

InstanceMask box(int w, int h, std::initializer_list<std::array<int, 5>> boxes) {
    InstanceMask m(w, h, 0);
    for (const auto& b : boxes)
        for (int y = b[1]; y < b[1] + b[3]; ++y)
            for (int x = b[0]; x < b[0] + b[2]; ++x) m(x, y) = b[4];
    return m;
}

PixelSet random_points(std::mt19937_64& rng, int n, int extent) {
    PixelSet s;
    for (int i = 0; i < n; ++i)
        s.push_back({static_cast<int>(rng() % static_cast<unsigned>(extent)), static_cast<int>(rng() % static_cast<unsigned>(extent))});
    return s;
}

double brute_hausdorff(const PixelSet& a, const PixelSet& b) {
    oracle::Object oa, ob;
    for (auto p : a) oa.pixels.emplace_back(p.x, p.y);
    for (auto p : b) ob.pixels.emplace_back(p.x, p.y);
    return oracle::set_hausdorff(oa, ob);
}

InstanceMask permuted(const InstanceMask& m, std::mt19937_64& rng) {
    std::vector<int> perm(64);
    std::iota(perm.begin(), perm.end(), 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    InstanceMask out = m;
    for (auto& v : out.pixels())
        if (v > 0) v = perm[static_cast<std::size_t>(v - 1)];
    return out;
}

}  // namespace

TEST(Dice, Examples) {
    PixelSet a;
    for (int i = 0; i < 100; ++i) a.push_back({i % 10, i / 10});
    PixelSet b(a.begin(), a.begin() + 50);
    EXPECT_NEAR(dice(a, b), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(dice(a, a), 1.0);
    EXPECT_EQ(dice({}, {}), 1.0);
    EXPECT_EQ(dice(a, {}), 0.0);
    EXPECT_EQ(dice({{0, 0}}, {{1, 1}}), 0.0);
    EXPECT_EQ(dice(b, a), dice(a, b));
}

TEST(Hausdorff, Examples) {
    EXPECT_EQ(hausdorff({{0, 0}}, {{3, 4}}, 99.0), 5.0);
    PixelSet a{{1, 1}, {2, 5}, {7, 3}};
    EXPECT_EQ(hausdorff(a, a, 99.0), 0.0);
    EXPECT_EQ(hausdorff(a, {}, 99.0), 99.0);
    EXPECT_EQ(image_diagonal(3, 4), 5.0);
}

TEST(Hausdorff, MatchesBruteForce) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 500; ++t) {
        const auto a = random_points(rng, 1 + static_cast<int>(rng() % 20), 30);
        const auto b = random_points(rng, 1 + static_cast<int>(rng() % 20), 30);
        const double h = hausdorff(a, b, 1e9);
        EXPECT_NEAR(h, brute_hausdorff(a, b), 1e-9);
        EXPECT_EQ(h, hausdorff(b, a, 1e9));
    }
}

TEST(ObjectDice, Examples) {
    const auto gt = box(20, 20, {{0, 0, 10, 10, 1}});
    const auto half = box(20, 20, {{0, 0, 10, 5, 1}});
    EXPECT_NEAR(object_dice(half, gt), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(object_dice(gt, gt), 1.0);
    const InstanceMask empty(20, 20, 0);
    EXPECT_EQ(object_dice(empty, empty), 1.0);
    EXPECT_EQ(object_dice(empty, gt), 0.0);
    EXPECT_EQ(object_dice(gt, empty), 0.0);
}

TEST(ObjectHausdorff, Examples) {
    const auto gt = box(20, 20, {{2, 2, 5, 5, 1}});
    const auto moved = box(20, 20, {{5, 6, 5, 5, 1}});
    EXPECT_NEAR(object_hausdorff(moved, gt), 5.0, 1e-12);
    EXPECT_EQ(object_hausdorff(gt, gt), 0.0);
    const InstanceMask empty(20, 20, 0);
    EXPECT_EQ(object_hausdorff(empty, empty), 0.0);
    // Only the ground-truth side contributes, at the diagonal penalty.
    EXPECT_NEAR(object_hausdorff(empty, gt), 0.5 * std::sqrt(800.0), 1e-12);
}

TEST(DetectionF1, Examples) {
    const auto gt = box(30, 30, {{0, 0, 5, 5, 1}, {10, 10, 5, 5, 2}});
    EXPECT_EQ(detection_f1(gt, gt).f1, 1.0);
    const auto extra = box(30, 30, {{0, 0, 5, 5, 1}, {10, 10, 5, 5, 2}, {20, 20, 3, 3, 3}});
    const auto d = detection_f1(extra, gt);
    EXPECT_NEAR(d.precision, 2.0 / 3.0, 1e-12);
    EXPECT_EQ(d.recall, 1.0);
    EXPECT_NEAR(d.f1, 0.8, 1e-12);
    EXPECT_EQ(d.tp, 2u);
    EXPECT_EQ(d.fp, 1u);
    EXPECT_EQ(d.fn, 0u);

    const auto g = box(10, 10, {{0, 0, 4, 4, 1}});
    const auto exactly_half = box(10, 10, {{0, 0, 4, 2, 1}});
    const auto over_half = box(10, 10, {{0, 0, 4, 3, 1}});
    EXPECT_EQ(detection_f1(exactly_half, g).tp, 0u);
    EXPECT_EQ(detection_f1(exactly_half, g).f1, 0.0);
    EXPECT_EQ(detection_f1(over_half, g).tp, 1u);
    const InstanceMask empty(10, 10, 0);
    EXPECT_EQ(detection_f1(empty, empty).f1, 1.0);
    EXPECT_EQ(detection_f1(empty, g).fn, 1u);
}

TEST(ObjectTableTest, EqualOverlapPrefersSmallerObject) {
    // The prediction covers 4 pixels of each ground-truth object; the larger
    // object has the lower label.
    const auto gt = box(12, 4, {{0, 0, 6, 4, 1}, {6, 0, 2, 4, 2}});
    const auto pred = box(12, 4, {{5, 0, 2, 4, 7}});
    const ObjectTable t(pred, gt);
    EXPECT_EQ(t.best_gt_for(0), 1);
    const auto swapped = box(12, 4, {{0, 0, 6, 4, 2}, {6, 0, 2, 4, 1}});
    EXPECT_NEAR(object_dice(pred, gt), object_dice(pred, swapped), 1e-15);
    EXPECT_EQ(ObjectTable(pred, InstanceMask(12, 4, 0)).best_gt_for(0), -1);
}

TEST(Metrics, MatchBruteForceOnRandomMasks) {
    std::mt19937_64 rng(22);
    for (int t = 0; t < 300; ++t) {
        const int w = 1 + static_cast<int>(rng() % 8), h = 1 + static_cast<int>(rng() % 8);
        const auto pred = oracle::random_blobs(w, h, 3, rng);
        const auto gt = oracle::random_blobs(w, h, 3, rng);
        const auto r = evaluate(pred, gt);
        EXPECT_NEAR(r.object_dice, oracle::object_dice(pred, gt), 1e-9);
        EXPECT_NEAR(r.object_hausdorff, oracle::object_hausdorff(pred, gt), 1e-9);
        const auto c = oracle::detection(pred, gt);
        EXPECT_NEAR(r.f1, c.f1, 1e-9);
        EXPECT_EQ(r.tp, c.tp);
        EXPECT_EQ(r.fp, c.fp);
        EXPECT_EQ(r.fn, c.fn);
    }
}

TEST(Metrics, SelfComparison) {
    std::mt19937_64 rng(23);
    for (int t = 0; t < 100; ++t) {
        const auto m = oracle::random_blobs(12, 12, 4, rng);
        const auto r = evaluate(m, m);
        EXPECT_NEAR(r.object_dice, 1.0, 1e-12);
        EXPECT_EQ(r.object_hausdorff, 0.0);
        EXPECT_EQ(r.f1, 1.0);
    }
}

TEST(Metrics, InvariantUnderRelabeling) {
    std::mt19937_64 rng(24);
    for (int t = 0; t < 100; ++t) {
        const auto pred = oracle::random_blobs(10, 10, 4, rng);
        const auto gt = oracle::random_blobs(10, 10, 4, rng);
        const auto base = evaluate(pred, gt);
        const auto r = evaluate(permuted(pred, rng), permuted(gt, rng));
        EXPECT_NEAR(r.object_dice, base.object_dice, 1e-12) << "trial " << t;
        EXPECT_NEAR(r.f1, base.f1, 1e-12);
        EXPECT_EQ(r.tp, base.tp);
    }
}

TEST(Metrics, InvariantUnderTranslation) {
    std::mt19937_64 rng(25);
    for (int t = 0; t < 50; ++t) {
        const auto pred = oracle::random_blobs(8, 8, 3, rng);
        const auto gt = oracle::random_blobs(8, 8, 3, rng);
        InstanceMask sp(8, 8, 0), sg(8, 8, 0);
        // Shift by the free margin so nothing leaves the frame.
        int min_x = 8, min_y = 8;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                if (pred(x, y) || gt(x, y)) {
                    min_x = std::min(min_x, x);
                    min_y = std::min(min_y, y);
                }
        if (min_x == 8) continue;
        for (int y = min_y; y < 8; ++y)
            for (int x = min_x; x < 8; ++x) {
                sp(x - min_x, y - min_y) = pred(x, y);
                sg(x - min_x, y - min_y) = gt(x, y);
            }
        const auto a = evaluate(pred, gt), b = evaluate(sp, sg);
        EXPECT_NEAR(a.object_dice, b.object_dice, 1e-12);
        EXPECT_NEAR(a.object_hausdorff, b.object_hausdorff, 1e-12);
        EXPECT_EQ(a.f1, b.f1);
    }
}

TEST(Metrics, CorpusMeanAndCsv) {
    MetricsReport a{1.0, 2.0, 1.0, 1.0, 1.0, 2, 0, 0};
    MetricsReport b{0.5, 4.0, 0.0, 0.0, 0.0, 0, 1, 3};
    const auto m = corpus_mean({a, b});
    EXPECT_EQ(m.object_dice, 0.75);
    EXPECT_EQ(m.object_hausdorff, 3.0);
    EXPECT_EQ(m.tp, 2u);
    EXPECT_EQ(m.fn, 3u);
    const auto csv = metrics_csv({"x", "y"}, {a, b});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "image,object_dice,object_hausdorff,f1,precision,recall,tp,fp,fn");
    EXPECT_NE(csv.find("\ny,0.5,4,0,0,0,0,1,3\n"), std::string::npos);
    EXPECT_NE(csv.find("\nmean,0.75,3,0.5,0.5,0.5,2,1,3\n"), std::string::npos);
    EXPECT_THROW(evaluate(InstanceMask(3, 3), InstanceMask(4, 3)), ShapeError);
}
