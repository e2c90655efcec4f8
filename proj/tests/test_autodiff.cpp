#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace glandseg;
using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;
using testing_support::expect_gradients_match;
using testing_support::random_tensor;

namespace {

// Direct six-loop cross-correlation.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int stride,
                          int pad) {
    const int n = x.n(), c = x.c(), h = x.h(), wd = x.w(), o = w.n(), k = w.h();
    const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    Tensor<double> y(Shape{n, o, ho, wo});
    for (int bi = 0; bi < n; ++bi)
        for (int oc = 0; oc < o; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double s = b ? (*b)[static_cast<std::size_t>(oc)] : 0.0;
                    for (int ic = 0; ic < c; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                s += x.at(bi, ic, iy, ix) * w.at(oc, ic, ky, kx);
                            }
                    y.at(bi, oc, oy, ox) = s;
                }
    return y;
}

struct ConvCase {
    int n, c, h, w, o, k, stride, pad;
    bool bias;
};

}  // namespace

TEST(TensorTest, ShapeAndIndexing) {
    Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
    EXPECT_EQ(t.size(), 120u);
    EXPECT_EQ(t.rank(), 4);
    t.at(1, 2, 3, 4) = 7.0f;
    EXPECT_EQ(t[119], 7.0f);
    EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
    EXPECT_TRUE(t.all_finite());
    t[0] = NAN;
    EXPECT_FALSE(t.all_finite());
}

TEST(Conv2d, MatchesNaiveOracle) {
    std::mt19937_64 rng(1);
    for (const auto& cs : {ConvCase{2, 3, 7, 6, 4, 3, 1, 1, true}, ConvCase{1, 2, 8, 8, 3, 3, 2, 1, false},
                           ConvCase{2, 4, 5, 5, 2, 1, 1, 0, true}, ConvCase{1, 3, 9, 7, 2, 1, 2, 0, false},
                           ConvCase{1, 1, 6, 6, 1, 3, 1, 0, true}, ConvCase{2, 2, 7, 7, 3, 3, 2, 1, true}}) {
        const auto x = random_tensor(Shape{cs.n, cs.c, cs.h, cs.w}, rng);
        const auto w = random_tensor(Shape{cs.o, cs.c, cs.k, cs.k}, rng);
        const auto b = random_tensor(Shape{cs.o}, rng);
        Graph<double> g;
        const Var y = ad::conv2d(g, g.constant(x), g.constant(w), cs.bias ? g.constant(b) : Var{}, cs.stride, cs.pad);
        const auto ref = naive_conv(x, w, cs.bias ? &b : nullptr, cs.stride, cs.pad);
        ASSERT_EQ(g.value(y).shape(), ref.shape());
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(g.value(y)[i], ref[i], 1e-12);
    }
}

TEST(Conv2d, FloatMatchesDouble) {
    std::mt19937_64 rng(2);
    const auto x = random_tensor(Shape{2, 3, 8, 8}, rng);
    const auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
    Graph<float> g;
    const Var y = ad::conv2d(g, g.constant(x.cast<float>()), g.constant(w.cast<float>()), Var{}, 2, 1);
    const auto ref = naive_conv(x, w, nullptr, 2, 1);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(g.value(y)[i], ref[i], 1e-5);
}

TEST(Conv2d, ShapeErrors) {
    Graph<double> g;
    const Var x = g.constant(Tensor<double>(Shape{1, 2, 4, 4}));
    EXPECT_THROW(ad::conv2d(g, x, g.constant(Tensor<double>(Shape{1, 3, 3, 3})), Var{}), ShapeError);
    EXPECT_THROW(ad::conv2d(g, x, g.constant(Tensor<double>(Shape{1, 2, 5, 5})), Var{}), ShapeError);
    EXPECT_THROW(ad::conv2d(g, g.constant(Tensor<double>(Shape{2, 4, 4})), g.constant(Tensor<double>(Shape{1, 2, 3, 3})), Var{}),
                 ShapeError);
}

TEST(Gradients, Conv2d) {
    std::mt19937_64 rng(3);
    for (const auto& cs : {ConvCase{2, 2, 5, 4, 3, 3, 1, 1, true}, ConvCase{1, 2, 6, 6, 2, 3, 2, 1, true},
                           ConvCase{2, 3, 4, 4, 2, 1, 1, 0, true}, ConvCase{1, 2, 5, 5, 2, 1, 2, 0, false}}) {
        std::vector<Tensor<double>> in{random_tensor(Shape{cs.n, cs.c, cs.h, cs.w}, rng),
                                       random_tensor(Shape{cs.o, cs.c, cs.k, cs.k}, rng)};
        if (cs.bias) in.push_back(random_tensor(Shape{cs.o}, rng));
        expect_gradients_match(in, [&](Graph<double>& g, const std::vector<Var>& v) {
            return ad::conv2d(g, v[0], v[1], cs.bias ? v[2] : Var{}, cs.stride, cs.pad);
        });
    }
}

TEST(Gradients, PoolingAndUpsampling) {
    std::mt19937_64 rng(4);
    expect_gradients_match({random_tensor(Shape{2, 2, 4, 6}, rng)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::maxpool2(g, v[0]); });
    expect_gradients_match({random_tensor(Shape{2, 2, 3, 2}, rng)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::upsample2(g, v[0]); });
}

TEST(Gradients, BatchNormTrainMode) {
    std::mt19937_64 rng(5);
    ad::Parameter<double> rm{"rm", Tensor<double>(Shape{3}, 0.0), false};
    ad::Parameter<double> rv{"rv", Tensor<double>(Shape{3}, 1.0), false};
    expect_gradients_match(
        {random_tensor(Shape{2, 3, 3, 4}, rng), random_tensor(Shape{3}, rng, 0.5, 1.5), random_tensor(Shape{3}, rng)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
            return ad::batchnorm(g, v[0], v[1], v[2], rm, rv, ad::Mode::train);
        },
        1e-5);
}

TEST(Gradients, Elementwise) {
    std::mt19937_64 rng(6);
    const Shape s{2, 2, 3, 3};
    expect_gradients_match({random_tensor(s, rng)}, [](Graph<double>& g, const std::vector<Var>& v) { return ad::relu(g, v[0]); });
    expect_gradients_match({random_tensor(s, rng, -4, 4)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::sigmoid(g, v[0]); });
    expect_gradients_match({random_tensor(s, rng)}, [](Graph<double>& g, const std::vector<Var>& v) { return ad::exp(g, v[0]); });
    expect_gradients_match({random_tensor(s, rng), random_tensor(s, rng)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::add(g, v[0], v[1]); });
    expect_gradients_match({random_tensor(s, rng), random_tensor(s, rng)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::sub(g, v[0], v[1]); });
    expect_gradients_match({random_tensor(s, rng), random_tensor(s, rng)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::mul(g, v[0], v[1]); });
    expect_gradients_match({random_tensor(s, rng)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::affine(g, v[0], -2.5, 0.75); });
    expect_gradients_match({random_tensor(s, rng), random_tensor(Shape{2, 3, 3, 3}, rng)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::concat_channels(g, v[0], v[1]); });
    expect_gradients_match({random_tensor(s, rng)}, [](Graph<double>& g, const std::vector<Var>& v) { return ad::sum(g, v[0]); });
    expect_gradients_match({random_tensor(s, rng)},
                           [](Graph<double>& g, const std::vector<Var>& v) { return ad::mean_reduce(g, v[0]); });
}

TEST(Gradients, LossesOfProbabilities) {
    std::mt19937_64 rng(7);
    const Shape s{2, 1, 4, 4};
    Tensor<double> target(s);
    for (auto& v : target.values()) v = (rng() & 1) ? 1.0 : 0.0;
    expect_gradients_match({random_tensor(s, rng, -3, 3)}, [&](Graph<double>& g, const std::vector<Var>& v) {
        return ad::binary_cross_entropy(g, target, ad::sigmoid(g, v[0]));
    });
    expect_gradients_match({random_tensor(s, rng, -3, 3)}, [&](Graph<double>& g, const std::vector<Var>& v) {
        return ad::soft_dice(g, target, ad::sigmoid(g, v[0]));
    });
}

TEST(BatchNorm, TrainNormalisesAndUpdatesRunningStats) {
    std::mt19937_64 rng(8);
    const auto x = random_tensor(Shape{3, 2, 4, 4}, rng, 2.0, 6.0);
    ad::Parameter<double> rm{"rm", Tensor<double>(Shape{2}, 0.0), false};
    ad::Parameter<double> rv{"rv", Tensor<double>(Shape{2}, 1.0), false};
    Graph<double> g;
    const Var y = ad::batchnorm(g, g.constant(x), g.constant(Tensor<double>(Shape{2}, 1.0)),
                                g.constant(Tensor<double>(Shape{2}, 0.0)), rm, rv, ad::Mode::train);
    for (int c = 0; c < 2; ++c) {
        double mean = 0, var = 0, xm = 0, xv = 0;
        const double m = 3 * 16;
        for (int n = 0; n < 3; ++n)
            for (int i = 0; i < 16; ++i) {
                mean += g.value(y).at(n, c, i / 4, i % 4) / m;
                xm += x.at(n, c, i / 4, i % 4) / m;
            }
        for (int n = 0; n < 3; ++n)
            for (int i = 0; i < 16; ++i) {
                var += std::pow(g.value(y).at(n, c, i / 4, i % 4) - mean, 2) / m;
                xv += std::pow(x.at(n, c, i / 4, i % 4) - xm, 2) / m;
            }
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, xv / (xv + 1e-5), 1e-9);
        EXPECT_NEAR(rm.value[static_cast<std::size_t>(c)], 0.1 * xm, 1e-12);
        EXPECT_NEAR(rv.value[static_cast<std::size_t>(c)], 0.9 + 0.1 * xv, 1e-12);
    }
}

TEST(BatchNorm, EvalUsesRunningStats) {
    ad::Parameter<double> rm{"rm", Tensor<double>(Shape{1}, 2.0), false};
    ad::Parameter<double> rv{"rv", Tensor<double>(Shape{1}, 4.0), false};
    Graph<double> g;
    const Var y = ad::batchnorm(g, g.constant(Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{2.0, 6.0})),
                                g.constant(Tensor<double>(Shape{1}, 3.0)), g.constant(Tensor<double>(Shape{1}, 1.0)), rm,
                                rv, ad::Mode::eval);
    EXPECT_NEAR(g.value(y)[0], 1.0, 1e-9);
    EXPECT_NEAR(g.value(y)[1], 3.0 * 4.0 / std::sqrt(4.0 + 1e-5) + 1.0, 1e-9);
    EXPECT_EQ(rm.value[0], 2.0);
}

TEST(MaxPool, PicksFirstMaximum) {
    Graph<double> g;
    const Var x = g.constant(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 5, 5, 0}));
    const Var y = ad::maxpool2(g, x);
    EXPECT_EQ(g.value(y)[0], 5.0);
}

TEST(GraphTest, BackwardNeedsScalar) {
    ad::Parameter<double> p{"p", Tensor<double>(Shape{2}, 1.0)};
    Graph<double> g;
    const Var v = g.parameter(p);
    EXPECT_THROW(g.backward(v), ShapeError);
}

TEST(GraphTest, UnusedParameterGetsZeroGradient) {
    ad::Parameter<double> a{"a", Tensor<double>(Shape{2}, 3.0)};
    ad::Parameter<double> b{"b", Tensor<double>(Shape{2}, 1.0)};
    Graph<double> g;
    const Var va = g.parameter(a);
    g.parameter(b);
    const auto grads = g.backward(ad::sum(g, ad::mul(g, va, va)));
    EXPECT_EQ(grads.at("a")[0], 6.0);
    EXPECT_EQ(grads.at("b")[0], 0.0);
}

TEST(GraphTest, SharedNodeAccumulates) {
    ad::Parameter<double> a{"a", Tensor<double>(Shape{1}, 2.0)};
    Graph<double> g;
    const Var va = g.parameter(a);
    const auto grads = g.backward(ad::sum(g, ad::add(g, ad::mul(g, va, va), va)));
    EXPECT_EQ(grads.at("a")[0], 5.0);
}

TEST(GraphTest, FiniteCheckFlagsNan) {
    Graph<double> g(true);
    EXPECT_THROW(g.constant(Tensor<double>(Shape{1}, NAN)), NumericError);
    Graph<double> lax;
    EXPECT_NO_THROW(lax.constant(Tensor<double>(Shape{1}, NAN)));
}

TEST(Optim, AdamDescendsOnSquare) {
    ad::ParameterSet<double> ps;
    ps.add("w", Tensor<double>(Shape{1}, 1.0));
    ad::AdamState<double> st;
    double prev = 1.0;
    for (int i = 0; i < 5; ++i) {
        ad::Gradients<double> grads{{"w", Tensor<double>(Shape{1}, 2.0 * ps.get("w").value[0])}};
        ad::adam_step(ps, grads, st, {0.1});
        EXPECT_LT(ps.get("w").value[0], prev);
        prev = ps.get("w").value[0];
    }
    // First bias-corrected step has magnitude lr.
    ad::ParameterSet<double> one;
    one.add("w", Tensor<double>(Shape{1}, 1.0));
    ad::AdamState<double> s1;
    ad::adam_step(one, {{"w", Tensor<double>(Shape{1}, 2.0)}}, s1, {0.1});
    EXPECT_NEAR(one.get("w").value[0], 0.9, 1e-6);
}

TEST(Optim, SgdStep) {
    ad::ParameterSet<double> ps;
    ps.add("w", Tensor<double>(Shape{1}, 1.0));
    ps.add("buf", Tensor<double>(Shape{1}, 1.0), false);
    ad::sgd_step(ps, {{"w", Tensor<double>(Shape{1}, 2.0)}, {"buf", Tensor<double>(Shape{1}, 2.0)}}, 0.1);
    EXPECT_NEAR(ps.get("w").value[0], 0.8, 1e-15);
    EXPECT_EQ(ps.get("buf").value[0], 1.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    std::mt19937_64 rng(9);
    ad::ParameterSet<float> ps;
    ps.add("conv.weight", random_tensor(Shape{2, 3, 3, 3}, rng).cast<float>());
    ps.add("bn.running_mean", random_tensor(Shape{2}, rng).cast<float>(), false);
    const auto bytes = ad::encode_checkpoint(ps);
    EXPECT_EQ(bytes.substr(0, bytes.find("data\n") + 5),
              "GLANDSEG-CHECKPOINT 1\ntensors 2\nconv.weight 1 4 2 3 3 3\nbn.running_mean 0 1 2\ndata\n");
    EXPECT_EQ(bytes.size(), bytes.find("data\n") + 5 + 4 * (54 + 2));
    const auto back = ad::decode_checkpoint<float>(bytes);
    EXPECT_TRUE(back == ps);
    EXPECT_EQ(ad::encode_checkpoint(back), bytes);

    testing_support::TempDir dir("ckpt");
    ad::save_checkpoint(dir.path() / "m.ckpt", ps);
    EXPECT_EQ(testing_support::read_bytes(dir.path() / "m.ckpt"), bytes);
    EXPECT_TRUE(ad::load_checkpoint<float>(dir.path() / "m.ckpt") == ps);
}

TEST(Checkpoint, CorruptInputIsDataError) {
    EXPECT_THROW(ad::decode_checkpoint<float>("nonsense\n"), DataError);
    ad::ParameterSet<float> ps;
    ps.add("a", Tensor<float>(Shape{3}, 1.0f));
    auto bytes = ad::encode_checkpoint(ps);
    EXPECT_THROW(ad::decode_checkpoint<float>(bytes.substr(0, bytes.size() - 1)), DataError);
    EXPECT_THROW(ad::decode_checkpoint<float>(bytes + "x"), DataError);
    EXPECT_THROW(ad::load_checkpoint<float>("/nonexistent/model.ckpt"), DataError);
}
