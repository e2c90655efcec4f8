#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "glandseg/autodiff/graph.hpp"

namespace glandseg::ad {

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMajor<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMajor<T>>;

inline void require_rank4(const auto& t, const char* op) {
    require_shape(t.rank() == 4, std::string(op) + ": expected a rank-4 tensor, got " + to_string(t.shape()));
}

// Unfolds one image (C x H x W) into a (C*K*K) x (Ho*Wo) matrix.
template <typename T>
void im2col(const T* img, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                                ? img[(static_cast<std::size_t>(ci) * h + iy) * w + ix]
                                                : T{0};
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* img) {
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        img[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += row[oy * wo + ox];
                    }
                }
            }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Cross-correlation of x (N,C,H,W) with w (O,C,K,K) plus an optional
/// per-output-channel bias b (O).
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int stride = 1, int pad = 0) {
    const auto& X = g.value(x);
    const auto& W = g.value(w);
    detail::require_rank4(X, "conv2d input");
    detail::require_rank4(W, "conv2d kernel");
    require(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and pad >= 0");
    const int n = X.n(), c = X.c(), h = X.h(), wd = X.w();
    const int o = W.n(), k = W.h();
    require_shape(W.c() == c, "conv2d: kernel expects " + std::to_string(W.c()) + " input channels, got " +
                                  std::to_string(c));
    require_shape(W.w() == k, "conv2d: kernel must be square");
    require_shape(h + 2 * pad - k >= 0 && wd + 2 * pad - k >= 0,
                  "conv2d: kernel larger than padded input " + to_string(X.shape()));
    if (b) require_shape(g.value(b).size() == static_cast<std::size_t>(o), "conv2d: bias length mismatch");
    const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    const int ckk = c * k * k, hw = ho * wo;
    const bool direct = (k == 1 && stride == 1 && pad == 0);

    Tensor<T> Y(Shape{n, o, ho, wo});
    std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(ckk) * hw);
    detail::ConstMapMat<T> Wm(W.data(), o, ckk);
    for (int bi = 0; bi < n; ++bi) {
        const T* xin = X.data() + static_cast<std::size_t>(bi) * c * h * wd;
        const T* src = xin;
        if (!direct) {
            detail::im2col(xin, c, h, wd, k, stride, pad, ho, wo, cols.data());
            src = cols.data();
        }
        detail::MapMat<T> Ym(Y.data() + static_cast<std::size_t>(bi) * o * hw, o, hw);
        Ym.noalias() = Wm * detail::ConstMapMat<T>(src, ckk, hw);
        if (b) {
            const auto& B = g.value(b);
            for (int oc = 0; oc < o; ++oc) Ym.row(oc).array() += B[oc];
        }
    }

    std::vector<int> inputs{x.id, w.id};
    if (b) inputs.push_back(b.id);
    return g.record("conv2d", std::move(Y), inputs,
                    [=](Graph<T>& gr, const typename Graph<T>::Node& self) {
                        const auto& Xv = gr.value(x);
                        const auto& Wv = gr.value(w);
                        const auto& dY = self.grad;
                        const bool need_x = gr.needs_grad(x.id), need_w = gr.needs_grad(w.id);
                        const bool need_b = b && gr.needs_grad(b.id);
                        std::vector<T> col(direct ? 0 : static_cast<std::size_t>(ckk) * hw);
                        std::vector<T> dcol(static_cast<std::size_t>(ckk) * hw);
                        detail::ConstMapMat<T> Wm2(Wv.data(), o, ckk);
                        for (int bi = 0; bi < n; ++bi) {
                            detail::ConstMapMat<T> dYm(dY.data() + static_cast<std::size_t>(bi) * o * hw, o, hw);
                            const T* xin = Xv.data() + static_cast<std::size_t>(bi) * c * h * wd;
                            if (need_w) {
                                const T* src = xin;
                                if (!direct) {
                                    detail::im2col(xin, c, h, wd, k, stride, pad, ho, wo, col.data());
                                    src = col.data();
                                }
                                detail::MapMat<T> dWm(gr.grad(w.id).data(), o, ckk);
                                dWm.noalias() += dYm * detail::ConstMapMat<T>(src, ckk, hw).transpose();
                            }
                            if (need_x) {
                                T* dx = gr.grad(x.id).data() + static_cast<std::size_t>(bi) * c * h * wd;
                                if (direct) {
                                    detail::MapMat<T>(dx, ckk, hw).noalias() += Wm2.transpose() * dYm;
                                } else {
                                    detail::MapMat<T> dColm(dcol.data(), ckk, hw);
                                    dColm.noalias() = Wm2.transpose() * dYm;
                                    detail::col2im_add(dcol.data(), c, h, wd, k, stride, pad, ho, wo, dx);
                                }
                            }
                            if (need_b) {
                                auto& dB = gr.grad(b.id);
                                for (int oc = 0; oc < o; ++oc) {
                                    double s = 0;
                                    for (int i = 0; i < hw; ++i) s += dYm(oc, i);
                                    dB[oc] += static_cast<T>(s);
                                }
                            }
                        }
                    });
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// 2x2 max pooling with stride 2; ties route the gradient to the first
/// maximum in raster order.
template <typename T>
Var maxpool2(Graph<T>& g, Var x) {
    const auto& X = g.value(x);
    detail::require_rank4(X, "maxpool2");
    require_shape(X.h() % 2 == 0 && X.w() % 2 == 0, "maxpool2: spatial extents must be even, got " +
                                                        to_string(X.shape()));
    const int n = X.n(), c = X.c(), ho = X.h() / 2, wo = X.w() / 2;
    Tensor<T> Y(Shape{n, c, ho, wo});
    std::vector<std::size_t> argmax(Y.size());
    std::size_t out = 0;
    for (int bi = 0; bi < n; ++bi)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < ho; ++y)
                for (int xx = 0; xx < wo; ++xx, ++out) {
                    std::size_t best = 0;
                    T bv{};
                    bool first = true;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx =
                                ((static_cast<std::size_t>(bi) * c + ci) * X.h() + 2 * y + dy) * X.w() + 2 * xx + dx;
                            if (first || X[idx] > bv) {
                                bv = X[idx];
                                best = idx;
                                first = false;
                            }
                        }
                    Y[out] = bv;
                    argmax[out] = best;
                }
    return g.record("maxpool2", std::move(Y), {x.id},
                    [x, argmax = std::move(argmax)](Graph<T>& gr, const typename Graph<T>::Node& self) {
                        auto& dX = gr.grad(x.id);
                        for (std::size_t i = 0; i < argmax.size(); ++i) dX[argmax[i]] += self.grad[i];
                    });
}

/// Nearest-neighbour x2 upsampling: every pixel becomes a 2x2 block.
template <typename T>
Var upsample2(Graph<T>& g, Var x) {
    const auto& X = g.value(x);
    detail::require_rank4(X, "upsample2");
    const int n = X.n(), c = X.c(), h = X.h(), w = X.w();
    Tensor<T> Y(Shape{n, c, 2 * h, 2 * w});
    for (int bi = 0; bi < n; ++bi)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) Y.at(bi, ci, y, xx) = X.at(bi, ci, y / 2, xx / 2);
    return g.record("upsample2", std::move(Y), {x.id}, [=](Graph<T>& gr, const typename Graph<T>::Node& self) {
        auto& dX = gr.grad(x.id);
        for (int bi = 0; bi < n; ++bi)
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < 2 * h; ++y)
                    for (int xx = 0; xx < 2 * w; ++xx) dX.at(bi, ci, y / 2, xx / 2) += self.grad.at(bi, ci, y, xx);
    });
}

// ---------------------------------------------------------------------------
// Batch normalisation
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

/// Per-channel normalisation. Train mode standardises with the batch
/// statistics (over batch and spatial dims) and folds them into the running
/// buffers with momentum 0.9; eval mode uses the running buffers.
template <typename T>
Var batchnorm(Graph<T>& g, Var x, Var gamma, Var beta, Parameter<T>& running_mean, Parameter<T>& running_var,
              Mode mode, double eps = 1e-5, double momentum = 0.9) {
    const auto& X = g.value(x);
    detail::require_rank4(X, "batchnorm");
    const int n = X.n(), c = X.c(), hw = X.h() * X.w();
    require_shape(g.value(gamma).size() == static_cast<std::size_t>(c) &&
                      g.value(beta).size() == static_cast<std::size_t>(c) &&
                      running_mean.value.size() == static_cast<std::size_t>(c) &&
                      running_var.value.size() == static_cast<std::size_t>(c),
                  "batchnorm: parameter length does not match channel count " + std::to_string(c));
    const auto& G = g.value(gamma);
    const auto& B = g.value(beta);
    const double m = static_cast<double>(n) * hw;
    Tensor<T> Y(X.shape());
    Tensor<T> xhat(X.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(c));
    for (int ci = 0; ci < c; ++ci) {
        double mean, var;
        if (mode == Mode::train) {
            double s = 0;
            for (int bi = 0; bi < n; ++bi)
                for (int i = 0; i < hw; ++i) s += X[(static_cast<std::size_t>(bi) * c + ci) * hw + i];
            mean = s / m;
            double v = 0;
            for (int bi = 0; bi < n; ++bi)
                for (int i = 0; i < hw; ++i) {
                    const double d = X[(static_cast<std::size_t>(bi) * c + ci) * hw + i] - mean;
                    v += d * d;
                }
            var = v / m;
            running_mean.value[ci] = static_cast<T>(momentum * running_mean.value[ci] + (1 - momentum) * mean);
            running_var.value[ci] = static_cast<T>(momentum * running_var.value[ci] + (1 - momentum) * var);
        } else {
            mean = running_mean.value[ci];
            var = running_var.value[ci];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[ci] = is;
        for (int bi = 0; bi < n; ++bi)
            for (int i = 0; i < hw; ++i) {
                const std::size_t idx = (static_cast<std::size_t>(bi) * c + ci) * hw + i;
                const double xh = (X[idx] - mean) * is;
                xhat[idx] = static_cast<T>(xh);
                Y[idx] = static_cast<T>(G[ci] * xh + B[ci]);
            }
    }
    return g.record(mode == Mode::train ? "batchnorm[train]" : "batchnorm[eval]", std::move(Y),
                    {x.id, gamma.id, beta.id},
                    [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                        Graph<T>& gr, const typename Graph<T>::Node& self) {
                        const auto& dY = self.grad;
                        const auto& Gv = gr.value(gamma);
                        for (int ci = 0; ci < c; ++ci) {
                            double sum_dy = 0, sum_dy_xh = 0;
                            for (int bi = 0; bi < n; ++bi)
                                for (int i = 0; i < hw; ++i) {
                                    const std::size_t idx = (static_cast<std::size_t>(bi) * c + ci) * hw + i;
                                    sum_dy += dY[idx];
                                    sum_dy_xh += static_cast<double>(dY[idx]) * xhat[idx];
                                }
                            if (gr.needs_grad(gamma.id)) gr.grad(gamma.id)[ci] += static_cast<T>(sum_dy_xh);
                            if (gr.needs_grad(beta.id)) gr.grad(beta.id)[ci] += static_cast<T>(sum_dy);
                            if (!gr.needs_grad(x.id)) continue;
                            auto& dX = gr.grad(x.id);
                            const double scale = Gv[ci] * inv_std[ci];
                            for (int bi = 0; bi < n; ++bi)
                                for (int i = 0; i < hw; ++i) {
                                    const std::size_t idx = (static_cast<std::size_t>(bi) * c + ci) * hw + i;
                                    if (mode == Mode::train)
                                        dX[idx] += static_cast<T>(
                                            scale * (dY[idx] - sum_dy / m - xhat[idx] * sum_dy_xh / m));
                                    else
                                        dX[idx] += static_cast<T>(scale * dY[idx]);
                                }
                        }
                    });
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
Var relu(Graph<T>& g, Var x) {
    Tensor<T> Y = g.value(x);
    for (auto& v : Y.values()) v = v > T{0} ? v : T{0};
    return g.record("relu", std::move(Y), {x.id}, [x](Graph<T>& gr, const typename Graph<T>::Node& self) {
        auto& dX = gr.grad(x.id);
        for (std::size_t i = 0; i < dX.size(); ++i)
            if (self.value[i] > T{0}) dX[i] += self.grad[i];
    });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
    Tensor<T> Y = g.value(x);
    for (auto& v : Y.values()) {
        if (v >= T{0}) {
            v = T{1} / (T{1} + std::exp(-v));
        } else {
            const T e = std::exp(v);
            v = e / (T{1} + e);
        }
    }
    return g.record("sigmoid", std::move(Y), {x.id}, [x](Graph<T>& gr, const typename Graph<T>::Node& self) {
        auto& dX = gr.grad(x.id);
        for (std::size_t i = 0; i < dX.size(); ++i) {
            const T s = self.value[i];
            dX[i] += self.grad[i] * s * (T{1} - s);
        }
    });
}

template <typename T>
Var exp(Graph<T>& g, Var x) {
    Tensor<T> Y = g.value(x);
    for (auto& v : Y.values()) v = std::exp(v);
    return g.record("exp", std::move(Y), {x.id}, [x](Graph<T>& gr, const typename Graph<T>::Node& self) {
        auto& dX = gr.grad(x.id);
        for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += self.grad[i] * self.value[i];
    });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
    require_shape(g.value(a).shape() == g.value(b).shape(), "add: shape mismatch " +
                                                                to_string(g.value(a).shape()) + " vs " +
                                                                to_string(g.value(b).shape()));
    Tensor<T> Y = g.value(a);
    const auto& Bv = g.value(b);
    for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += Bv[i];
    return g.record("add", std::move(Y), {a.id, b.id}, [a, b](Graph<T>& gr, const typename Graph<T>::Node& self) {
        for (Var v : {a, b}) {
            if (!gr.needs_grad(v.id)) continue;
            auto& d = gr.grad(v.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
    });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
    require_shape(g.value(a).shape() == g.value(b).shape(), "sub: shape mismatch");
    Tensor<T> Y = g.value(a);
    const auto& Bv = g.value(b);
    for (std::size_t i = 0; i < Y.size(); ++i) Y[i] -= Bv[i];
    return g.record("sub", std::move(Y), {a.id, b.id}, [a, b](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (gr.needs_grad(a.id)) {
            auto& d = gr.grad(a.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
        if (gr.needs_grad(b.id)) {
            auto& d = gr.grad(b.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
    require_shape(g.value(a).shape() == g.value(b).shape(), "mul: shape mismatch");
    Tensor<T> Y = g.value(a);
    const auto& Bv = g.value(b);
    for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= Bv[i];
    return g.record("mul", std::move(Y), {a.id, b.id}, [a, b](Graph<T>& gr, const typename Graph<T>::Node& self) {
        const auto& Av = gr.value(a);
        const auto& Bv2 = gr.value(b);
        if (gr.needs_grad(a.id)) {
            auto& d = gr.grad(a.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * Bv2[i];
        }
        if (gr.needs_grad(b.id)) {
            auto& d = gr.grad(b.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * Av[i];
        }
    });
}

/// y = alpha * x + beta, elementwise.
template <typename T>
Var affine(Graph<T>& g, Var x, double alpha, double beta = 0.0) {
    Tensor<T> Y = g.value(x);
    for (auto& v : Y.values()) v = static_cast<T>(alpha * v + beta);
    return g.record("affine", std::move(Y), {x.id}, [x, alpha](Graph<T>& gr, const typename Graph<T>::Node& self) {
        auto& dX = gr.grad(x.id);
        for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += static_cast<T>(alpha * self.grad[i]);
    });
}

/// Concatenates rank-4 tensors along the channel axis.
template <typename T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    detail::require_rank4(A, "concat_channels");
    detail::require_rank4(B, "concat_channels");
    require_shape(A.n() == B.n() && A.h() == B.h() && A.w() == B.w(),
                  "concat_channels: batch/spatial mismatch " + to_string(A.shape()) + " vs " + to_string(B.shape()));
    const int n = A.n(), ca = A.c(), cb = B.c();
    const std::size_t hw = static_cast<std::size_t>(A.h()) * A.w();
    Tensor<T> Y(Shape{n, ca + cb, A.h(), A.w()});
    for (int bi = 0; bi < n; ++bi) {
        std::copy_n(A.data() + bi * ca * hw, ca * hw, Y.data() + bi * (ca + cb) * hw);
        std::copy_n(B.data() + bi * cb * hw, cb * hw, Y.data() + (bi * (ca + cb) + ca) * hw);
    }
    return g.record("concat_channels", std::move(Y), {a.id, b.id},
                    [=](Graph<T>& gr, const typename Graph<T>::Node& self) {
                        for (int bi = 0; bi < n; ++bi) {
                            if (gr.needs_grad(a.id)) {
                                T* d = gr.grad(a.id).data() + bi * ca * hw;
                                const T* s = self.grad.data() + bi * (ca + cb) * hw;
                                for (std::size_t i = 0; i < ca * hw; ++i) d[i] += s[i];
                            }
                            if (gr.needs_grad(b.id)) {
                                T* d = gr.grad(b.id).data() + bi * cb * hw;
                                const T* s = self.grad.data() + (bi * (ca + cb) + ca) * hw;
                                for (std::size_t i = 0; i < cb * hw; ++i) d[i] += s[i];
                            }
                        }
                    });
}

/// Sum of all elements, accumulated in double.
template <typename T>
Var sum(Graph<T>& g, Var x) {
    double s = 0;
    for (T v : g.value(x).values()) s += v;
    return g.record("sum", Tensor<T>::scalar(static_cast<T>(s)), {x.id},
                    [x](Graph<T>& gr, const typename Graph<T>::Node& self) {
                        auto& dX = gr.grad(x.id);
                        for (auto& d : dX.values()) d += self.grad[0];
                    });
}

/// Mean of all elements, accumulated in double.
template <typename T>
Var mean_reduce(Graph<T>& g, Var x) {
    const auto& X = g.value(x);
    double s = 0;
    for (T v : X.values()) s += v;
    const double count = static_cast<double>(X.size());
    return g.record("mean", Tensor<T>::scalar(static_cast<T>(s / count)), {x.id},
                    [x, count](Graph<T>& gr, const typename Graph<T>::Node& self) {
                        auto& dX = gr.grad(x.id);
                        const T d = static_cast<T>(self.grad[0] / count);
                        for (auto& v : dX.values()) v += d;
                    });
}

// ---------------------------------------------------------------------------
// Segmentation losses
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy (natural log) of probabilities p against a
/// {0,1} target, with p clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var binary_cross_entropy(Graph<T>& g, const Tensor<T>& target, Var p) {
    const auto& P = g.value(p);
    require_shape(P.shape() == target.shape(), "cross entropy: shape mismatch " + to_string(P.shape()) + " vs " +
                                                   to_string(target.shape()));
    const double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
    double s = 0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double q = std::clamp(static_cast<double>(P[i]), lo, hi);
        const double t = target[i];
        s -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    }
    const double count = static_cast<double>(P.size());
    return g.record("cross_entropy", Tensor<T>::scalar(static_cast<T>(s / count)), {p.id},
                    [p, target, lo, hi, count](Graph<T>& gr, const typename Graph<T>::Node& self) {
                        const auto& Pv = gr.value(p);
                        auto& dP = gr.grad(p.id);
                        const double up = self.grad[0] / count;
                        for (std::size_t i = 0; i < Pv.size(); ++i) {
                            const double q = Pv[i];
                            if (q <= lo || q >= hi) continue;
                            const double t = target[i];
                            dP[i] += static_cast<T>(up * (-t / q + (1.0 - t) / (1.0 - q)));
                        }
                    });
}

/// Soft Dice (2 sum(g p) + s) / (sum(g) + sum(p) + s) over the whole tensor.
template <typename T>
Var soft_dice(Graph<T>& g, const Tensor<T>& target, Var p, double smooth = 1e-6) {
    const auto& P = g.value(p);
    require_shape(P.shape() == target.shape(), "soft dice: shape mismatch");
    double inter = 0, sg = 0, sp = 0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        inter += static_cast<double>(target[i]) * P[i];
        sg += target[i];
        sp += P[i];
    }
    const double num = 2 * inter + smooth, den = sg + sp + smooth;
    return g.record("soft_dice", Tensor<T>::scalar(static_cast<T>(num / den)), {p.id},
                    [p, target, num, den](Graph<T>& gr, const typename Graph<T>::Node& self) {
                        auto& dP = gr.grad(p.id);
                        const double up = self.grad[0];
                        for (std::size_t i = 0; i < dP.size(); ++i)
                            dP[i] += static_cast<T>(up * (2.0 * target[i] * den - num) / (den * den));
                    });
}

}  // namespace glandseg::ad
