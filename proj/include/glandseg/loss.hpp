#pragma once

#include <cmath>

#include "glandseg/autodiff/graph.hpp"
#include "glandseg/autodiff/ops.hpp"

namespace glandseg {

inline constexpr double kDiceSmoothing = 1e-6;

struct LossReport {
    double l1_coarse = 0;
    double l2_fine = 0;
    /// Always 2 * l1_coarse + l2_fine.
    double total = 0;
    double ce_fine = 0;
    double dice_fine = 0;

    static LossReport from_parts(double l1, double l2, double ce, double dice) {
        return {l1, l2, 2.0 * l1 + l2, ce, dice};
    }
};

/// Graph nodes of the dual loss.
struct LossVars {
    ad::Var l1_coarse;
    ad::Var l2_fine;
    ad::Var total;
    ad::Var ce_fine;
    ad::Var dice_fine;
};

/// CE(g, p) - exp(1 + D(g, p)) as graph nodes; returns {loss, ce, dice}.
template <typename T>
std::array<ad::Var, 3> combined_loss(ad::Graph<T>& g, const ad::Tensor<T>& target, ad::Var p,
                                     double smooth = kDiceSmoothing) {
    ad::Var ce = ad::binary_cross_entropy(g, target, p);
    ad::Var dice = ad::soft_dice(g, target, p, smooth);
    ad::Var loss = ad::sub(g, ce, ad::exp(g, ad::affine(g, dice, 1.0, 1.0)));
    return {loss, ce, dice};
}

/// L1 on the coarse head, L2 on the fine head, total = 2 L1 + L2.
template <typename T>
LossVars total_loss(ad::Graph<T>& g, const ad::Tensor<T>& target_fine, const ad::Tensor<T>& target_coarse,
                    ad::Var fine, ad::Var coarse) {
    auto [l1, ce1, d1] = combined_loss(g, target_coarse, coarse);
    auto [l2, ce2, d2] = combined_loss(g, target_fine, fine);
    ad::Var total = ad::add(g, ad::affine(g, l1, 2.0), l2);
    return {l1, l2, total, ce2, d2};
}

template <typename T>
LossReport report(const ad::Graph<T>& g, const LossVars& v) {
    return LossReport::from_parts(g.value(v.l1_coarse).item(), g.value(v.l2_fine).item(), g.value(v.ce_fine).item(),
                                  g.value(v.dice_fine).item());
}

// Value-only evaluation, always in double precision.

template <typename T>
double cross_entropy(const ad::Tensor<T>& target, const ad::Tensor<T>& p) {
    ad::Graph<double> g;
    return g.value(ad::binary_cross_entropy(g, target.template cast<double>(), g.constant(p.template cast<double>())))
        .item();
}

template <typename T>
double soft_dice(const ad::Tensor<T>& target, const ad::Tensor<T>& p, double smooth = kDiceSmoothing) {
    ad::Graph<double> g;
    return g.value(ad::soft_dice(g, target.template cast<double>(), g.constant(p.template cast<double>()), smooth))
        .item();
}

template <typename T>
double combined_loss(const ad::Tensor<T>& target, const ad::Tensor<T>& p, double smooth = kDiceSmoothing) {
    ad::Graph<double> g;
    auto r = combined_loss(g, target.template cast<double>(), g.constant(p.template cast<double>()), smooth);
    return g.value(r[0]).item();
}

template <typename T>
LossReport total_loss(const ad::Tensor<T>& target_fine, const ad::Tensor<T>& target_coarse, const ad::Tensor<T>& fine,
                      const ad::Tensor<T>& coarse) {
    ad::Graph<double> g;
    auto v = total_loss(g, target_fine.template cast<double>(), target_coarse.template cast<double>(),
                        g.constant(fine.template cast<double>()), g.constant(coarse.template cast<double>()));
    return report(g, v);
}

}  // namespace glandseg
