#pragma once

// Finite-difference verification of the model's backward pass.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "glandseg/model.hpp"
#include "glandseg/random.hpp"
#include "glandseg/train.hpp"

namespace glandseg {

struct GradCheckOptions {
    int samples = 100;
    int size = 16;
    int batch = 2;
    double step = 1e-6;
    /// Denominator floor of the relative error.
    double floor = 1e-8;
    std::uint64_t seed = 3;
};

struct GradCheckEntry {
    std::string parameter;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double relative_error = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_relative_error = 0;
};

/// Small configuration used for gradient checks.
inline ModelConfig gradcheck_model_config() {
    ModelConfig c;
    c.encoder_widths = {4, 6, 8};
    c.coarse_head_stage = 2;
    c.seed = 5;
    return c;
}

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward-pass gradients of the total loss with central
/// differences for `samples` randomly chosen trainable scalars, in double
/// precision and train mode, on random inputs and a random binary target.
inline GradCheckReport gradient_check(const ModelConfig& cfg = gradcheck_model_config(), const GradCheckOptions& opt = {}) {
    require(opt.samples >= 1 && opt.size >= 1 && opt.batch >= 1 && opt.step > 0, "invalid gradient-check options");
    LinkNet<double> model(cfg);
    Rng rng(opt.seed);
    const int n = opt.batch, s = opt.size;
    ad::Tensor<double> input(ad::Shape{n, cfg.input_channels, s, s});
    ad::Tensor<double> lbp(ad::Shape{n, 1, s, s});
    ad::Tensor<double> target(ad::Shape{n, 1, s, s});
    for (auto& v : input.values()) v = rng.uniform();
    for (auto& v : lbp.values()) v = rng.uniform();
    // Blobby target: a random disc per image so both classes are present.
    for (int b = 0; b < n; ++b) {
        const double cx = rng.uniform(0.3 * s, 0.7 * s), cy = rng.uniform(0.3 * s, 0.7 * s), r = rng.uniform(0.2 * s, 0.35 * s);
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) target.at(b, 0, y, x) = std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r ? 1.0 : 0.0;
    }
    const auto coarse = downsample_nearest(target, cfg.coarse_factor());
    const ad::Tensor<double>* lbp_ptr = cfg.lbp_injection ? &lbp : nullptr;

    auto loss_at = [&]() {
        ad::Graph<double> g;
        auto out = model.forward(g, input, lbp_ptr, ad::Mode::train);
        return g.value(total_loss(g, target, coarse, out.fine, out.coarse).total).item();
    };
    LossReport unused;
    const auto grads = loss_gradients(model, input, lbp_ptr, target, coarse, unused);

    // Sample scalars uniformly over all trainable entries.
    std::vector<std::pair<std::size_t, std::size_t>> flat;
    auto& params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p)
        if (params[p].trainable)
            for (std::size_t i = 0; i < params[p].value.size(); ++i) flat.emplace_back(p, i);
    rng.shuffle(flat);
    flat.resize(std::min(flat.size(), static_cast<std::size_t>(opt.samples)));
    std::sort(flat.begin(), flat.end());

    GradCheckReport report;
    for (const auto& [p, i] : flat) {
        auto& param = params[p];
        double& w = param.value.values()[i];
        const double saved = w;
        w = saved + opt.step;
        const double up = loss_at();
        w = saved - opt.step;
        const double down = loss_at();
        w = saved;
        GradCheckEntry e;
        e.parameter = param.name;
        e.index = i;
        e.analytic = grads.at(param.name).values()[i];
        e.numeric = (up - down) / (2 * opt.step);
        e.relative_error = relative_error(e.analytic, e.numeric, opt.floor);
        report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace glandseg
