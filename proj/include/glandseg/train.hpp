#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "glandseg/autodiff/optim.hpp"
#include "glandseg/imaging.hpp"
#include "glandseg/loss.hpp"
#include "glandseg/model.hpp"
#include "glandseg/random.hpp"

namespace glandseg {

struct Sample {
    FeatureStack stack;
    InstanceMask mask;
};

enum class Optimizer { adam, sgd };

struct TrainOptions {
    int epochs = 30;
    int batch = 2;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    std::uint64_t seed = 7;
    /// Validate every op output and gradient for NaN/Inf.
    bool check_finite = false;
};

struct EpochReport {
    int epoch = 0;
    LossReport train;
    std::optional<double> val_total;
};

struct TrainResult {
    /// Parameters of the epoch with the lowest validation loss (training
    /// loss when no validation set is given); the initial parameters when
    /// no epoch ran.
    ad::ParameterSet<float> best;
    int best_epoch = 0;
    std::vector<EpochReport> history;
};

namespace detail {

template <typename T>
struct PackedBatch {
    ad::Tensor<T> input;
    ad::Tensor<T> lbp;
    ad::Tensor<T> target_fine;
    ad::Tensor<T> target_coarse;
};

template <typename T>
PackedBatch<T> pack_batch(const ModelConfig& cfg, const std::vector<Sample>& data, std::span<const std::size_t> idx) {
    const int n = static_cast<int>(idx.size());
    const int w = data[idx[0]].stack.width(), h = data[idx[0]].stack.height();
    PackedBatch<T> b{ad::Tensor<T>(ad::Shape{n, cfg.input_channels, h, w}), ad::Tensor<T>(ad::Shape{n, 1, h, w}),
                     ad::Tensor<T>(ad::Shape{n, 1, h, w}), {}};
    for (int i = 0; i < n; ++i) {
        const auto& s = data[idx[static_cast<std::size_t>(i)]];
        pack_stack(s.stack, cfg.input_channels, b.input, b.lbp, i, cfg.lbp_injection);
        pack_mask(s.mask, b.target_fine, i);
    }
    b.target_coarse = downsample_nearest(b.target_fine, cfg.coarse_factor());
    return b;
}

inline void validate_dataset(const ModelConfig& cfg, const std::vector<Sample>& data, const char* what) {
    if (data.empty()) return;
    const int w = data[0].stack.width(), h = data[0].stack.height();
    for (const auto& s : data) {
        require_shape(s.stack.width() == w && s.stack.height() == h, std::string(what) + ": samples differ in size");
        require_same_dims(s.stack, s.mask, what);
    }
    require_shape(w % cfg.size_multiple() == 0 && h % cfg.size_multiple() == 0,
                  std::string(what) + ": extents " + std::to_string(w) + "x" + std::to_string(h) +
                      " are not divisible by " + std::to_string(cfg.size_multiple()));
}

}  // namespace detail

/// One forward/backward pass in train mode; returns the gradients and fills
/// `report`. Throws NumericError when the loss is not finite.
template <typename T>
ad::Gradients<T> loss_gradients(LinkNet<T>& model, const ad::Tensor<T>& input, const ad::Tensor<T>* lbp,
                                const ad::Tensor<T>& target_fine, const ad::Tensor<T>& target_coarse,
                                LossReport& report_out, bool check_finite = false) {
    ad::Graph<T> g(check_finite);
    auto out = model.forward(g, input, lbp, ad::Mode::train);
    auto lv = total_loss(g, target_fine, target_coarse, out.fine, out.coarse);
    report_out = report(g, lv);
    if (!std::isfinite(report_out.total)) {
        std::ostringstream os;
        os << "non-finite training loss (l1=" << report_out.l1_coarse << ", l2=" << report_out.l2_fine
           << ", ce=" << report_out.ce_fine << ", dice=" << report_out.dice_fine << ")";
        throw NumericError(os.str());
    }
    return g.backward(lv.total);
}

/// Dual loss of a dataset in eval mode, averaged over batches.
template <typename T>
LossReport evaluate_loss(LinkNet<T>& model, const std::vector<Sample>& data, int batch) {
    const auto& cfg = model.config();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    LossReport acc;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
        auto b = detail::pack_batch<T>(cfg, data, std::span<const std::size_t>(order).subspan(start, end - start));
        ad::Graph<T> g;
        auto out = model.forward(g, b.input, cfg.lbp_injection ? &b.lbp : nullptr, ad::Mode::eval);
        const auto r = report(g, total_loss(g, b.target_fine, b.target_coarse, out.fine, out.coarse));
        acc.l1_coarse += r.l1_coarse;
        acc.l2_fine += r.l2_fine;
        acc.ce_fine += r.ce_fine;
        acc.dice_fine += r.dice_fine;
        ++batches;
    }
    if (batches == 0) return acc;
    return LossReport::from_parts(acc.l1_coarse / batches, acc.l2_fine / batches, acc.ce_fine / batches,
                                  acc.dice_fine / batches);
}

/// Mini-batch training. Deterministic for a given seed: the sample order of
/// every epoch comes from one seeded generator and all math is
/// single-threaded.
template <typename T>
TrainResult train(LinkNet<T>& model, const std::vector<Sample>& data, const std::vector<Sample>& validation,
                  const TrainOptions& opt, const std::function<void(const EpochReport&)>& on_epoch = {}) {
    const auto& cfg = model.config();
    require(!data.empty(), "training needs a non-empty dataset");
    require(opt.epochs >= 0 && opt.batch >= 1, "epochs must be >= 0 and batch >= 1");
    detail::validate_dataset(cfg, data, "training set");
    detail::validate_dataset(cfg, validation, "validation set");

    TrainResult result;
    result.best = model.parameters().template cast<float>();
    double best_score = INFINITY;

    Rng rng(opt.seed);
    ad::AdamState<T> adam;
    const ad::AdamOptions adam_opt{opt.learning_rate};
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        rng.shuffle(order);
        LossReport acc;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch));
            auto b = detail::pack_batch<T>(cfg, data, std::span<const std::size_t>(order).subspan(start, end - start));
            LossReport r;
            auto grads = loss_gradients(model, b.input, cfg.lbp_injection ? &b.lbp : nullptr, b.target_fine,
                                        b.target_coarse, r, opt.check_finite);
            if (opt.optimizer == Optimizer::adam)
                ad::adam_step(model.parameters(), grads, adam, adam_opt);
            else
                ad::sgd_step(model.parameters(), grads, opt.learning_rate);
            acc.l1_coarse += r.l1_coarse;
            acc.l2_fine += r.l2_fine;
            acc.ce_fine += r.ce_fine;
            acc.dice_fine += r.dice_fine;
            ++batches;
        }
        EpochReport er;
        er.epoch = epoch;
        er.train = LossReport::from_parts(acc.l1_coarse / batches, acc.l2_fine / batches, acc.ce_fine / batches,
                                          acc.dice_fine / batches);
        if (!validation.empty()) er.val_total = evaluate_loss(model, validation, opt.batch).total;
        const double score = er.val_total ? *er.val_total : er.train.total;
        if (!std::isfinite(score)) throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
        if (score < best_score) {
            best_score = score;
            result.best = model.parameters().template cast<float>();
            result.best_epoch = epoch;
        }
        result.history.push_back(er);
        if (on_epoch) on_epoch(er);
    }
    return result;
}

/// Loss log as CSV: epoch,l1,l2,total,val_total (val_total empty when no
/// validation set was used).
inline std::string loss_log_csv(const std::vector<EpochReport>& history) {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,l1,l2,total,val_total\n";
    for (const auto& e : history) {
        os << e.epoch << ',' << e.train.l1_coarse << ',' << e.train.l2_fine << ',' << e.train.total << ',';
        if (e.val_total) os << *e.val_total;
        os << '\n';
    }
    return os.str();
}

}  // namespace glandseg
