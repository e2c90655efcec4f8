#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "glandseg/autodiff/graph.hpp"
#include "glandseg/autodiff/ops.hpp"
#include "glandseg/autodiff/tensor.hpp"
#include "glandseg/error.hpp"
#include "glandseg/imaging.hpp"
#include "glandseg/random.hpp"

namespace glandseg {

inline constexpr const char* kLbpChannel = "lbp_invariant";

struct ModelConfig {
    int input_channels = 2;
    std::vector<int> encoder_widths{16, 32, 64, 128};
    bool lbp_injection = true;
    /// The coarse head reads the decoder output at 1 / 2^stage resolution.
    int coarse_head_stage = 2;
    std::uint64_t seed = 1;

    int depth() const { return static_cast<int>(encoder_widths.size()); }
    int coarse_factor() const { return 1 << coarse_head_stage; }
    int size_multiple() const { return 1 << depth(); }

    void validate() const {
        require(input_channels >= 1, "model needs at least one input channel");
        require(depth() >= 2, "model needs at least two encoder stages");
        for (int w : encoder_widths) require(w >= 1, "encoder widths must be positive");
        require(coarse_head_stage >= 1 && coarse_head_stage < depth(),
                "coarse head stage must lie in [1, depth - 1]");
    }

    bool operator==(const ModelConfig&) const = default;
};

/// One row of the layer table.
struct LayerInfo {
    enum class Kind { conv, batchnorm };
    std::string name;
    Kind kind = Kind::conv;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    bool bias = false;

    /// Trainable scalar count.
    std::size_t parameter_count() const {
        if (kind == Kind::batchnorm) return 2 * static_cast<std::size_t>(out_channels);
        return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel + (bias ? out_channels : 0);
    }
};

/// Fine map at input resolution, coarse map at 1 / coarse_factor.
struct DualOutput {
    ProbabilityMap fine;
    ProbabilityMap coarse;
};

/// LinkNet-style encoder-decoder with two sigmoid heads.
///
///   stem      3x3 conv + BN + ReLU at full resolution (width w0)
///   enc k     residual block that halves H, W: 3x3/2 conv, BN, ReLU,
///             3x3 conv, BN, plus a 1x1/2 conv + BN shortcut, then ReLU
///   dec k     nearest x2 upsample, 3x3 conv, BN, ReLU, then the matching
///             encoder output (or the stem) is added
///   coarse    1x1 conv + sigmoid on the decoder output at the configured
///             stage
///   fine      [concat LBP channel], 3x3 conv, ReLU, 1x1 conv, sigmoid
template <typename T>
class LinkNet {
public:
    struct Outputs {
        ad::Var fine;
        ad::Var coarse;
    };

    explicit LinkNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build_layers();
        init_parameters();
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    ad::ParameterSet<T>& parameters() noexcept { return params_; }
    const ad::ParameterSet<T>& parameters() const noexcept { return params_; }
    const std::vector<LayerInfo>& layers() const noexcept { return layers_; }

    const LayerInfo& layer(const std::string& name) const {
        for (const auto& l : layers_)
            if (l.name == name) return l;
        throw UsageError("no layer named '" + name + "'");
    }

    /// Replaces every tensor by the one of the same name in `from`.
    template <typename U>
    void load(const ad::ParameterSet<U>& from) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!from.contains(p.name)) throw DataError("checkpoint lacks tensor '" + p.name + "'");
            const auto& src = from.get(p.name).value;
            if (src.shape() != p.value.shape())
                throw DataError("checkpoint tensor '" + p.name + "' has shape " + ad::to_string(src.shape()) +
                                ", model expects " + ad::to_string(p.value.shape()));
            p.value = src.template cast<T>();
        }
    }

    /// input (N, input_channels, H, W); lbp (N, 1, H, W), required when LBP
    /// injection is on and ignored otherwise.
    Outputs forward(ad::Graph<T>& g, const ad::Tensor<T>& input, const ad::Tensor<T>* lbp, ad::Mode mode) {
        require_shape(input.rank() == 4 && input.c() == cfg_.input_channels,
                      "model input must be (N, " + std::to_string(cfg_.input_channels) + ", H, W), got " +
                          ad::to_string(input.shape()));
        const int m = cfg_.size_multiple();
        require_shape(input.h() % m == 0 && input.w() % m == 0,
                      "input extents " + std::to_string(input.w()) + "x" + std::to_string(input.h()) +
                          " are not divisible by " + std::to_string(m));
        if (cfg_.lbp_injection) {
            require_shape(lbp != nullptr, "LBP injection is on but no LBP channel was supplied");
            require_shape(lbp->rank() == 4 && lbp->c() == 1 && lbp->n() == input.n() && lbp->h() == input.h() &&
                              lbp->w() == input.w(),
                          "LBP channel must be (N, 1, H, W) matching the input");
        }
        bind_ = &g;
        const int depth = cfg_.depth();
        ad::Var x = g.constant(input, "input");
        std::vector<ad::Var> skips;
        ad::Var s = ad::relu(g, bn("stem.bn", conv("stem.conv", x, 1), mode));
        skips.push_back(s);
        ad::Var e = s;
        for (int k = 0; k < depth; ++k) {
            const std::string p = "enc" + std::to_string(k + 1);
            ad::Var main = ad::relu(g, bn(p + ".bn1", conv(p + ".conv1", e, 1), mode));
            main = bn(p + ".bn2", conv(p + ".conv2", main, 1), mode);
            ad::Var shortcut = bn(p + ".shortcut_bn", conv(p + ".shortcut", e, 0), mode);
            e = ad::relu(g, ad::add(g, main, shortcut));
            skips.push_back(e);
        }
        ad::Var d = e;
        ad::Var coarse;
        for (int k = depth - 1; k >= 0; --k) {
            const std::string p = "dec" + std::to_string(k + 1);
            d = ad::relu(g, bn(p + ".bn", conv(p + ".conv", ad::upsample2(g, d), 1), mode));
            d = ad::add(g, d, skips[static_cast<std::size_t>(k)]);
            if (k == cfg_.coarse_head_stage) coarse = ad::sigmoid(g, conv("coarse_head", d, 0));
        }
        if (cfg_.lbp_injection) d = ad::concat_channels(g, d, g.constant(*lbp, "lbp"));
        ad::Var f = ad::relu(g, conv("fine_head.conv3", d, 1));
        f = ad::sigmoid(g, conv("fine_head.conv1", f, 0));
        bind_ = nullptr;
        return {f, coarse};
    }

private:
    void add_conv(const std::string& name, int in, int out, int k, int stride, bool bias) {
        layers_.push_back({name, LayerInfo::Kind::conv, in, out, k, stride, bias});
    }
    void add_bn(const std::string& name, int c) { layers_.push_back({name, LayerInfo::Kind::batchnorm, c, c, 0, 1, false}); }

    void build_layers() {
        const auto& w = cfg_.encoder_widths;
        const int depth = cfg_.depth();
        // Convolutions followed by batch norm carry no bias: BN removes it.
        add_conv("stem.conv", cfg_.input_channels, w[0], 3, 1, false);
        add_bn("stem.bn", w[0]);
        for (int k = 0; k < depth; ++k) {
            const std::string p = "enc" + std::to_string(k + 1);
            const int in = k == 0 ? w[0] : w[k - 1];
            add_conv(p + ".conv1", in, w[k], 3, 2, false);
            add_bn(p + ".bn1", w[k]);
            add_conv(p + ".conv2", w[k], w[k], 3, 1, false);
            add_bn(p + ".bn2", w[k]);
            add_conv(p + ".shortcut", in, w[k], 1, 2, false);
            add_bn(p + ".shortcut_bn", w[k]);
        }
        for (int k = depth - 1; k >= 0; --k) {
            const std::string p = "dec" + std::to_string(k + 1);
            const int out = k == 0 ? w[0] : w[k - 1];
            add_conv(p + ".conv", w[k], out, 3, 1, false);
            add_bn(p + ".bn", out);
        }
        const int coarse_in = cfg_.coarse_head_stage == 0 ? w[0] : w[cfg_.coarse_head_stage - 1];
        add_conv("coarse_head", coarse_in, 1, 1, 1, true);
        add_conv("fine_head.conv3", w[0] + (cfg_.lbp_injection ? 1 : 0), w[0], 3, 1, true);
        add_conv("fine_head.conv1", w[0], 1, 1, 1, true);
    }

    void init_parameters() {
        Rng rng(cfg_.seed);
        for (const auto& l : layers_) {
            if (l.kind == LayerInfo::Kind::conv) {
                const int fan_in = l.in_channels * l.kernel * l.kernel;
                const double stddev = std::sqrt(2.0 / fan_in);
                ad::Tensor<T> weight(ad::Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
                for (auto& v : weight.values()) v = static_cast<T>(stddev * rng.normal());
                params_.add(l.name + ".weight", std::move(weight));
                if (l.bias) params_.add(l.name + ".bias", ad::Tensor<T>(ad::Shape{l.out_channels}, T{0}));
            } else {
                const ad::Shape s{l.out_channels};
                params_.add(l.name + ".gamma", ad::Tensor<T>(s, T{1}));
                params_.add(l.name + ".beta", ad::Tensor<T>(s, T{0}));
                params_.add(l.name + ".running_mean", ad::Tensor<T>(s, T{0}), false);
                params_.add(l.name + ".running_var", ad::Tensor<T>(s, T{1}), false);
            }
        }
    }

    ad::Var conv(const std::string& name, ad::Var x, int pad) {
        const auto& l = layer(name);
        ad::Var w = bind_->parameter(params_.get(name + ".weight"));
        ad::Var b = l.bias ? bind_->parameter(params_.get(name + ".bias")) : ad::Var{};
        return ad::conv2d(*bind_, x, w, b, l.stride, pad);
    }

    ad::Var bn(const std::string& name, ad::Var x, ad::Mode mode) {
        return ad::batchnorm(*bind_, x, bind_->parameter(params_.get(name + ".gamma")),
                             bind_->parameter(params_.get(name + ".beta")), params_.get(name + ".running_mean"),
                             params_.get(name + ".running_var"), mode);
    }

    ModelConfig cfg_;
    std::vector<LayerInfo> layers_;
    ad::ParameterSet<T> params_;
    ad::Graph<T>* bind_ = nullptr;
};

/// Human-readable layer table with per-layer and total trainable counts.
inline std::string describe(const std::vector<LayerInfo>& layers) {
    std::ostringstream os;
    os << "layer,kind,in,out,kernel,stride,bias,params\n";
    std::size_t total = 0;
    for (const auto& l : layers) {
        os << l.name << ',' << (l.kind == LayerInfo::Kind::conv ? "conv" : "batchnorm") << ',' << l.in_channels
           << ',' << l.out_channels << ',' << l.kernel << ',' << l.stride << ',' << (l.bias ? 1 : 0) << ','
           << l.parameter_count() << '\n';
        total += l.parameter_count();
    }
    os << "total,,,,,,," << total << '\n';
    return os.str();
}

inline std::size_t total_parameter_count(const std::vector<LayerInfo>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
}

// ---------------------------------------------------------------------------
// Tensor packing
// ---------------------------------------------------------------------------

/// Network input channels of a stack: every channel except the LBP one, in
/// stack order.
inline std::vector<std::size_t> input_channel_indices(const FeatureStack& stack) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < stack.channel_count(); ++i)
        if (stack.name(i) != kLbpChannel) idx.push_back(i);
    return idx;
}

template <typename T>
void pack_stack(const FeatureStack& stack, int input_channels, ad::Tensor<T>& input, ad::Tensor<T>& lbp, int slot,
                bool need_lbp) {
    const auto idx = input_channel_indices(stack);
    require_shape(static_cast<int>(idx.size()) == input_channels,
                  "feature stack provides " + std::to_string(idx.size()) + " input channels, model expects " +
                      std::to_string(input_channels));
    const std::size_t hw = static_cast<std::size_t>(stack.width()) * stack.height();
    for (int c = 0; c < input_channels; ++c) {
        auto src = stack.channel(idx[static_cast<std::size_t>(c)]).pixels();
        std::copy(src.begin(), src.end(), input.data() + (static_cast<std::size_t>(slot) * input_channels + c) * hw);
    }
    if (need_lbp) {
        auto src = stack.channel(kLbpChannel).pixels();
        std::copy(src.begin(), src.end(), lbp.data() + static_cast<std::size_t>(slot) * hw);
    }
}

/// Foreground (label > 0) of a mask as a (1, H, W) slab written at `slot`.
template <typename T>
void pack_mask(const InstanceMask& mask, ad::Tensor<T>& out, int slot) {
    auto src = mask.pixels();
    T* dst = out.data() + static_cast<std::size_t>(slot) * src.size();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0 ? T{1} : T{0};
}

/// Nearest-neighbour downsampling of a (N, 1, H, W) target by an integer
/// factor; keeps the target binary.
template <typename T>
ad::Tensor<T> downsample_nearest(const ad::Tensor<T>& t, int factor) {
    require_shape(t.rank() == 4 && t.h() % factor == 0 && t.w() % factor == 0,
                  "target extents must be divisible by the coarse factor");
    const int ho = t.h() / factor, wo = t.w() / factor;
    ad::Tensor<T> out(ad::Shape{t.n(), t.c(), ho, wo});
    const int off = factor / 2;
    for (int n = 0; n < t.n(); ++n)
        for (int c = 0; c < t.c(); ++c)
            for (int y = 0; y < ho; ++y)
                for (int x = 0; x < wo; ++x) out.at(n, c, y, x) = t.at(n, c, y * factor + off, x * factor + off);
    return out;
}

template <typename T>
ProbabilityMap to_probability_map(const ad::Tensor<T>& t, int slot) {
    ProbabilityMap p(t.w(), t.h());
    const std::size_t hw = p.size();
    for (std::size_t i = 0; i < hw; ++i) p.pixels()[i] = static_cast<float>(t[static_cast<std::size_t>(slot) * hw + i]);
    return p;
}

/// Eval-mode forward pass over a batch of stacks.
template <typename T>
std::vector<DualOutput> predict_batch(LinkNet<T>& model, const std::vector<const FeatureStack*>& stacks) {
    require(!stacks.empty(), "predict needs at least one input");
    const auto& cfg = model.config();
    const int n = static_cast<int>(stacks.size());
    const int w = stacks[0]->width(), h = stacks[0]->height();
    for (const auto* s : stacks) require_shape(s->width() == w && s->height() == h, "batch stacks differ in size");
    require_shape(w % cfg.size_multiple() == 0 && h % cfg.size_multiple() == 0,
                  "input extents " + std::to_string(w) + "x" + std::to_string(h) + " are not divisible by " +
                      std::to_string(cfg.size_multiple()));
    ad::Tensor<T> input(ad::Shape{n, cfg.input_channels, h, w});
    ad::Tensor<T> lbp(ad::Shape{n, 1, h, w});
    for (int i = 0; i < n; ++i) pack_stack(*stacks[static_cast<std::size_t>(i)], cfg.input_channels, input, lbp, i, cfg.lbp_injection);
    ad::Graph<T> g;
    auto out = model.forward(g, input, cfg.lbp_injection ? &lbp : nullptr, ad::Mode::eval);
    std::vector<DualOutput> res;
    for (int i = 0; i < n; ++i)
        res.push_back({to_probability_map(g.value(out.fine), i), to_probability_map(g.value(out.coarse), i)});
    return res;
}

template <typename T>
DualOutput predict(LinkNet<T>& model, const FeatureStack& stack) {
    return predict_batch(model, {&stack}).front();
}

}  // namespace glandseg
