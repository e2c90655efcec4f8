#pragma once

#include <cmath>
#include <map>
#include <string>

#include "glandseg/autodiff/graph.hpp"

namespace glandseg::ad {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    long step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

/// One bias-corrected Adam update over every trainable parameter that has a
/// gradient. Moments are kept in double.
template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state, const AdamOptions& opt = {}) {
    ++state.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        if (!p.trainable) continue;
        auto it = grads.find(p.name);
        if (it == grads.end()) continue;
        const auto& gr = it->second;
        require_shape(gr.shape() == p.value.shape(), "adam: gradient shape mismatch for '" + p.name + "'");
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.empty()) {
            m.assign(p.value.size(), 0.0);
            v.assign(p.value.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double gi = gr[i];
            m[i] = opt.beta1 * m[i] + (1 - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1 - opt.beta2) * gi * gi;
            const double mh = m[i] / c1, vh = v[i] / c2;
            p.value[i] = static_cast<T>(p.value[i] - opt.lr * mh / (std::sqrt(vh) + opt.eps));
        }
    }
}

/// Plain gradient descent.
template <typename T>
void sgd_step(ParameterSet<T>& params, const Gradients<T>& grads, double lr) {
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        if (!p.trainable) continue;
        auto it = grads.find(p.name);
        if (it == grads.end()) continue;
        require_shape(it->second.shape() == p.value.shape(), "sgd: gradient shape mismatch for '" + p.name + "'");
        for (std::size_t i = 0; i < p.value.size(); ++i)
            p.value[i] = static_cast<T>(p.value[i] - lr * it->second[i]);
    }
}

}  // namespace glandseg::ad
