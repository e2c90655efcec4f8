#pragma once

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "glandseg/glandseg.hpp"

namespace testing_support {

namespace fs = std::filesystem;
namespace ad = glandseg::ad;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() / ("glandseg_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                                             std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

inline std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ad::Tensor<double> random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    ad::Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.values()) v = d(rng);
    return t;
}

/// Central-difference check of d(sum(out * R))/d(input) for every entry of
/// every input; `build` maps graph nodes of the inputs to an output node.
inline void expect_gradients_match(std::vector<ad::Tensor<double>> inputs,
                                   const std::function<ad::Var(ad::Graph<double>&, const std::vector<ad::Var>&)>& build,
                                   double tol = 1e-6, double step = 1e-6, std::uint64_t seed = 17) {
    std::vector<ad::Parameter<double>> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back({"in" + std::to_string(i), inputs[i], true});

    ad::Tensor<double> weights;
    auto loss_of = [&](bool with_backward, ad::Gradients<double>* grads) {
        ad::Graph<double> g;
        std::vector<ad::Var> vars;
        for (auto& p : params) vars.push_back(g.parameter(p));
        ad::Var out = build(g, vars);
        if (weights.empty()) {
            std::mt19937_64 rng(seed);
            weights = random_tensor(g.value(out).shape(), rng);
        }
        ad::Var loss = ad::sum(g, ad::mul(g, out, g.constant(weights)));
        const double v = g.value(loss).item();
        if (with_backward) *grads = g.backward(loss);
        return v;
    };
    ad::Gradients<double> grads;
    loss_of(true, &grads);
    for (auto& p : params) {
        const auto& analytic = grads.at(p.name);
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double saved = p.value[k];
            p.value[k] = saved + step;
            const double up = loss_of(false, nullptr);
            p.value[k] = saved - step;
            const double down = loss_of(false, nullptr);
            p.value[k] = saved;
            const double numeric = (up - down) / (2 * step);
            EXPECT_LE(glandseg::relative_error(analytic[k], numeric, 1e-6), tol)
                << p.name << "[" << k << "] analytic " << analytic[k] << " numeric " << numeric;
        }
    }
}

/// Random instance mask with up to `max_objects` rectangles-with-noise.
inline glandseg::InstanceMask random_instances(int w, int h, int max_objects, std::mt19937_64& rng) {
    glandseg::InstanceMask m(w, h, 0);
    std::uniform_int_distribution<int> count(0, max_objects);
    const int k = count(rng);
    for (int label = 1; label <= k; ++label) {
        std::uniform_int_distribution<int> xs(0, w - 1), ys(0, h - 1);
        int x0 = xs(rng), x1 = xs(rng), y0 = ys(rng), y1 = ys(rng);
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) m(x, y) = label;
    }
    return m;
}

}  // namespace testing_support
