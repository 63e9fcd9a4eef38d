#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "glandsynth/nn/layers.hpp"

namespace testutil {

inline gsyn::nn::Tensor random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, float lo = -1.0f,
                                      float hi = 1.0f) {
    gsyn::nn::Tensor t(n, c, h, w);
    std::uniform_real_distribution<float> d(lo, hi);
    for (auto& v : t.values()) v = d(rng);
    return t;
}

inline double dot(const gsyn::nn::Tensor& a, const gsyn::nn::Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

/// Worst relative error between analytic and central-difference gradients of <r, layer(x)> with
/// respect to the input and every parameter. Differences below `floor` in absolute terms pass.
inline double max_grad_error(gsyn::nn::Layer& layer, gsyn::nn::Tensor x, std::mt19937_64& rng,
                             gsyn::nn::Mode mode = gsyn::nn::Mode::train, float h = 1e-2f, double floor = 2e-3) {
    using gsyn::nn::Tensor;
    std::vector<gsyn::nn::Parameter*> params;
    layer.collect_parameters(params);
    gsyn::nn::zero_grads(params);
    const Tensor y = layer.forward(x, mode);
    const Tensor r = random_tensor(y.n(), y.c(), y.h(), y.w(), rng);
    const Tensor dx = layer.backward(r);

    auto objective = [&](const Tensor& in) { return dot(layer.forward(in, mode), r); };
    double worst = 0.0;
    auto judge = [&](double analytic, double numeric) {
        const double diff = std::abs(analytic - numeric);
        if (diff < floor) return;
        worst = std::max(worst, diff / std::max(std::abs(analytic), std::abs(numeric)));
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float keep = x[i];
        x[i] = keep + h;
        const double up = objective(x);
        x[i] = keep - h;
        const double down = objective(x);
        x[i] = keep;
        judge(dx[i], (up - down) / (2.0 * h));
    }
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const float keep = p->value[i];
            p->value[i] = keep + h;
            const double up = objective(x);
            p->value[i] = keep - h;
            const double down = objective(x);
            p->value[i] = keep;
            judge(p->grad[i], (up - down) / (2.0 * h));
        }
    }
    return worst;
}

/// Relative error of the directional derivative of <r, layer(x)> along one random direction
/// over all parameters (and, separately, over the input). Suits deep stacks where single-weight
/// differences drown in float rounding or rectifier kinks.
inline std::pair<double, double> directional_grad_error(gsyn::nn::Layer& layer, gsyn::nn::Tensor x,
                                                        std::mt19937_64& rng,
                                                        gsyn::nn::Mode mode = gsyn::nn::Mode::train,
                                                        float h = 1e-3f) {
    using gsyn::nn::Tensor;
    std::vector<gsyn::nn::Parameter*> params;
    layer.collect_parameters(params);
    gsyn::nn::zero_grads(params);
    const Tensor y = layer.forward(x, mode);
    const Tensor r = random_tensor(y.n(), y.c(), y.h(), y.w(), rng);
    const Tensor dx = layer.backward(r);
    auto objective = [&](const Tensor& in) { return dot(layer.forward(in, mode), r); };
    std::normal_distribution<float> nd(0.0f, 1.0f);

    // Parameters, each direction component scaled by the tensor's magnitude.
    std::vector<Tensor> dirs;
    double analytic = 0.0;
    for (auto* p : params) {
        double norm = 0.0;
        for (float v : p->value.values()) norm += static_cast<double>(v) * v;
        const float scale = static_cast<float>(std::sqrt(norm / std::max<std::size_t>(1, p->value.size()))) + 1e-2f;
        Tensor d(p->value.n(), p->value.c(), p->value.h(), p->value.w());
        for (auto& v : d.values()) v = nd(rng) * scale;
        analytic += dot(p->grad, d);
        dirs.push_back(std::move(d));
    }
    auto shift = [&](float t) {
        for (std::size_t k = 0; k < params.size(); ++k)
            for (std::size_t i = 0; i < dirs[k].size(); ++i) params[k]->value[i] += t * dirs[k][i];
    };
    shift(h);
    const double up = objective(x);
    shift(-2.0f * h);
    const double down = objective(x);
    shift(h);
    const double numeric = (up - down) / (2.0 * h);
    const double param_err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});

    const Tensor dir = random_tensor(x.n(), x.c(), x.h(), x.w(), rng);
    const double a_in = dot(dx, dir);
    Tensor xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] += h * dir[i];
        xm[i] -= h * dir[i];
    }
    const double n_in = (objective(xp) - objective(xm)) / (2.0 * h);
    const double input_err = std::abs(a_in - n_in) / std::max({std::abs(a_in), std::abs(n_in), 1e-12});
    return {param_err, input_err};
}

}  // namespace testutil
