#include "glandsynth/nn/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace gsyn::nn {

LossGrad bce_with_logits(const Tensor& logits, float target) {
    LossGrad out{0.0, Tensor(logits.n(), logits.c(), logits.h(), logits.w())};
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double x = logits[i];
        total += std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
        const double s = 1.0 / (1.0 + std::exp(-x));
        out.grad[i] = static_cast<float>((s - target) * inv_n);
    }
    out.loss = total * inv_n;
    return out;
}

LossGrad l1_loss(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) throw std::invalid_argument("l1_loss: shape mismatch");
    LossGrad out{0.0, Tensor(pred.n(), pred.c(), pred.h(), pred.w())};
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - target[i];
        total += std::abs(d);
        out.grad[i] = static_cast<float>((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv_n);
    }
    out.loss = total * inv_n;
    return out;
}

}  // namespace gsyn::nn
