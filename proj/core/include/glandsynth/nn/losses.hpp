#pragma once

#include "glandsynth/nn/tensor.hpp"

namespace gsyn::nn {

struct LossGrad {
    double loss = 0.0;
    Tensor grad;  // d loss / d input, same shape as the input
};

/// Mean binary cross-entropy on raw logits against a constant target (0 or 1).
LossGrad bce_with_logits(const Tensor& logits, float target);

/// Mean absolute error; gradient uses sign(pred - target) with sign(0) = 0.
LossGrad l1_loss(const Tensor& pred, const Tensor& target);

}  // namespace gsyn::nn
