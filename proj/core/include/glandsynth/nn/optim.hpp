#pragma once

#include <cstdint>
#include <vector>

#include "glandsynth/nn/layers.hpp"

namespace gsyn::nn {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction.
class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamOptions opts);

    void step();
    void zero_grad();
    void set_lr(double lr) { opts_.lr = lr; }
    [[nodiscard]] double lr() const { return opts_.lr; }
    [[nodiscard]] std::int64_t steps() const { return t_; }

private:
    std::vector<Parameter*> params_;
    AdamOptions opts_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace gsyn::nn
