#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "glandsynth/nn/tensor.hpp"

namespace gsyn::nn {

enum class Mode { train, eval };

/// Trainable tensor with its accumulated gradient.
struct Parameter {
    Tensor value;
    Tensor grad;

    explicit Parameter(Tensor v) : value(std::move(v)), grad(value.n(), value.c(), value.h(), value.w()) {}
};

/// Weight initialisation scheme.
struct Init {
    enum class Kind { kaiming_uniform, normal } kind = Kind::kaiming_uniform;
    float stddev = 0.02f;

    static Init kaiming() { return {}; }
    static Init gaussian(float s) { return {Kind::normal, s}; }
};

/// A differentiable stage. forward() caches what backward() needs; backward() must follow
/// the matching forward() and accumulates parameter gradients.
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
    /// Non-trainable persistent state (e.g. running statistics).
    virtual void collect_buffers(std::vector<Tensor*>& /*out*/) {}
    [[nodiscard]] virtual std::string name() const = 0;
};

class Conv2d final : public Layer {
public:
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, std::mt19937_64& rng,
           Init init = Init::kaiming());
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    [[nodiscard]] std::string name() const override { return "Conv2d"; }

    [[nodiscard]] int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }
    Parameter& weight() { return weight_; }

private:
    int in_, out_, k_, stride_, pad_;
    bool has_bias_;
    Parameter weight_;  // [out, in*k*k]
    Parameter bias_;    // [out]
    Tensor input_;
};

/// Fractionally-strided convolution; weight layout [in, out*k*k].
class ConvTranspose2d final : public Layer {
public:
    ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, std::mt19937_64& rng,
                    Init init = Init::kaiming());
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    [[nodiscard]] std::string name() const override { return "ConvTranspose2d"; }

    [[nodiscard]] int out_size(int in) const { return (in - 1) * stride_ - 2 * pad_ + k_; }

private:
    int in_, out_, k_, stride_, pad_;
    bool has_bias_;
    Parameter weight_;
    Parameter bias_;
    Tensor input_;
};

/// Fully connected map applied to the flattened C*H*W features; output shaped [N, out, 1, 1].
class Linear final : public Layer {
public:
    Linear(int in_features, int out_features, std::mt19937_64& rng, Init init = Init::kaiming());
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    [[nodiscard]] std::string name() const override { return "Linear"; }

private:
    int in_, out_;
    Parameter weight_;  // [out, in]
    Parameter bias_;
    Tensor input_;
};

/// Reshapes [N, C*H*W, 1, 1] (or any layout with the same per-sample size) to [N, C, H, W].
class Reshape final : public Layer {
public:
    Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    [[nodiscard]] std::string name() const override { return "Reshape"; }

private:
    int c_, h_, w_;
    int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

class BatchNorm2d final : public Layer {
public:
    explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_buffers(std::vector<Tensor*>& out) override;
    [[nodiscard]] std::string name() const override { return "BatchNorm2d"; }

private:
    int ch_;
    float momentum_, eps_;
    Parameter gamma_, beta_;
    Tensor running_mean_, running_var_;
    Tensor xhat_;
    std::vector<float> inv_std_;
    Mode last_mode_ = Mode::train;
};

/// Per-sample, per-channel normalisation over H*W with affine scale and shift.
class InstanceNorm2d final : public Layer {
public:
    explicit InstanceNorm2d(int channels, float eps = 1e-5f);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    [[nodiscard]] std::string name() const override { return "InstanceNorm2d"; }

private:
    int ch_;
    float eps_;
    Parameter gamma_, beta_;
    Tensor xhat_;
    std::vector<float> inv_std_;
};

class ReLU final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    [[nodiscard]] std::string name() const override { return "ReLU"; }

private:
    Tensor input_;
};

class LeakyReLU final : public Layer {
public:
    explicit LeakyReLU(float slope = 0.2f) : slope_(slope) {}
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    [[nodiscard]] std::string name() const override { return "LeakyReLU"; }

private:
    float slope_;
    Tensor input_;
};

class Tanh final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    [[nodiscard]] std::string name() const override { return "Tanh"; }

private:
    Tensor output_;
};

class Sigmoid final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    [[nodiscard]] std::string name() const override { return "Sigmoid"; }

private:
    Tensor output_;
};

/// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
class MaxPool2d final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    [[nodiscard]] std::string name() const override { return "MaxPool2d"; }

private:
    std::vector<std::uint32_t> argmax_;
    int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

class Sequential final : public Layer {
public:
    Sequential() = default;
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_parameters(std::vector<Parameter*>& out) override;
    void collect_buffers(std::vector<Tensor*>& out) override;
    [[nodiscard]] std::string name() const override { return "Sequential"; }

    [[nodiscard]] std::size_t size() const { return layers_.size(); }
    [[nodiscard]] const Layer& layer(std::size_t i) const { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Number of scalar trainable values.
std::size_t count_parameters(const std::vector<Parameter*>& params);

void zero_grads(const std::vector<Parameter*>& params);

}  // namespace gsyn::nn
