#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsyn::nn {

/// NCHW float tensor. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, float fill = 0.0f)
        : n_(n), c_(c), h_(h), w_(w), data_(checked_size(n, c, h, w), fill) {}

    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] int c() const { return c_; }
    [[nodiscard]] int h() const { return h_; }
    [[nodiscard]] int w() const { return w_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }
    [[nodiscard]] std::size_t sample_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float* sample(int i) { return data_.data() + i * sample_size(); }
    const float* sample(int i) const { return data_.data() + i * sample_size(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }
    float& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    float at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0f); }

    [[nodiscard]] bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    /// Reinterpret the shape; element count must match.
    void reshape(int n, int c, int h, int w) {
        if (checked_size(n, c, h, w) != data_.size()) throw std::invalid_argument("Tensor::reshape: size mismatch");
        n_ = n;
        c_ = c;
        h_ = h;
        w_ = w;
    }

    [[nodiscard]] std::string shape_str() const {
        return "[" + std::to_string(n_) + "," + std::to_string(c_) + "," + std::to_string(h_) + "," +
               std::to_string(w_) + "]";
    }

    bool operator==(const Tensor&) const = default;

private:
    static std::size_t checked_size(int n, int c, int h, int w) {
        if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("Tensor: negative dimension");
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w;
    }

    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<float> data_;
};

/// Channel-wise concatenation [a, b] of two tensors with equal N, H, W.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Inverse of concat_channels: splits `t` after `first_channels` channels.
void split_channels(const Tensor& t, int first_channels, Tensor& a, Tensor& b);

void add_inplace(Tensor& dst, const Tensor& src);
void scale_inplace(Tensor& t, float s);

}  // namespace gsyn::nn
