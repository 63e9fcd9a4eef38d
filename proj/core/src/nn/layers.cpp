#include "glandsynth/nn/layers.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gemm.hpp"

namespace gsyn::nn {

namespace detail {

void im2col(const float* x, int channels, int height, int width, int kernel, int stride, int pad, int out_h,
            int out_w, float* col) {
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < channels; ++c) {
        const float* xc = x + static_cast<std::size_t>(c) * height * width;
        for (int kh = 0; kh < kernel; ++kh) {
            for (int kw = 0; kw < kernel; ++kw) {
                float* row = col + ((static_cast<std::size_t>(c) * kernel + kh) * kernel + kw) * out_plane;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    float* dst = row + static_cast<std::size_t>(oh) * out_w;
                    if (ih < 0 || ih >= height) {
                        std::fill(dst, dst + out_w, 0.0f);
                        continue;
                    }
                    const float* src = xc + static_cast<std::size_t>(ih) * width;
                    for (int ow = 0; ow < out_w; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        dst[ow] = (iw >= 0 && iw < width) ? src[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* col, int channels, int height, int width, int kernel, int stride, int pad, int out_h,
            int out_w, float* x) {
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < channels; ++c) {
        float* xc = x + static_cast<std::size_t>(c) * height * width;
        for (int kh = 0; kh < kernel; ++kh) {
            for (int kw = 0; kw < kernel; ++kw) {
                const float* row = col + ((static_cast<std::size_t>(c) * kernel + kh) * kernel + kw) * out_plane;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= height) continue;
                    const float* src = row + static_cast<std::size_t>(oh) * out_w;
                    float* dst = xc + static_cast<std::size_t>(ih) * width;
                    for (int ow = 0; ow < out_w; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < width) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

namespace {

void init_weights(Tensor& w, std::size_t fan_in, std::mt19937_64& rng, Init init) {
    if (init.kind == Init::Kind::normal) {
        std::normal_distribution<float> dist(0.0f, init.stddev);
        for (auto& v : w.values()) v = dist(rng);
        return;
    }
    // He-uniform for ReLU-family activations.
    const float bound = std::sqrt(6.0f / static_cast<float>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& v : w.values()) v = dist(rng);
}

void check_rank(const Tensor& x, int channels, const char* who) {
    if (x.c() != channels) {
        throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(channels) +
                                    " channels, got input " + x.shape_str());
    }
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias, std::mt19937_64& rng, Init init)
    : in_(in_ch),
      out_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      weight_(Tensor(out_ch, in_ch * kernel * kernel, 1, 1)),
      bias_(Tensor(out_ch, 1, 1, 1)) {
    if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0 || pad < 0) {
        throw std::invalid_argument("Conv2d: invalid geometry");
    }
    init_weights(weight_.value, static_cast<std::size_t>(in_ch) * kernel * kernel, rng, init);
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
    check_rank(x, in_, "Conv2d");
    const int oh = out_size(x.h());
    const int ow = out_size(x.w());
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("Conv2d: input " + x.shape_str() + " too small");
    input_ = x;
    Tensor y(x.n(), out_, oh, ow);
    const int kdim = in_ * k_ * k_;
    const int plane = oh * ow;
    const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
    std::vector<float> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
    for (int n = 0; n < x.n(); ++n) {
        const float* cols = x.sample(n);
        if (!pointwise) {
            detail::im2col(x.sample(n), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, col.data());
            cols = col.data();
        }
        float* out = y.sample(n);
        detail::gemm(false, false, out_, plane, kdim, 1.0f, weight_.value.data(), cols, 0.0f, out);
        if (has_bias_) {
            for (int c = 0; c < out_; ++c) {
                const float b = bias_.value[c];
                float* row = out + static_cast<std::size_t>(c) * plane;
                for (int i = 0; i < plane; ++i) row[i] += b;
            }
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const Tensor& x = input_;
    const int oh = grad_out.h();
    const int ow = grad_out.w();
    const int kdim = in_ * k_ * k_;
    const int plane = oh * ow;
    const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    std::vector<float> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
    std::vector<float> dcol(pointwise ? 0 : static_cast<std::size_t>(kdim) * plane);
    for (int n = 0; n < x.n(); ++n) {
        const float* dy = grad_out.sample(n);
        const float* cols = x.sample(n);
        if (!pointwise) {
            detail::im2col(x.sample(n), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, col.data());
            cols = col.data();
        }
        detail::gemm(false, true, out_, kdim, plane, 1.0f, dy, cols, 1.0f, weight_.grad.data());
        if (has_bias_) {
            for (int c = 0; c < out_; ++c) {
                const float* row = dy + static_cast<std::size_t>(c) * plane;
                double s = 0.0;
                for (int i = 0; i < plane; ++i) s += row[i];
                bias_.grad[c] += static_cast<float>(s);
            }
        }
        if (pointwise) {
            detail::gemm(true, false, kdim, plane, out_, 1.0f, weight_.value.data(), dy, 0.0f, dx.sample(n));
        } else {
            detail::gemm(true, false, kdim, plane, out_, 1.0f, weight_.value.data(), dy, 0.0f, dcol.data());
            detail::col2im(dcol.data(), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, dx.sample(n));
        }
    }
    return dx;
}

void Conv2d::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias,
                                 std::mt19937_64& rng, Init init)
    : in_(in_ch),
      out_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      weight_(Tensor(in_ch, out_ch * kernel * kernel, 1, 1)),
      bias_(Tensor(out_ch, 1, 1, 1)) {
    if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0 || pad < 0) {
        throw std::invalid_argument("ConvTranspose2d: invalid geometry");
    }
    const std::size_t fan_in =
        std::max<std::size_t>(1, static_cast<std::size_t>(in_ch) * kernel * kernel / (stride * stride));
    init_weights(weight_.value, fan_in, rng, init);
}

Tensor ConvTranspose2d::forward(const Tensor& x, Mode) {
    check_rank(x, in_, "ConvTranspose2d");
    const int oh = out_size(x.h());
    const int ow = out_size(x.w());
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("ConvTranspose2d: input " + x.shape_str() + " too small");
    input_ = x;
    Tensor y(x.n(), out_, oh, ow);
    const int cdim = out_ * k_ * k_;
    const int in_plane = x.h() * x.w();
    std::vector<float> col(static_cast<std::size_t>(cdim) * in_plane);
    const int out_plane = oh * ow;
    for (int n = 0; n < x.n(); ++n) {
        detail::gemm(true, false, cdim, in_plane, in_, 1.0f, weight_.value.data(), x.sample(n), 0.0f, col.data());
        float* out = y.sample(n);
        detail::col2im(col.data(), out_, oh, ow, k_, stride_, pad_, x.h(), x.w(), out);
        if (has_bias_) {
            for (int c = 0; c < out_; ++c) {
                const float b = bias_.value[c];
                float* row = out + static_cast<std::size_t>(c) * out_plane;
                for (int i = 0; i < out_plane; ++i) row[i] += b;
            }
        }
    }
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
    const Tensor& x = input_;
    const int cdim = out_ * k_ * k_;
    const int in_plane = x.h() * x.w();
    const int out_plane = grad_out.h() * grad_out.w();
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    std::vector<float> dcol(static_cast<std::size_t>(cdim) * in_plane);
    for (int n = 0; n < x.n(); ++n) {
        const float* dy = grad_out.sample(n);
        detail::im2col(dy, out_, grad_out.h(), grad_out.w(), k_, stride_, pad_, x.h(), x.w(), dcol.data());
        detail::gemm(false, false, in_, in_plane, cdim, 1.0f, weight_.value.data(), dcol.data(), 0.0f, dx.sample(n));
        detail::gemm(false, true, in_, cdim, in_plane, 1.0f, x.sample(n), dcol.data(), 1.0f, weight_.grad.data());
        if (has_bias_) {
            for (int c = 0; c < out_; ++c) {
                const float* row = dy + static_cast<std::size_t>(c) * out_plane;
                double s = 0.0;
                for (int i = 0; i < out_plane; ++i) s += row[i];
                bias_.grad[c] += static_cast<float>(s);
            }
        }
    }
    return dx;
}

void ConvTranspose2d::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------------------------------------------
// Linear / Reshape

Linear::Linear(int in_features, int out_features, std::mt19937_64& rng, Init init)
    : in_(in_features),
      out_(out_features),
      weight_(Tensor(out_features, in_features, 1, 1)),
      bias_(Tensor(out_features, 1, 1, 1)) {
    init_weights(weight_.value, static_cast<std::size_t>(in_features), rng, init);
}

Tensor Linear::forward(const Tensor& x, Mode) {
    if (static_cast<int>(x.sample_size()) != in_) {
        throw std::invalid_argument("Linear: expected " + std::to_string(in_) + " features, got " + x.shape_str());
    }
    input_ = x;
    Tensor y(x.n(), out_, 1, 1);
    detail::gemm(false, true, x.n(), out_, in_, 1.0f, x.data(), weight_.value.data(), 0.0f, y.data());
    for (int n = 0; n < x.n(); ++n) {
        for (int o = 0; o < out_; ++o) y.sample(n)[o] += bias_.value[o];
    }
    return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const int batch = input_.n();
    detail::gemm(true, false, out_, in_, batch, 1.0f, grad_out.data(), input_.data(), 1.0f, weight_.grad.data());
    for (int n = 0; n < batch; ++n) {
        for (int o = 0; o < out_; ++o) bias_.grad[o] += grad_out.sample(n)[o];
    }
    Tensor dx(input_.n(), input_.c(), input_.h(), input_.w());
    detail::gemm(false, false, batch, in_, out_, 1.0f, grad_out.data(), weight_.value.data(), 0.0f, dx.data());
    return dx;
}

void Linear::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

Tensor Reshape::forward(const Tensor& x, Mode) {
    in_c_ = x.c();
    in_h_ = x.h();
    in_w_ = x.w();
    Tensor y = x;
    y.reshape(x.n(), c_, h_, w_);
    return y;
}

Tensor Reshape::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    g.reshape(grad_out.n(), in_c_, in_h_, in_w_);
    return g;
}

// ---------------------------------------------------------------------------------------------
// Normalisation

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : ch_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(Tensor(channels, 1, 1, 1, 1.0f)),
      beta_(Tensor(channels, 1, 1, 1)),
      running_mean_(channels, 1, 1, 1, 0.0f),
      running_var_(channels, 1, 1, 1, 1.0f),
      inv_std_(static_cast<std::size_t>(channels)) {}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
    check_rank(x, ch_, "BatchNorm2d");
    last_mode_ = mode;
    const std::size_t plane = x.plane();
    const std::size_t m = plane * x.n();
    Tensor y(x.n(), x.c(), x.h(), x.w());
    xhat_ = Tensor(x.n(), x.c(), x.h(), x.w());
    for (int c = 0; c < ch_; ++c) {
        double mean = 0.0;
        double var = 0.0;
        if (mode == Mode::train) {
            for (int n = 0; n < x.n(); ++n) {
                const float* p = x.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) mean += p[i];
            }
            mean /= static_cast<double>(m);
            for (int n = 0; n < x.n(); ++n) {
                const float* p = x.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            running_mean_[c] = static_cast<float>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
            running_var_[c] = static_cast<float>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
        } else {
            mean = running_mean_[c];
            var = running_var_[c];
        }
        const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
        inv_std_[c] = inv;
        const float g = gamma_.value[c];
        const float b = beta_.value[c];
        const float mu = static_cast<float>(mean);
        for (int n = 0; n < x.n(); ++n) {
            const float* p = x.sample(n) + c * plane;
            float* xh = xhat_.sample(n) + c * plane;
            float* q = y.sample(n) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * inv;
                q[i] = g * xh[i] + b;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
    const std::size_t plane = grad_out.plane();
    const double m = static_cast<double>(plane * grad_out.n());
    Tensor dx(grad_out.n(), grad_out.c(), grad_out.h(), grad_out.w());
    for (int c = 0; c < ch_; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (int n = 0; n < grad_out.n(); ++n) {
            const float* dy = grad_out.sample(n) + c * plane;
            const float* xh = xhat_.sample(n) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xh[i];
            }
        }
        gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
        beta_.grad[c] += static_cast<float>(sum_dy);
        const float g = gamma_.value[c];
        const float inv = inv_std_[c];
        for (int n = 0; n < grad_out.n(); ++n) {
            const float* dy = grad_out.sample(n) + c * plane;
            const float* xh = xhat_.sample(n) + c * plane;
            float* d = dx.sample(n) + c * plane;
            if (last_mode_ == Mode::eval) {
                for (std::size_t i = 0; i < plane; ++i) d[i] = dy[i] * g * inv;
                continue;
            }
            const double k = g * inv / m;
            for (std::size_t i = 0; i < plane; ++i) {
                d[i] = static_cast<float>(k * (m * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(std::vector<Tensor*>& out) {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

InstanceNorm2d::InstanceNorm2d(int channels, float eps)
    : ch_(channels), eps_(eps), gamma_(Tensor(channels, 1, 1, 1, 1.0f)), beta_(Tensor(channels, 1, 1, 1)) {}

Tensor InstanceNorm2d::forward(const Tensor& x, Mode) {
    check_rank(x, ch_, "InstanceNorm2d");
    const std::size_t plane = x.plane();
    Tensor y(x.n(), x.c(), x.h(), x.w());
    xhat_ = Tensor(x.n(), x.c(), x.h(), x.w());
    inv_std_.assign(static_cast<std::size_t>(x.n()) * ch_, 0.0f);
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < ch_; ++c) {
            const float* p = x.sample(n) + c * plane;
            double mean = 0.0;
            for (std::size_t i = 0; i < plane; ++i) mean += p[i];
            mean /= static_cast<double>(plane);
            double var = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = p[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(plane);
            const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
            inv_std_[static_cast<std::size_t>(n) * ch_ + c] = inv;
            const float mu = static_cast<float>(mean);
            float* xh = xhat_.sample(n) + c * plane;
            float* q = y.sample(n) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * inv;
                q[i] = gamma_.value[c] * xh[i] + beta_.value[c];
            }
        }
    }
    return y;
}

Tensor InstanceNorm2d::backward(const Tensor& grad_out) {
    const std::size_t plane = grad_out.plane();
    const double m = static_cast<double>(plane);
    Tensor dx(grad_out.n(), grad_out.c(), grad_out.h(), grad_out.w());
    for (int n = 0; n < grad_out.n(); ++n) {
        for (int c = 0; c < ch_; ++c) {
            const float* dy = grad_out.sample(n) + c * plane;
            const float* xh = xhat_.sample(n) + c * plane;
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xh[i];
            }
            gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
            beta_.grad[c] += static_cast<float>(sum_dy);
            const double k = gamma_.value[c] * inv_std_[static_cast<std::size_t>(n) * ch_ + c] / m;
            float* d = dx.sample(n) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                d[i] = static_cast<float>(k * (m * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
            }
        }
    }
    return dx;
}

void InstanceNorm2d::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

// ---------------------------------------------------------------------------------------------
// Activations

Tensor ReLU::forward(const Tensor& x, Mode) {
    input_ = x;
    Tensor y = x;
    for (auto& v : y.values()) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (input_[i] <= 0.0f) dx[i] = 0.0f;
    }
    return dx;
}

Tensor LeakyReLU::forward(const Tensor& x, Mode) {
    input_ = x;
    Tensor y = x;
    for (auto& v : y.values()) v = v > 0.0f ? v : v * slope_;
    return y;
}

Tensor LeakyReLU::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (input_[i] <= 0.0f) dx[i] *= slope_;
    }
    return dx;
}

Tensor Tanh::forward(const Tensor& x, Mode) {
    Tensor y = x;
    for (auto& v : y.values()) v = std::tanh(v);
    output_ = y;
    return y;
}

Tensor Tanh::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0f - output_[i] * output_[i];
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode) {
    Tensor y = x;
    for (auto& v : y.values()) v = 1.0f / (1.0f + std::exp(-v));
    output_ = y;
    return y;
}

Tensor Sigmoid::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (1.0f - output_[i]);
    return dx;
}

// ---------------------------------------------------------------------------------------------
// Pooling

Tensor MaxPool2d::forward(const Tensor& x, Mode) {
    in_n_ = x.n();
    in_c_ = x.c();
    in_h_ = x.h();
    in_w_ = x.w();
    const int oh = x.h() / 2;
    const int ow = x.w() / 2;
    if (oh == 0 || ow == 0) throw std::invalid_argument("MaxPool2d: input " + x.shape_str() + " too small");
    Tensor y(x.n(), x.c(), oh, ow);
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const float* p = x.sample(n) + c * x.plane();
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j, ++o) {
                    std::uint32_t best = static_cast<std::uint32_t>((2 * i) * x.w() + 2 * j);
                    for (int di = 0; di < 2; ++di) {
                        for (int dj = 0; dj < 2; ++dj) {
                            const auto idx = static_cast<std::uint32_t>((2 * i + di) * x.w() + 2 * j + dj);
                            if (p[idx] > p[best]) best = idx;
                        }
                    }
                    argmax_[o] = best;
                    y[o] = p[best];
                }
            }
        }
    }
    return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
    Tensor dx(in_n_, in_c_, in_h_, in_w_);
    const std::size_t out_plane = grad_out.plane();
    const std::size_t in_plane = static_cast<std::size_t>(in_h_) * in_w_;
    for (std::size_t o = 0; o < grad_out.size(); ++o) {
        const std::size_t nc = o / out_plane;
        dx[nc * in_plane + argmax_[o]] += grad_out[o];
    }
    return dx;
}

// ---------------------------------------------------------------------------------------------
// Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    for (auto& layer : layers_) h = layer->forward(h, mode);
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
    for (auto& layer : layers_) layer->collect_parameters(out);
}

void Sequential::collect_buffers(std::vector<Tensor*>& out) {
    for (auto& layer : layers_) layer->collect_buffers(out);
}

std::size_t count_parameters(const std::vector<Parameter*>& params) {
    return std::accumulate(params.begin(), params.end(), std::size_t{0},
                           [](std::size_t acc, const Parameter* p) { return acc + p->value.size(); });
}

void zero_grads(const std::vector<Parameter*>& params) {
    for (auto* p : params) p->grad.zero();
}

// ---------------------------------------------------------------------------------------------
// Tensor helpers

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw std::invalid_argument("concat_channels: " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor out(a.n(), a.c() + b.c(), a.h(), a.w());
    for (int n = 0; n < a.n(); ++n) {
        std::copy(a.sample(n), a.sample(n) + a.sample_size(), out.sample(n));
        std::copy(b.sample(n), b.sample(n) + b.sample_size(), out.sample(n) + a.sample_size());
    }
    return out;
}

void split_channels(const Tensor& t, int first_channels, Tensor& a, Tensor& b) {
    a = Tensor(t.n(), first_channels, t.h(), t.w());
    b = Tensor(t.n(), t.c() - first_channels, t.h(), t.w());
    for (int n = 0; n < t.n(); ++n) {
        const float* s = t.sample(n);
        std::copy(s, s + a.sample_size(), a.sample(n));
        std::copy(s + a.sample_size(), s + t.sample_size(), b.sample(n));
    }
}

void add_inplace(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src)) throw std::invalid_argument("add_inplace: " + dst.shape_str() + " vs " + src.shape_str());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void scale_inplace(Tensor& t, float s) {
    for (auto& v : t.values()) v *= s;
}

}  // namespace gsyn::nn
