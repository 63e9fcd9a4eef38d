#include "glandsynth/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "glandsynth/errors.hpp"
#include "glandsynth/nn/checkpoint.hpp"
#include "glandsynth/nn/losses.hpp"
#include "glandsynth/nn/optim.hpp"
#include "glandsynth/png_io.hpp"
#include "glandsynth/seeds.hpp"

namespace gsyn {

using nn::Mode;
using nn::Tensor;

std::vector<LatentVector> sample_latent(int n, std::uint64_t seed, int dim) {
    if (n < 1 || dim < 1) throw std::invalid_argument("sample_latent: n and dim must be >= 1");
    std::mt19937_64 rng(derive_seed(seed, "latent"));
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<LatentVector> out(static_cast<std::size_t>(n));
    for (auto& v : out) {
        v.z.resize(static_cast<std::size_t>(dim));
        for (auto& x : v.z) x = normal(rng);
    }
    return out;
}

Tensor latents_to_tensor(const std::vector<LatentVector>& z) {
    if (z.empty()) throw std::invalid_argument("latents_to_tensor: empty batch");
    const auto dim = z.front().z.size();
    Tensor t(static_cast<int>(z.size()), static_cast<int>(dim), 1, 1);
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (z[i].z.size() != dim) throw std::invalid_argument("latents_to_tensor: ragged latent batch");
        std::copy(z[i].z.begin(), z[i].z.end(), t.sample(static_cast<int>(i)));
    }
    return t;
}

// ---------------------------------------------------------------------------------------------
// Config

int MaskGanConfig::upsampling_stages() const {
    int s = 0;
    for (int r = resolution; r > 4; r /= 2) ++s;
    return s;
}

int MaskGanConfig::generator_channels(int stage) const {
    if (stage >= upsampling_stages()) return 1;
    return top_channels >> stage;
}

long MaskGanConfig::total_iterations(std::size_t n_real) const {
    if (iterations > 0) return iterations;
    const auto per_epoch = std::max<std::size_t>(1, n_real / static_cast<std::size_t>(batch_size));
    return static_cast<long>(epochs) * static_cast<long>(per_epoch);
}

void MaskGanConfig::validate() const {
    if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
        throw std::invalid_argument("MaskGanConfig: resolution must be a power of two >= 8");
    }
    if (latent_dim < 1 || batch_size < 1 || epochs < 1 || iterations < 0) {
        throw std::invalid_argument("MaskGanConfig: latent_dim, batch_size, epochs must be >= 1");
    }
    if (!(real_label > 0.5f && real_label <= 1.0f) || generator_steps < 1) {
        throw std::invalid_argument("MaskGanConfig: real_label must lie in (0.5,1], generator_steps >= 1");
    }
    if ((top_channels >> (upsampling_stages() - 1)) < 1) {
        throw std::invalid_argument("MaskGanConfig: top_channels too small for " + std::to_string(upsampling_stages()) +
                                    " halving stages");
    }
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("MaskGanConfig: ema_decay must lie in [0,1)");
    if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("MaskGanConfig: bad optimizer settings");
    }
}

void to_json(nlohmann::json& j, const MaskGanConfig& c) {
    j = nlohmann::json{{"resolution", c.resolution}, {"latent_dim", c.latent_dim}, {"top_channels", c.top_channels},
                       {"epochs", c.epochs},         {"batch_size", c.batch_size}, {"iterations", c.iterations},
                       {"lr", c.lr},                 {"beta1", c.beta1},           {"beta2", c.beta2},
                       {"leaky_slope", c.leaky_slope}, {"real_label", c.real_label},
                       {"generator_steps", c.generator_steps},
                       {"ema_decay", c.ema_decay}};
}

void from_json(const nlohmann::json& j, MaskGanConfig& c) {
    MaskGanConfig d;
    d.resolution = j.value("resolution", d.resolution);
    d.latent_dim = j.value("latent_dim", d.latent_dim);
    d.top_channels = j.value("top_channels", d.top_channels);
    d.epochs = j.value("epochs", d.epochs);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.iterations = j.value("iterations", d.iterations);
    d.lr = j.value("lr", d.lr);
    d.beta1 = j.value("beta1", d.beta1);
    d.beta2 = j.value("beta2", d.beta2);
    d.leaky_slope = j.value("leaky_slope", d.leaky_slope);
    d.real_label = j.value("real_label", d.real_label);
    d.generator_steps = j.value("generator_steps", d.generator_steps);
    d.ema_decay = j.value("ema_decay", d.ema_decay);
    d.validate();
    c = d;
}

// ---------------------------------------------------------------------------------------------
// Networks

MaskGenerator::MaskGenerator(const MaskGanConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    stages_ = config_.upsampling_stages();
    std::mt19937_64 rng(derive_seed(seed, "maskgan-generator"));
    const auto init = nn::Init::gaussian(0.02f);
    const int top = config_.top_channels;
    net_.emplace<nn::Linear>(config_.latent_dim, top * 16, rng, init);
    net_.emplace<nn::Reshape>(top, 4, 4);
    net_.emplace<nn::BatchNorm2d>(top);
    net_.emplace<nn::LeakyReLU>(config_.leaky_slope);
    for (int s = 1; s <= stages_; ++s) {
        const int in = config_.generator_channels(s - 1);
        const int out = config_.generator_channels(s);
        const bool last = s == stages_;
        net_.emplace<nn::ConvTranspose2d>(in, out, 4, 2, 1, last, rng, init);
        if (last) {
            net_.emplace<nn::Tanh>();
        } else {
            net_.emplace<nn::BatchNorm2d>(out);
            net_.emplace<nn::LeakyReLU>(config_.leaky_slope);
        }
    }
}

Tensor MaskGenerator::forward(const Tensor& z, Mode mode) {
    if (z.c() * z.h() * z.w() != config_.latent_dim) {
        throw std::invalid_argument("MaskGenerator: latent batch " + z.shape_str() + " does not have dimension " +
                                    std::to_string(config_.latent_dim));
    }
    return net_.forward(z, mode);
}

Tensor MaskGenerator::backward(const Tensor& grad) { return net_.backward(grad); }

std::vector<nn::Parameter*> MaskGenerator::parameters() {
    std::vector<nn::Parameter*> p;
    net_.collect_parameters(p);
    return p;
}

std::vector<Tensor*> MaskGenerator::state() {
    std::vector<Tensor*> out;
    for (auto* p : parameters()) out.push_back(&p->value);
    net_.collect_buffers(out);
    return out;
}

MaskDiscriminator::MaskDiscriminator(const MaskGanConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    stages_ = config_.upsampling_stages();
    std::mt19937_64 rng(derive_seed(seed, "maskgan-discriminator"));
    const auto init = nn::Init::gaussian(0.02f);
    int in = 1;
    for (int s = 1; s <= stages_; ++s) {
        const int out = config_.top_channels >> (stages_ - s);
        const bool first = s == 1;
        net_.emplace<nn::Conv2d>(in, out, 4, 2, 1, first, rng, init);
        if (!first) net_.emplace<nn::BatchNorm2d>(out);
        net_.emplace<nn::LeakyReLU>(config_.leaky_slope);
        in = out;
    }
    net_.emplace<nn::Conv2d>(in, 1, 4, 1, 0, true, rng, init);
}

Tensor MaskDiscriminator::forward(const Tensor& x, Mode mode) {
    if (x.c() != 1 || x.h() != config_.resolution || x.w() != config_.resolution) {
        throw std::invalid_argument("MaskDiscriminator: input " + x.shape_str() + " must be [N,1," +
                                    std::to_string(config_.resolution) + "," + std::to_string(config_.resolution) +
                                    "]");
    }
    return net_.forward(x, mode);
}

Tensor MaskDiscriminator::backward(const Tensor& grad) { return net_.backward(grad); }

std::vector<nn::Parameter*> MaskDiscriminator::parameters() {
    std::vector<nn::Parameter*> p;
    net_.collect_parameters(p);
    return p;
}

std::vector<Tensor*> MaskDiscriminator::state() {
    std::vector<Tensor*> out;
    for (auto* p : parameters()) out.push_back(&p->value);
    net_.collect_buffers(out);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Training and sampling

Tensor masks_to_tensor(const std::vector<Mask>& masks) {
    if (masks.empty()) throw std::invalid_argument("masks_to_tensor: empty batch");
    const int rows = masks.front().rows;
    const int cols = masks.front().cols;
    Tensor t(static_cast<int>(masks.size()), 1, rows, cols);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i].rows != rows || masks[i].cols != cols) throw std::invalid_argument("masks_to_tensor: ragged batch");
        float* dst = t.sample(static_cast<int>(i));
        for (std::size_t k = 0; k < masks[i].size(); ++k) dst[k] = masks[i].px[k] ? 1.0f : -1.0f;
    }
    return t;
}

namespace {

void check_finite(double v, const char* what, long iteration) {
    if (!std::isfinite(v)) {
        throw TrainingError(std::string("train_mask_gan: non-finite ") + what + " at iteration " +
                            std::to_string(iteration));
    }
}

}  // namespace

MaskGan train_mask_gan(const std::vector<Mask>& real_masks, const MaskGanConfig& config, std::uint64_t seed,
                       const GanIterationCallback& on_iteration) {
    config.validate();
    if (real_masks.empty()) throw std::invalid_argument("train_mask_gan: no real masks");
    for (const auto& m : real_masks) {
        if (m.rows != config.resolution || m.cols != config.resolution) {
            throw std::invalid_argument("train_mask_gan: real masks must be " + std::to_string(config.resolution) +
                                        "x" + std::to_string(config.resolution));
        }
        if (count_foreground(m) == 0) throw std::invalid_argument("train_mask_gan: real masks must be nonempty");
    }

    MaskGan gan{MaskGenerator(config, seed), MaskDiscriminator(config, seed), {}};
    auto& G = gan.generator;
    auto& D = gan.discriminator;
    const nn::AdamOptions opts{config.lr, config.beta1, config.beta2, 1e-8};
    nn::Adam opt_g(G.parameters(), opts);
    nn::Adam opt_d(D.parameters(), opts);

    const long total = config.total_iterations(real_masks.size());
    const auto batch = std::min(real_masks.size(), static_cast<std::size_t>(config.batch_size));
    std::mt19937_64 order_rng(derive_seed(seed, "maskgan-order"));
    const std::uint64_t latent_seed = derive_seed(seed, "maskgan-latent");
    std::vector<std::size_t> order(real_masks.size());
    std::size_t cursor = order.size();
    gan.history.d_loss.reserve(static_cast<std::size_t>(total));
    gan.history.g_loss.reserve(static_cast<std::size_t>(total));

    const auto g_state = G.state();
    std::vector<Tensor> ema;
    if (config.ema_decay > 0.0) {
        for (const Tensor* t : g_state) ema.push_back(*t);
    }
    const auto decay = static_cast<float>(config.ema_decay);

    std::vector<Mask> real_batch;
    for (long it = 1; it <= total; ++it) {
        if (cursor + batch > order.size()) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), order_rng);
            cursor = 0;
        }
        real_batch.clear();
        for (std::size_t b = 0; b < batch; ++b) real_batch.push_back(real_masks[order[cursor + b]]);
        cursor += batch;
        const Tensor real = masks_to_tensor(real_batch);
        const Tensor z = latents_to_tensor(
            sample_latent(static_cast<int>(batch), derive_seed(latent_seed, static_cast<std::uint64_t>(it)),
                          config.latent_dim));
        Tensor fake = G.forward(z, Mode::train);

        opt_d.zero_grad();
        const auto real_loss = nn::bce_with_logits(D.forward(real, Mode::train), config.real_label);
        D.backward(real_loss.grad);
        const auto fake_loss = nn::bce_with_logits(D.forward(fake, Mode::train), 0.0f);
        D.backward(fake_loss.grad);
        const double d_loss = real_loss.loss + fake_loss.loss;
        check_finite(d_loss, "discriminator loss", it);
        opt_d.step();

        nn::LossGrad g_loss;
        for (int g = 0; g < config.generator_steps; ++g) {
            if (g > 0) fake = G.forward(z, Mode::train);
            opt_g.zero_grad();
            g_loss = nn::bce_with_logits(D.forward(fake, Mode::train), 1.0f);
            check_finite(g_loss.loss, "generator loss", it);
            G.backward(D.backward(g_loss.grad));
            opt_g.step();
        }

        for (std::size_t k = 0; k < ema.size(); ++k) {
            auto avg = ema[k].values();
            const auto cur = g_state[k]->values();
            for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = decay * avg[i] + (1.0f - decay) * cur[i];
        }

        gan.history.d_loss.push_back(d_loss);
        gan.history.g_loss.push_back(g_loss.loss);
        if (on_iteration) on_iteration(it, d_loss, g_loss.loss);
    }
    if (!ema.empty()) nn::restore_tensors(ema, g_state);
    return gan;
}

Mask binarize_generator_output(std::span<const float> plane, int rows, int cols, double threshold) {
    Mask m(rows, cols);
    if (plane.size() != m.size()) throw std::invalid_argument("binarize_generator_output: size mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double v = std::clamp((static_cast<double>(plane[i]) + 1.0) / 2.0, 1e-6, 1.0 - 1e-6);
        m.px[i] = v > threshold ? 1 : 0;
    }
    return m;
}

std::vector<Mask> generate_masks(MaskGenerator& generator, int n, std::uint64_t seed, double threshold) {
    if (n < 0) throw std::invalid_argument("generate_masks: n must be >= 0");
    std::vector<Mask> out;
    if (n == 0) return out;
    const auto latents = sample_latent(n, seed, generator.config().latent_dim);
    constexpr int kChunk = 16;
    for (int start = 0; start < n; start += kChunk) {
        const int count = std::min(kChunk, n - start);
        const std::vector<LatentVector> chunk(latents.begin() + start, latents.begin() + start + count);
        const Tensor y = generator.forward(latents_to_tensor(chunk), Mode::eval);
        for (int b = 0; b < count; ++b) {
            const std::span<const float> plane(y.sample(b), static_cast<std::size_t>(y.h()) * y.w());
            out.push_back(binarize_generator_output(plane, y.h(), y.w(), threshold));
        }
    }
    return out;
}

double discriminator_accuracy(MaskDiscriminator& discriminator, MaskGenerator& generator,
                              const std::vector<Mask>& real_masks, int n, std::uint64_t seed) {
    if (n < 1 || real_masks.empty()) throw std::invalid_argument("discriminator_accuracy: need n >= 1 real masks");
    std::vector<Mask> real;
    for (int i = 0; i < n; ++i) real.push_back(real_masks[static_cast<std::size_t>(i) % real_masks.size()]);
    const Tensor real_logits = discriminator.forward(masks_to_tensor(real), Mode::eval);
    const auto z = latents_to_tensor(sample_latent(n, seed, generator.config().latent_dim));
    const Tensor fake_logits = discriminator.forward(generator.forward(z, Mode::eval), Mode::eval);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        correct += real_logits[static_cast<std::size_t>(i)] > 0.0f;
        correct += fake_logits[static_cast<std::size_t>(i)] <= 0.0f;
    }
    return static_cast<double>(correct) / (2.0 * n);
}

void save_mask_generator(const std::filesystem::path& path, MaskGenerator& generator, std::uint64_t seed) {
    const nlohmann::json meta{{"kind", "mask_generator"}, {"maskgan", generator.config()}, {"seed", seed}};
    const auto state = generator.state();
    nn::save_checkpoint(path, meta, std::vector<const Tensor*>(state.begin(), state.end()));
}

MaskGenerator load_mask_generator(const std::filesystem::path& path) {
    auto ck = nn::load_checkpoint(path);
    if (ck.meta.value("kind", "") != "mask_generator") {
        throw IoError("load_mask_generator: " + path.string() + " is not a mask generator checkpoint");
    }
    MaskGenerator g(ck.meta.at("maskgan").get<MaskGanConfig>(), ck.meta.value("seed", std::uint64_t{0}));
    nn::restore_tensors(ck.tensors, g.state());
    return g;
}

std::vector<std::filesystem::path> export_masks(const std::filesystem::path& dir, const std::string& run_id,
                                                const std::vector<Mask>& masks) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> out;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        auto p = dir / ("synthmask_" + run_id + "_" + std::to_string(i) + ".png");
        write_png(p, mask_to_gray(masks[i]));
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace gsyn
