#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/grid.hpp"
#include "glandsynth/nn/layers.hpp"

namespace gsyn {

struct LatentVector {
    std::vector<float> z;
};

/// n i.i.d. standard-normal latent vectors; deterministic in seed.
std::vector<LatentVector> sample_latent(int n, std::uint64_t seed, int dim = 100);
/// Packs latents into an [n, dim, 1, 1] tensor.
nn::Tensor latents_to_tensor(const std::vector<LatentVector>& z);

struct MaskGanConfig {
    int resolution = 256;      // power of two, >= 8
    int latent_dim = 100;
    int top_channels = 1024;   // generator width at the 4x4 seed map, halved per stage
    int epochs = 1500;
    int batch_size = 32;
    int iterations = 0;        // > 0 overrides the epoch-derived count
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    float leaky_slope = 0.2f;
    float real_label = 1.0f;   // discriminator target for real masks; < 1 is one-sided smoothing
    int generator_steps = 1;   // generator updates per discriminator update
    double ema_decay = 0.0;    // > 0 returns an exponential moving average of the generator weights

    void validate() const;
    /// log2(resolution / 4).
    [[nodiscard]] int upsampling_stages() const;
    /// Channel count after generator stage s (1-based); 1 for the final stage.
    [[nodiscard]] int generator_channels(int stage) const;
    /// Iterations for a real set of n masks: ceil(epochs * max(1, floor(n / batch))) unless overridden.
    [[nodiscard]] long total_iterations(std::size_t n_real) const;
    bool operator==(const MaskGanConfig&) const = default;
};

void to_json(nlohmann::json& j, const MaskGanConfig& c);
void from_json(const nlohmann::json& j, MaskGanConfig& c);

/// Latent -> linear projection to a 4x4 map, then stride-2 transposed-conv stages with batch
/// norm and LeakyReLU, tanh output in [-1,1].
class MaskGenerator {
public:
    MaskGenerator(const MaskGanConfig& config, std::uint64_t seed);

    nn::Tensor forward(const nn::Tensor& z, nn::Mode mode);
    nn::Tensor backward(const nn::Tensor& grad);
    std::vector<nn::Parameter*> parameters();
    std::vector<nn::Tensor*> state();
    [[nodiscard]] int upsampling_stages() const { return stages_; }
    [[nodiscard]] const MaskGanConfig& config() const { return config_; }

private:
    MaskGanConfig config_;
    int stages_ = 0;
    nn::Sequential net_;
};

/// Mirror of the generator: stride-2 conv stages (batch norm on all but the first) and a
/// terminal 4x4 valid conv giving one logit per sample. Accepts only resolution x resolution.
class MaskDiscriminator {
public:
    MaskDiscriminator(const MaskGanConfig& config, std::uint64_t seed);

    /// [N,1,R,R] in [-1,1] -> [N,1,1,1] logits.
    nn::Tensor forward(const nn::Tensor& x, nn::Mode mode);
    nn::Tensor backward(const nn::Tensor& grad);
    std::vector<nn::Parameter*> parameters();
    std::vector<nn::Tensor*> state();
    [[nodiscard]] int downsampling_stages() const { return stages_; }

private:
    MaskGanConfig config_;
    int stages_ = 0;
    nn::Sequential net_;
};

struct MaskGanHistory {
    std::vector<double> d_loss;  // real + fake BCE, one entry per iteration
    std::vector<double> g_loss;  // non-saturating generator BCE
};

struct MaskGan {
    MaskGenerator generator;
    MaskDiscriminator discriminator;
    MaskGanHistory history;
};

/// {0,1} mask -> {-1,1} tensor plane, and generator output -> [0,1].
nn::Tensor masks_to_tensor(const std::vector<Mask>& masks);

using GanIterationCallback = std::function<void(long iteration, double d_loss, double g_loss)>;

/// Alternating discriminator (real batch + fake batch) and generator steps. Real masks must be
/// nonempty and resolution x resolution. Throws TrainingError on a non-finite loss.
MaskGan train_mask_gan(const std::vector<Mask>& real_masks, const MaskGanConfig& config, std::uint64_t seed,
                       const GanIterationCallback& on_iteration = {});

/// One [-1,1] plane mapped to [0,1], clamped to [1e-6, 1-1e-6], then foreground iff > threshold.
Mask binarize_generator_output(std::span<const float> plane, int rows, int cols, double threshold = 0.5);

/// Generator output mapped to [0,1] (clamped to [1e-6, 1-1e-6]) and thresholded: a pixel is
/// foreground iff its value exceeds `threshold`. Inference mode; deterministic in seed.
std::vector<Mask> generate_masks(MaskGenerator& generator, int n, std::uint64_t seed, double threshold = 0.5);

/// Fraction of correct real/fake calls (logit > 0 means real) over n real and n generated masks.
double discriminator_accuracy(MaskDiscriminator& discriminator, MaskGenerator& generator,
                              const std::vector<Mask>& real_masks, int n, std::uint64_t seed);

void save_mask_generator(const std::filesystem::path& path, MaskGenerator& generator, std::uint64_t seed);
MaskGenerator load_mask_generator(const std::filesystem::path& path);

/// Writes synthmask_<run>_<idx>.png (0/255) for each mask; returns the written paths.
std::vector<std::filesystem::path> export_masks(const std::filesystem::path& dir, const std::string& run_id,
                                                const std::vector<Mask>& masks);

}  // namespace gsyn
