#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/curation.hpp"
#include "glandsynth/grid.hpp"
#include "glandsynth/nn/layers.hpp"

namespace gsyn {

enum class NormKind { instance, batch, none };

struct Pix2PixConfig {
    int resolution = 256;     // power of two, >= 32
    int base_channels = 64;   // first encoder stage; doubled per stage up to max_channels
    int max_channels = 512;
    int epochs = 200;
    int batch_size = 1;
    int iterations = 0;       // > 0 overrides the epoch-derived count
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double lambda_l1 = 100.0;
    float leaky_slope = 0.2f;
    NormKind norm = NormKind::instance;
    int disc_stride_layers = 3;  // stride-2 stages of the patch discriminator

    void validate() const;
    /// Encoder stages down to a 1x1 bottleneck: log2(resolution).
    [[nodiscard]] int down_stages() const;
    /// Output channels of encoder stage l (0-based).
    [[nodiscard]] int encoder_channels(int l) const;
    /// epochs * ceil(n / batch_size) unless overridden.
    [[nodiscard]] long total_iterations(std::size_t n_pairs) const;
    bool operator==(const Pix2PixConfig&) const = default;
};

void to_json(nlohmann::json& j, const Pix2PixConfig& c);
void from_json(const nlohmann::json& j, Pix2PixConfig& c);

/// Encoder-decoder with skip connections. k4 s2 convolutions down to 1x1 and transposed
/// convolutions back up; input is a mask in {-1,1}, output a tanh image in [-1,1].
class TranslatorGenerator {
public:
    TranslatorGenerator(const Pix2PixConfig& config, std::uint64_t seed);

    nn::Tensor forward(const nn::Tensor& mask, nn::Mode mode);
    nn::Tensor backward(const nn::Tensor& grad);
    std::vector<nn::Parameter*> parameters();
    std::vector<nn::Tensor*> state();
    [[nodiscard]] const Pix2PixConfig& config() const { return config_; }

private:
    Pix2PixConfig config_;
    std::vector<nn::Sequential> encoders_;
    std::vector<nn::Sequential> decoders_;  // decoders_[l] outputs the resolution of encoder input l
    std::vector<int> channels_;
};

/// Conditional patch classifier over concat[mask, image]; one logit per patch.
class PatchDiscriminator {
public:
    PatchDiscriminator(const Pix2PixConfig& config, std::uint64_t seed);

    /// [N,1,R,R] mask and [N,1,R,R] image (both in [-1,1]) -> [N,1,P,P] logits.
    nn::Tensor forward(const nn::Tensor& mask, const nn::Tensor& image, nn::Mode mode);
    /// Returns the gradient w.r.t. the image input only.
    nn::Tensor backward(const nn::Tensor& grad);
    std::vector<nn::Parameter*> parameters();
    std::vector<nn::Tensor*> state();
    /// Side length P of the patch grid for a resolution x resolution input.
    [[nodiscard]] int grid_size() const;

private:
    Pix2PixConfig config_;
    nn::Sequential net_;
};

struct TranslatorHistory {
    std::vector<double> d_loss;   // 0.5 * (real + fake) BCE
    std::vector<double> g_adv;
    std::vector<double> g_l1;     // mean |G(x) - y| on the tanh scale
    std::vector<double> g_total;  // g_adv + lambda * g_l1
};

struct Pix2Pix {
    TranslatorGenerator generator;
    PatchDiscriminator discriminator;
    TranslatorHistory history;
};

/// [0,1] images -> [N,1,H,W] tensor on the tanh scale.
nn::Tensor images_to_tensor(const std::vector<Image>& images);

using TranslatorCallback = std::function<void(long iteration, double d_loss, double g_l1)>;

/// Alternating patch-discriminator and generator (adversarial + lambda * L1) updates on real
/// (mask, image) pairs. Throws TrainingError on a non-finite loss.
Pix2Pix train_translator(const std::vector<SliceSample>& pairs, const Pix2PixConfig& config, std::uint64_t seed,
                         const TranslatorCallback& on_iteration = {});

/// Deterministic inference: tanh output rescaled to [0,1].
Image translate_mask(TranslatorGenerator& generator, const Mask& mask);
std::vector<Image> translate_masks(TranslatorGenerator& generator, const std::vector<Mask>& masks);

struct PairProvenance {
    std::string maskgen_run;
    std::string candidate_id;
    std::string translator_id;

    bool operator==(const PairProvenance&) const = default;
};

struct SyntheticPair {
    std::string id;
    Mask mask;
    Image image;
    PairProvenance provenance;
};

/// One pair per candidate id, in order. Ids may repeat; pair ids are <prefix>_<index>.
/// Throws std::invalid_argument when a candidate is not accepted and UnknownCandidateError
/// when it does not exist.
std::vector<SyntheticPair> synthesize_pairs(TranslatorGenerator& generator, const CurationStore& store,
                                            const std::vector<std::string>& candidate_ids,
                                            const std::string& maskgen_run, const std::string& translator_id,
                                            const std::string& prefix = "syn");

/// pair_<id>_mask.png, pair_<id>_t2.png and manifest.json; returns the manifest path.
std::filesystem::path export_pairs(const std::filesystem::path& dir, const std::vector<SyntheticPair>& pairs);
std::vector<SyntheticPair> load_pairs(const std::filesystem::path& manifest);

void save_translator(const std::filesystem::path& path, TranslatorGenerator& generator, std::uint64_t seed);
TranslatorGenerator load_translator(const std::filesystem::path& path);

}  // namespace gsyn
