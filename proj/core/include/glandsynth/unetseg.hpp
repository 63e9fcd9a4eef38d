#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/augment.hpp"
#include "glandsynth/grid.hpp"
#include "glandsynth/nn/layers.hpp"

namespace gsyn {

struct UNetConfig {
    int input_rows = 256;
    int input_cols = 256;
    int depth = 4;            // encoder levels above the bottleneck
    int base_channels = 64;   // doubled at every level
    bool batch_norm = true;

    void validate() const;
    bool operator==(const UNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

/// Same-padding U-Net: (conv3x3-BN-ReLU)x2 blocks, 2x2 max-pool down, 2x2 transposed-conv up,
/// skip concatenation [encoder, decoder], 1x1 head with logistic output.
class UNet {
public:
    UNet(const UNetConfig& config, std::uint64_t seed);

    /// [N,1,H,W] images -> [N,1,H,W] probabilities in (0,1).
    nn::Tensor forward(const nn::Tensor& x, nn::Mode mode);
    /// Gradient w.r.t. the output probabilities; accumulates parameter gradients.
    nn::Tensor backward(const nn::Tensor& grad_prob);

    std::vector<nn::Parameter*> parameters();
    /// Parameters followed by normalisation buffers, in a fixed order.
    std::vector<nn::Tensor*> state();
    [[nodiscard]] std::size_t parameter_count();
    [[nodiscard]] const UNetConfig& config() const { return config_; }

private:
    UNetConfig config_;
    std::vector<nn::Sequential> encoders_;
    std::vector<nn::MaxPool2d> pools_;
    nn::Sequential bottleneck_;
    std::vector<nn::ConvTranspose2d> ups_;
    std::vector<nn::Sequential> decoders_;
    nn::Sequential head_;
    std::vector<int> skip_channels_;
};

struct SegTrainConfig {
    int epochs = 200;
    int batch_size = 32;
    double lr_init = 1e-3;
    int plateau_patience = 10;
    double plateau_factor = 0.1;
    double min_delta = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double dice_eps = 1.0;

    void validate() const;
    bool operator==(const SegTrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const SegTrainConfig& c);
void from_json(const nlohmann::json& j, SegTrainConfig& c);

/// Reduce-on-plateau: after `patience` consecutive epochs without strict improvement
/// (by more than min_delta) the rate is multiplied by `factor` and the counter resets.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, double factor, int patience, double min_delta = 0.0);
    /// Feed one epoch's monitored loss; returns the rate for the next epoch.
    double step(double loss);
    [[nodiscard]] double lr() const { return lr_; }
    [[nodiscard]] int epochs_without_improvement() const { return bad_epochs_; }

private:
    double lr_;
    double factor_;
    int patience_;
    double min_delta_;
    double best_;
    int bad_epochs_ = 0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dsc = 0.0;
    double lr = 0.0;  // rate used during this epoch
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    long steps = 0;

    /// CSV with header epoch,train_loss,val_loss,val_dsc,lr.
    [[nodiscard]] std::string to_csv() const;
};

struct DiceLoss {
    double loss = 0.0;
    std::vector<float> grad;
};

/// 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps), with its gradient w.r.t. p.
DiceLoss soft_dice_loss(std::span<const float> pred, std::span<const float> target, double eps = 1.0);

/// Packs samples[first, first+count) into [count,1,H,W] image and mask tensors.
void make_batch(const std::vector<SliceSample>& samples, std::span<const std::size_t> order, nn::Tensor& images,
                nn::Tensor& masks);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch Adam on soft Dice with plateau scheduling on validation loss. Restores the
/// best-validation-loss weights before returning. `augmentation`, when given, re-samples a
/// transformed copy of the training set every epoch.
TrainHistory train_segmenter(UNet& model, const std::vector<SliceSample>& train, const std::vector<SliceSample>& val,
                             const SegTrainConfig& config, std::uint64_t seed,
                             const AugmentSpec* augmentation = nullptr, const EpochCallback& on_epoch = {});

/// Mean soft-Dice loss and mean hard Dice over samples (evaluation mode).
std::pair<double, double> evaluate_segmenter(UNet& model, const std::vector<SliceSample>& samples,
                                             double dice_eps = 1.0);

Mask threshold_probabilities(std::span<const float> prob, int rows, int cols, float threshold = 0.5f);

/// Thresholds the probability map at 0.5. Throws std::invalid_argument on a size mismatch.
Mask predict_mask(UNet& model, const Image& image);
std::vector<Mask> predict_masks(UNet& model, const std::vector<SliceSample>& samples, int batch_size = 16);

void save_unet(const std::filesystem::path& path, UNet& model, const SegTrainConfig& train, std::uint64_t seed);
UNet load_unet(const std::filesystem::path& path);

}  // namespace gsyn
