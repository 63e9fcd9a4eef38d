#include "glandsynth/unetseg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "glandsynth/errors.hpp"
#include "glandsynth/nn/checkpoint.hpp"
#include "glandsynth/nn/optim.hpp"
#include "glandsynth/seeds.hpp"

namespace gsyn {

using nn::Mode;
using nn::Tensor;

// ---------------------------------------------------------------------------------------------
// Config

void UNetConfig::validate() const {
    if (depth < 1 || base_channels < 1) throw std::invalid_argument("UNetConfig: depth and base_channels must be >= 1");
    const int div = 1 << depth;
    if (input_rows < div || input_cols < div || input_rows % div != 0 || input_cols % div != 0) {
        throw std::invalid_argument("UNetConfig: input size must be a multiple of 2^depth");
    }
}

void to_json(nlohmann::json& j, const UNetConfig& c) {
    j = nlohmann::json{{"input_size", {c.input_rows, c.input_cols}},
                       {"depth", c.depth},
                       {"base_channels", c.base_channels},
                       {"batch_norm", c.batch_norm}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
    UNetConfig d;
    if (j.contains("input_size")) {
        d.input_rows = j.at("input_size").at(0).get<int>();
        d.input_cols = j.at("input_size").at(1).get<int>();
    }
    d.depth = j.value("depth", d.depth);
    d.base_channels = j.value("base_channels", d.base_channels);
    d.batch_norm = j.value("batch_norm", d.batch_norm);
    d.validate();
    c = d;
}

void SegTrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || plateau_patience < 1) {
        throw std::invalid_argument("SegTrainConfig: epochs, batch_size, patience must be >= 1");
    }
    if (!(lr_init > 0.0)) throw std::invalid_argument("SegTrainConfig: lr_init must be > 0");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
        throw std::invalid_argument("SegTrainConfig: plateau_factor must lie in (0,1)");
    }
}

void to_json(nlohmann::json& j, const SegTrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"optimizer", "adam"},
                       {"lr_init", c.lr_init},
                       {"plateau_patience", c.plateau_patience},
                       {"plateau_factor", c.plateau_factor},
                       {"min_delta", c.min_delta},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"dice_eps", c.dice_eps},
                       {"monitor", "val_loss"}};
}

void from_json(const nlohmann::json& j, SegTrainConfig& c) {
    SegTrainConfig d;
    d.epochs = j.value("epochs", d.epochs);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.lr_init = j.value("lr_init", d.lr_init);
    d.plateau_patience = j.value("plateau_patience", d.plateau_patience);
    d.plateau_factor = j.value("plateau_factor", d.plateau_factor);
    d.min_delta = j.value("min_delta", d.min_delta);
    d.beta1 = j.value("beta1", d.beta1);
    d.beta2 = j.value("beta2", d.beta2);
    d.dice_eps = j.value("dice_eps", d.dice_eps);
    d.validate();
    c = d;
}

// ---------------------------------------------------------------------------------------------
// Model

namespace {

nn::Sequential double_conv(int in, int out, bool bn, std::mt19937_64& rng) {
    nn::Sequential s;
    s.emplace<nn::Conv2d>(in, out, 3, 1, 1, !bn, rng);
    if (bn) s.emplace<nn::BatchNorm2d>(out);
    s.emplace<nn::ReLU>();
    s.emplace<nn::Conv2d>(out, out, 3, 1, 1, !bn, rng);
    if (bn) s.emplace<nn::BatchNorm2d>(out);
    s.emplace<nn::ReLU>();
    return s;
}

}  // namespace

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(derive_seed(seed, "unet-init"));
    const bool bn = config_.batch_norm;
    int in = 1;
    for (int l = 0; l < config_.depth; ++l) {
        const int ch = config_.base_channels << l;
        encoders_.push_back(double_conv(in, ch, bn, rng));
        pools_.emplace_back();
        skip_channels_.push_back(ch);
        in = ch;
    }
    const int bottom = config_.base_channels << config_.depth;
    bottleneck_ = double_conv(in, bottom, bn, rng);
    ups_.reserve(static_cast<std::size_t>(config_.depth));
    decoders_.resize(static_cast<std::size_t>(config_.depth));
    // ups_[l] maps level l+1 features to level l; built shallow-first so indices match levels.
    for (int l = 0; l < config_.depth; ++l) {
        const int ch = config_.base_channels << l;
        ups_.emplace_back(ch * 2, ch, 2, 2, 0, true, rng);
        decoders_[static_cast<std::size_t>(l)] = double_conv(ch * 2, ch, bn, rng);
    }
    head_.emplace<nn::Conv2d>(config_.base_channels, 1, 1, 1, 0, true, rng);
    head_.emplace<nn::Sigmoid>();
}

Tensor UNet::forward(const Tensor& x, Mode mode) {
    const int div = 1 << config_.depth;
    if (x.c() != 1 || x.h() % div != 0 || x.w() % div != 0 || x.h() == 0 || x.w() == 0) {
        throw std::invalid_argument("UNet: input " + x.shape_str() + " must be [N,1,H,W] with H,W multiples of " +
                                    std::to_string(div));
    }
    std::vector<Tensor> skips(static_cast<std::size_t>(config_.depth));
    Tensor h = x;
    for (int l = 0; l < config_.depth; ++l) {
        skips[static_cast<std::size_t>(l)] = encoders_[static_cast<std::size_t>(l)].forward(h, mode);
        h = pools_[static_cast<std::size_t>(l)].forward(skips[static_cast<std::size_t>(l)], mode);
    }
    h = bottleneck_.forward(h, mode);
    for (int l = config_.depth - 1; l >= 0; --l) {
        const auto i = static_cast<std::size_t>(l);
        Tensor up = ups_[i].forward(h, mode);
        h = decoders_[i].forward(nn::concat_channels(skips[i], up), mode);
    }
    return head_.forward(h, mode);
}

Tensor UNet::backward(const Tensor& grad_prob) {
    Tensor g = head_.backward(grad_prob);
    std::vector<Tensor> skip_grads(static_cast<std::size_t>(config_.depth));
    for (int l = 0; l < config_.depth; ++l) {
        const auto i = static_cast<std::size_t>(l);
        Tensor gcat = decoders_[i].backward(g);
        Tensor gup;
        nn::split_channels(gcat, skip_channels_[i], skip_grads[i], gup);
        g = ups_[i].backward(gup);
    }
    g = bottleneck_.backward(g);
    for (int l = config_.depth - 1; l >= 0; --l) {
        const auto i = static_cast<std::size_t>(l);
        g = pools_[i].backward(g);
        nn::add_inplace(g, skip_grads[i]);
        g = encoders_[i].backward(g);
    }
    return g;
}

std::vector<nn::Parameter*> UNet::parameters() {
    std::vector<nn::Parameter*> p;
    for (auto& e : encoders_) e.collect_parameters(p);
    bottleneck_.collect_parameters(p);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
        ups_[i].collect_parameters(p);
        decoders_[i].collect_parameters(p);
    }
    head_.collect_parameters(p);
    return p;
}

std::vector<Tensor*> UNet::state() {
    std::vector<Tensor*> out;
    for (auto* p : parameters()) out.push_back(&p->value);
    std::vector<Tensor*> buffers;
    for (auto& e : encoders_) e.collect_buffers(buffers);
    bottleneck_.collect_buffers(buffers);
    for (auto& d : decoders_) d.collect_buffers(buffers);
    out.insert(out.end(), buffers.begin(), buffers.end());
    return out;
}

std::size_t UNet::parameter_count() { return nn::count_parameters(parameters()); }

// ---------------------------------------------------------------------------------------------
// Loss, scheduler

DiceLoss soft_dice_loss(std::span<const float> pred, std::span<const float> target, double eps) {
    if (pred.size() != target.size()) throw std::invalid_argument("soft_dice_loss: shape mismatch");
    double inter = 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += static_cast<double>(pred[i]) * target[i];
        sum += static_cast<double>(pred[i]) + target[i];
    }
    const double num = 2.0 * inter + eps;
    const double den = sum + eps;
    DiceLoss out;
    out.loss = 1.0 - num / den;
    out.grad.resize(pred.size());
    const double den2 = den * den;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out.grad[i] = static_cast<float>(-(2.0 * target[i] * den - num) / den2);
    }
    return out;
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience, double min_delta)
    : lr_(lr), factor_(factor), patience_(patience), min_delta_(min_delta), best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::step(double loss) {
    if (loss < best_ - min_delta_) {
        best_ = loss;
        bad_epochs_ = 0;
    } else if (++bad_epochs_ >= patience_) {
        lr_ *= factor_;
        bad_epochs_ = 0;
    }
    return lr_;
}

std::string TrainHistory::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,train_loss,val_loss,val_dsc,lr\n";
    for (const auto& e : epochs) {
        os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_dsc << ',' << e.lr << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------------------------
// Training

void make_batch(const std::vector<SliceSample>& samples, std::span<const std::size_t> order, Tensor& images,
                Tensor& masks) {
    if (order.empty()) throw std::invalid_argument("make_batch: empty batch");
    const auto& first = samples[order.front()];
    const int rows = first.image.rows;
    const int cols = first.image.cols;
    images = Tensor(static_cast<int>(order.size()), 1, rows, cols);
    masks = Tensor(static_cast<int>(order.size()), 1, rows, cols);
    for (std::size_t b = 0; b < order.size(); ++b) {
        const auto& s = samples[order[b]];
        if (s.image.rows != rows || s.image.cols != cols || !s.mask.same_shape(s.image)) {
            throw std::invalid_argument("make_batch: inconsistent sample shapes");
        }
        std::copy(s.image.px.begin(), s.image.px.end(), images.sample(static_cast<int>(b)));
        float* m = masks.sample(static_cast<int>(b));
        for (std::size_t i = 0; i < s.mask.size(); ++i) m[i] = s.mask.px[i] ? 1.0f : 0.0f;
    }
}

Mask threshold_probabilities(std::span<const float> prob, int rows, int cols, float threshold) {
    if (prob.size() != static_cast<std::size_t>(rows) * cols) throw std::invalid_argument("threshold: size mismatch");
    Mask m(rows, cols);
    for (std::size_t i = 0; i < prob.size(); ++i) m.px[i] = prob[i] >= threshold ? 1 : 0;
    return m;
}

std::pair<double, double> evaluate_segmenter(UNet& model, const std::vector<SliceSample>& samples, double dice_eps) {
    if (samples.empty()) throw std::invalid_argument("evaluate_segmenter: no samples");
    constexpr std::size_t kBatch = 16;
    double inter = 0.0;
    double sum = 0.0;
    double hard = 0.0;
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t start = 0; start < samples.size(); start += kBatch) {
        const std::size_t count = std::min(kBatch, samples.size() - start);
        Tensor images;
        Tensor masks;
        make_batch(samples, std::span<const std::size_t>(idx).subspan(start, count), images, masks);
        const Tensor prob = model.forward(images, Mode::eval);
        for (std::size_t i = 0; i < prob.size(); ++i) {
            inter += static_cast<double>(prob[i]) * masks[i];
            sum += static_cast<double>(prob[i]) + masks[i];
        }
        for (std::size_t b = 0; b < count; ++b) {
            const auto& s = samples[start + b];
            const Mask pred = threshold_probabilities(
                std::span<const float>(prob.sample(static_cast<int>(b)), prob.sample_size()), s.mask.rows,
                s.mask.cols);
            std::size_t i2 = 0;
            std::size_t np = 0;
            std::size_t nt = 0;
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const bool p = pred.px[i] != 0;
                const bool t = s.mask.px[i] != 0;
                i2 += p && t;
                np += p;
                nt += t;
            }
            hard += (np + nt) == 0 ? 1.0 : 2.0 * static_cast<double>(i2) / static_cast<double>(np + nt);
        }
    }
    const double loss = 1.0 - (2.0 * inter + dice_eps) / (sum + dice_eps);
    return {loss, hard / static_cast<double>(samples.size())};
}

TrainHistory train_segmenter(UNet& model, const std::vector<SliceSample>& train, const std::vector<SliceSample>& val,
                             const SegTrainConfig& config, std::uint64_t seed, const AugmentSpec* augmentation,
                             const EpochCallback& on_epoch) {
    config.validate();
    if (train.empty()) throw std::invalid_argument("train_segmenter: empty training split");
    if (val.empty()) throw std::invalid_argument("train_segmenter: empty validation split");

    auto params = model.parameters();
    nn::Adam opt(params, nn::AdamOptions{config.lr_init, config.beta1, config.beta2, 1e-8});
    PlateauScheduler scheduler(config.lr_init, config.plateau_factor, config.plateau_patience, config.min_delta);
    std::mt19937_64 shuffle_rng(derive_seed(seed, "seg-shuffle"));
    const std::uint64_t augment_seed = derive_seed(seed, "seg-augment");

    const auto state = model.state();
    std::vector<Tensor> best_state;
    double best_val = std::numeric_limits<double>::infinity();

    TrainHistory history;
    std::vector<std::size_t> order(train.size());
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<SliceSample> augmented;
        if (augmentation != nullptr) {
            augmented = build_augmented_epoch(train, *augmentation, derive_seed(augment_seed, static_cast<std::uint64_t>(epoch)));
        }
        const auto& data = augmentation != nullptr ? augmented : train;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t count = std::min(batch, order.size() - start);
            Tensor images;
            Tensor masks;
            make_batch(data, std::span<const std::size_t>(order).subspan(start, count), images, masks);
            opt.zero_grad();
            const Tensor prob = model.forward(images, Mode::train);
            const DiceLoss dl = soft_dice_loss(prob.values(), masks.values(), config.dice_eps);
            if (!std::isfinite(dl.loss)) {
                throw TrainingError("train_segmenter: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(history.steps + 1));
            }
            Tensor grad(prob.n(), prob.c(), prob.h(), prob.w());
            std::copy(dl.grad.begin(), dl.grad.end(), grad.data());
            model.backward(grad);
            opt.step();
            ++history.steps;
            loss_sum += dl.loss;
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / batches;
        std::tie(rec.val_loss, rec.val_dsc) = evaluate_segmenter(model, val, config.dice_eps);
        if (!std::isfinite(rec.val_loss)) {
            throw TrainingError("train_segmenter: non-finite validation loss at epoch " + std::to_string(epoch));
        }
        rec.lr = opt.lr();
        if (rec.val_loss < best_val) {
            best_val = rec.val_loss;
            history.best_epoch = epoch;
            best_state.clear();
            for (const Tensor* t : state) best_state.push_back(*t);
        }
        opt.set_lr(scheduler.step(rec.val_loss));
        history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    if (!best_state.empty()) nn::restore_tensors(best_state, state);
    return history;
}

// ---------------------------------------------------------------------------------------------
// Inference, persistence

Mask predict_mask(UNet& model, const Image& image) {
    const auto& c = model.config();
    if (image.rows != c.input_rows || image.cols != c.input_cols) {
        throw std::invalid_argument("predict_mask: image is " + std::to_string(image.rows) + "x" +
                                    std::to_string(image.cols) + ", model expects " + std::to_string(c.input_rows) +
                                    "x" + std::to_string(c.input_cols));
    }
    Tensor x(1, 1, image.rows, image.cols);
    std::copy(image.px.begin(), image.px.end(), x.data());
    const Tensor prob = model.forward(x, Mode::eval);
    return threshold_probabilities(prob.values(), image.rows, image.cols);
}

std::vector<Mask> predict_masks(UNet& model, const std::vector<SliceSample>& samples, int batch_size) {
    std::vector<Mask> out;
    out.reserve(samples.size());
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto& c = model.config();
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch_size), samples.size() - start);
        Tensor images;
        Tensor masks;
        make_batch(samples, std::span<const std::size_t>(idx).subspan(start, count), images, masks);
        if (images.h() != c.input_rows || images.w() != c.input_cols) {
            throw std::invalid_argument("predict_masks: sample size does not match model input size");
        }
        const Tensor prob = model.forward(images, Mode::eval);
        for (std::size_t b = 0; b < count; ++b) {
            out.push_back(threshold_probabilities(
                std::span<const float>(prob.sample(static_cast<int>(b)), prob.sample_size()), images.h(), images.w()));
        }
    }
    return out;
}

void save_unet(const std::filesystem::path& path, UNet& model, const SegTrainConfig& train, std::uint64_t seed) {
    nlohmann::json meta{{"kind", "unet"}, {"unet", model.config()}, {"train", train}, {"seed", seed}};
    const auto state = model.state();
    nn::save_checkpoint(path, meta, std::vector<const Tensor*>(state.begin(), state.end()));
}

UNet load_unet(const std::filesystem::path& path) {
    auto ck = nn::load_checkpoint(path);
    if (ck.meta.value("kind", "") != "unet") throw IoError("load_unet: " + path.string() + " is not a U-Net checkpoint");
    UNet model(ck.meta.at("unet").get<UNetConfig>(), ck.meta.value("seed", std::uint64_t{0}));
    nn::restore_tensors(ck.tensors, model.state());
    return model;
}

}  // namespace gsyn
