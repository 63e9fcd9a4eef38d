#include "glandsynth/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "glandsynth/errors.hpp"
#include "glandsynth/maskgen.hpp"
#include "glandsynth/nn/checkpoint.hpp"
#include "glandsynth/nn/losses.hpp"
#include "glandsynth/nn/optim.hpp"
#include "glandsynth/png_io.hpp"
#include "glandsynth/seeds.hpp"

namespace gsyn {

using nn::Mode;
using nn::Tensor;

namespace {

const char* norm_name(NormKind k) {
    switch (k) {
        case NormKind::instance: return "instance";
        case NormKind::batch: return "batch";
        case NormKind::none: return "none";
    }
    return "instance";
}

NormKind parse_norm(const std::string& s) {
    if (s == "instance") return NormKind::instance;
    if (s == "batch") return NormKind::batch;
    if (s == "none") return NormKind::none;
    throw std::invalid_argument("Pix2PixConfig: unknown norm '" + s + "'");
}

void add_norm(nn::Sequential& s, NormKind kind, int channels) {
    if (kind == NormKind::instance) s.emplace<nn::InstanceNorm2d>(channels);
    if (kind == NormKind::batch) s.emplace<nn::BatchNorm2d>(channels);
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Config

void Pix2PixConfig::validate() const {
    if (resolution < 32 || (resolution & (resolution - 1)) != 0) {
        throw std::invalid_argument("Pix2PixConfig: resolution must be a power of two >= 32");
    }
    if (base_channels < 1 || max_channels < base_channels) {
        throw std::invalid_argument("Pix2PixConfig: need 1 <= base_channels <= max_channels");
    }
    if (epochs < 1 || batch_size < 1 || iterations < 0) {
        throw std::invalid_argument("Pix2PixConfig: epochs and batch_size must be >= 1");
    }
    if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("Pix2PixConfig: bad optimizer settings");
    }
    if (!(lambda_l1 >= 0.0)) throw std::invalid_argument("Pix2PixConfig: lambda_l1 must be >= 0");
    if (disc_stride_layers < 1 || (resolution >> disc_stride_layers) - 2 < 1) {
        throw std::invalid_argument("Pix2PixConfig: too many discriminator stages for the resolution");
    }
}

int Pix2PixConfig::down_stages() const {
    int s = 0;
    for (int r = resolution; r > 1; r /= 2) ++s;
    return s;
}

int Pix2PixConfig::encoder_channels(int l) const {
    long c = static_cast<long>(base_channels) << std::min(l, 30);
    return static_cast<int>(std::min<long>(c, max_channels));
}

long Pix2PixConfig::total_iterations(std::size_t n_pairs) const {
    if (iterations > 0) return iterations;
    const auto b = static_cast<std::size_t>(batch_size);
    return static_cast<long>(epochs) * static_cast<long>((n_pairs + b - 1) / b);
}

void to_json(nlohmann::json& j, const Pix2PixConfig& c) {
    j = nlohmann::json{{"resolution", c.resolution},   {"base_channels", c.base_channels},
                       {"max_channels", c.max_channels}, {"epochs", c.epochs},
                       {"batch_size", c.batch_size},     {"iterations", c.iterations},
                       {"lr", c.lr},                     {"beta1", c.beta1},
                       {"beta2", c.beta2},               {"lambda_l1", c.lambda_l1},
                       {"leaky_slope", c.leaky_slope},   {"norm", norm_name(c.norm)},
                       {"disc_stride_layers", c.disc_stride_layers}};
}

void from_json(const nlohmann::json& j, Pix2PixConfig& c) {
    Pix2PixConfig d;
    d.resolution = j.value("resolution", d.resolution);
    d.base_channels = j.value("base_channels", d.base_channels);
    d.max_channels = j.value("max_channels", d.max_channels);
    d.epochs = j.value("epochs", d.epochs);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.iterations = j.value("iterations", d.iterations);
    d.lr = j.value("lr", d.lr);
    d.beta1 = j.value("beta1", d.beta1);
    d.beta2 = j.value("beta2", d.beta2);
    d.lambda_l1 = j.value("lambda_l1", d.lambda_l1);
    d.leaky_slope = j.value("leaky_slope", d.leaky_slope);
    if (j.contains("norm")) d.norm = parse_norm(j.at("norm").get<std::string>());
    d.disc_stride_layers = j.value("disc_stride_layers", d.disc_stride_layers);
    d.validate();
    c = d;
}

// ---------------------------------------------------------------------------------------------
// Networks

TranslatorGenerator::TranslatorGenerator(const Pix2PixConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(derive_seed(seed, "pix2pix-generator"));
    const auto init = nn::Init::gaussian(0.02f);
    const int stages = config_.down_stages();
    const bool normed = config_.norm != NormKind::none;
    for (int l = 0; l < stages; ++l) channels_.push_back(config_.encoder_channels(l));

    encoders_.resize(static_cast<std::size_t>(stages));
    for (int l = 0; l < stages; ++l) {
        auto& e = encoders_[static_cast<std::size_t>(l)];
        const bool innermost = l == stages - 1;
        if (l == 0) {
            e.emplace<nn::Conv2d>(1, channels_[0], 4, 2, 1, true, rng, init);
            continue;
        }
        e.emplace<nn::LeakyReLU>(config_.leaky_slope);
        const bool norm_here = normed && !innermost;
        e.emplace<nn::Conv2d>(channels_[static_cast<std::size_t>(l - 1)], channels_[static_cast<std::size_t>(l)], 4, 2,
                              1, !norm_here, rng, init);
        if (norm_here) add_norm(e, config_.norm, channels_[static_cast<std::size_t>(l)]);
    }

    decoders_.resize(static_cast<std::size_t>(stages));
    for (int l = stages - 1; l >= 0; --l) {
        auto& d = decoders_[static_cast<std::size_t>(l)];
        const int in = l == stages - 1 ? channels_[static_cast<std::size_t>(l)] : 2 * channels_[static_cast<std::size_t>(l)];
        const int out = l > 0 ? channels_[static_cast<std::size_t>(l - 1)] : 1;
        const bool outermost = l == 0;
        d.emplace<nn::ReLU>();
        d.emplace<nn::ConvTranspose2d>(in, out, 4, 2, 1, outermost || !normed, rng, init);
        if (outermost) {
            d.emplace<nn::Tanh>();
        } else {
            add_norm(d, config_.norm, out);
        }
    }
}

Tensor TranslatorGenerator::forward(const Tensor& mask, Mode mode) {
    if (mask.c() != 1 || mask.h() != config_.resolution || mask.w() != config_.resolution) {
        throw std::invalid_argument("TranslatorGenerator: input " + mask.shape_str() + " must be [N,1," +
                                    std::to_string(config_.resolution) + "," + std::to_string(config_.resolution) +
                                    "]");
    }
    const std::size_t stages = encoders_.size();
    std::vector<Tensor> enc(stages);
    enc[0] = encoders_[0].forward(mask, mode);
    for (std::size_t l = 1; l < stages; ++l) enc[l] = encoders_[l].forward(enc[l - 1], mode);
    Tensor d = decoders_[stages - 1].forward(enc[stages - 1], mode);
    for (std::size_t l = stages - 1; l-- > 0;) d = decoders_[l].forward(nn::concat_channels(enc[l], d), mode);
    return d;
}

Tensor TranslatorGenerator::backward(const Tensor& grad) {
    const std::size_t stages = encoders_.size();
    std::vector<Tensor> skip(stages);
    Tensor g = grad;
    for (std::size_t l = 0; l + 1 < stages; ++l) {
        Tensor up;
        nn::split_channels(decoders_[l].backward(g), channels_[l], skip[l], up);
        g = std::move(up);
    }
    g = decoders_[stages - 1].backward(g);
    for (std::size_t l = stages - 1; l >= 1; --l) {
        Tensor prev = encoders_[l].backward(g);
        nn::add_inplace(prev, skip[l - 1]);
        g = std::move(prev);
    }
    return encoders_[0].backward(g);
}

std::vector<nn::Parameter*> TranslatorGenerator::parameters() {
    std::vector<nn::Parameter*> p;
    for (auto& e : encoders_) e.collect_parameters(p);
    for (auto& d : decoders_) d.collect_parameters(p);
    return p;
}

std::vector<Tensor*> TranslatorGenerator::state() {
    std::vector<Tensor*> out;
    for (auto* p : parameters()) out.push_back(&p->value);
    for (auto& e : encoders_) e.collect_buffers(out);
    for (auto& d : decoders_) d.collect_buffers(out);
    return out;
}

PatchDiscriminator::PatchDiscriminator(const Pix2PixConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(derive_seed(seed, "pix2pix-discriminator"));
    const auto init = nn::Init::gaussian(0.02f);
    const bool normed = config_.norm != NormKind::none;
    int in = 2;
    for (int n = 0; n <= config_.disc_stride_layers; ++n) {
        const int out = config_.encoder_channels(n);
        const bool first = n == 0;
        const int stride = n < config_.disc_stride_layers ? 2 : 1;
        net_.emplace<nn::Conv2d>(in, out, 4, stride, 1, first || !normed, rng, init);
        if (!first) add_norm(net_, config_.norm, out);
        net_.emplace<nn::LeakyReLU>(config_.leaky_slope);
        in = out;
    }
    net_.emplace<nn::Conv2d>(in, 1, 4, 1, 1, true, rng, init);
}

Tensor PatchDiscriminator::forward(const Tensor& mask, const Tensor& image, Mode mode) {
    const int r = config_.resolution;
    if (mask.c() != 1 || image.c() != 1 || mask.h() != r || mask.w() != r || image.h() != r || image.w() != r ||
        mask.n() != image.n()) {
        throw std::invalid_argument("PatchDiscriminator: inputs " + mask.shape_str() + " and " + image.shape_str() +
                                    " must both be [N,1," + std::to_string(r) + "," + std::to_string(r) + "]");
    }
    return net_.forward(nn::concat_channels(mask, image), mode);
}

Tensor PatchDiscriminator::backward(const Tensor& grad) {
    Tensor g_mask;
    Tensor g_image;
    nn::split_channels(net_.backward(grad), 1, g_mask, g_image);
    return g_image;
}

std::vector<nn::Parameter*> PatchDiscriminator::parameters() {
    std::vector<nn::Parameter*> p;
    net_.collect_parameters(p);
    return p;
}

std::vector<Tensor*> PatchDiscriminator::state() {
    std::vector<Tensor*> out;
    for (auto* p : parameters()) out.push_back(&p->value);
    net_.collect_buffers(out);
    return out;
}

int PatchDiscriminator::grid_size() const { return (config_.resolution >> config_.disc_stride_layers) - 2; }

// ---------------------------------------------------------------------------------------------
// Training

Tensor images_to_tensor(const std::vector<Image>& images) {
    if (images.empty()) return {};
    const int h = images.front().rows;
    const int w = images.front().cols;
    Tensor t(static_cast<int>(images.size()), 1, h, w);
    for (std::size_t b = 0; b < images.size(); ++b) {
        if (images[b].rows != h || images[b].cols != w) throw std::invalid_argument("images_to_tensor: mixed sizes");
        float* dst = t.sample(static_cast<int>(b));
        for (std::size_t i = 0; i < images[b].size(); ++i) dst[i] = 2.0f * images[b].px[i] - 1.0f;
    }
    return t;
}

namespace {

void check_finite(double v, const char* what, long it) {
    if (!std::isfinite(v)) {
        throw TrainingError(std::string("train_translator: non-finite ") + what + " at iteration " + std::to_string(it));
    }
}

}  // namespace

Pix2Pix train_translator(const std::vector<SliceSample>& pairs, const Pix2PixConfig& config, std::uint64_t seed,
                         const TranslatorCallback& on_iteration) {
    config.validate();
    if (pairs.empty()) throw std::invalid_argument("train_translator: no training pairs");
    for (const auto& p : pairs) {
        if (p.image.rows != config.resolution || p.image.cols != config.resolution || !p.mask.same_shape(p.image)) {
            throw std::invalid_argument("train_translator: pairs must be " + std::to_string(config.resolution) + "x" +
                                        std::to_string(config.resolution));
        }
    }

    Pix2Pix model{TranslatorGenerator(config, seed), PatchDiscriminator(config, seed), {}};
    auto& G = model.generator;
    auto& D = model.discriminator;
    const nn::AdamOptions opts{config.lr, config.beta1, config.beta2, 1e-8};
    nn::Adam opt_g(G.parameters(), opts);
    nn::Adam opt_d(D.parameters(), opts);

    const long total = config.total_iterations(pairs.size());
    const std::size_t batch = std::min(pairs.size(), static_cast<std::size_t>(config.batch_size));
    std::mt19937_64 order_rng(derive_seed(seed, "pix2pix-order"));
    std::vector<std::size_t> order(pairs.size());
    std::size_t cursor = order.size();
    const float lambda = static_cast<float>(config.lambda_l1);

    std::vector<Mask> masks;
    std::vector<Image> images;
    for (long it = 1; it <= total; ++it) {
        if (cursor + batch > order.size()) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), order_rng);
            cursor = 0;
        }
        masks.clear();
        images.clear();
        for (std::size_t b = 0; b < batch; ++b) {
            masks.push_back(pairs[order[cursor + b]].mask);
            images.push_back(pairs[order[cursor + b]].image);
        }
        cursor += batch;
        const Tensor src = masks_to_tensor(masks);
        const Tensor target = images_to_tensor(images);
        const Tensor fake = G.forward(src, Mode::train);

        opt_d.zero_grad();
        auto real_loss = nn::bce_with_logits(D.forward(src, target, Mode::train), 1.0f);
        nn::scale_inplace(real_loss.grad, 0.5f);
        D.backward(real_loss.grad);
        auto fake_loss = nn::bce_with_logits(D.forward(src, fake, Mode::train), 0.0f);
        nn::scale_inplace(fake_loss.grad, 0.5f);
        D.backward(fake_loss.grad);
        const double d_loss = 0.5 * (real_loss.loss + fake_loss.loss);
        check_finite(d_loss, "discriminator loss", it);
        opt_d.step();

        opt_g.zero_grad();
        const auto adv = nn::bce_with_logits(D.forward(src, fake, Mode::train), 1.0f);
        Tensor g_fake = D.backward(adv.grad);
        const auto l1 = nn::l1_loss(fake, target);
        double g_total = adv.loss;
        if (lambda > 0.0f) {
            Tensor g_l1 = l1.grad;
            nn::scale_inplace(g_l1, lambda);
            nn::add_inplace(g_fake, g_l1);
            g_total += config.lambda_l1 * l1.loss;
        }
        check_finite(g_total, "generator loss", it);
        G.backward(g_fake);
        opt_g.step();

        model.history.d_loss.push_back(d_loss);
        model.history.g_adv.push_back(adv.loss);
        model.history.g_l1.push_back(l1.loss);
        model.history.g_total.push_back(g_total);
        if (on_iteration) on_iteration(it, d_loss, l1.loss);
    }
    return model;
}

// ---------------------------------------------------------------------------------------------
// Inference

std::vector<Image> translate_masks(TranslatorGenerator& generator, const std::vector<Mask>& masks) {
    std::vector<Image> out;
    out.reserve(masks.size());
    constexpr std::size_t kChunk = 8;
    for (std::size_t start = 0; start < masks.size(); start += kChunk) {
        const std::size_t count = std::min(kChunk, masks.size() - start);
        const std::vector<Mask> chunk(masks.begin() + static_cast<std::ptrdiff_t>(start),
                                      masks.begin() + static_cast<std::ptrdiff_t>(start + count));
        const Tensor y = generator.forward(masks_to_tensor(chunk), Mode::eval);
        for (std::size_t b = 0; b < count; ++b) {
            Image im(y.h(), y.w());
            const float* src = y.sample(static_cast<int>(b));
            for (std::size_t i = 0; i < im.size(); ++i) im.px[i] = std::clamp((src[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
            out.push_back(std::move(im));
        }
    }
    return out;
}

Image translate_mask(TranslatorGenerator& generator, const Mask& mask) {
    return std::move(translate_masks(generator, {mask}).front());
}

std::vector<SyntheticPair> synthesize_pairs(TranslatorGenerator& generator, const CurationStore& store,
                                            const std::vector<std::string>& candidate_ids,
                                            const std::string& maskgen_run, const std::string& translator_id,
                                            const std::string& prefix) {
    std::vector<Mask> masks;
    masks.reserve(candidate_ids.size());
    for (const auto& id : candidate_ids) {
        const CandidateRecord rec = store.get(id);
        if (rec.verdict != Verdict::accepted) {
            throw std::invalid_argument("synthesize_pairs: candidate " + id + " is " + to_string(rec.verdict) +
                                        ", not accepted");
        }
        masks.push_back(store.mask(id));
    }
    const auto images = translate_masks(generator, masks);
    std::vector<SyntheticPair> out;
    out.reserve(masks.size());
    char buf[32];
    for (std::size_t i = 0; i < masks.size(); ++i) {
        std::snprintf(buf, sizeof buf, "_%06zu", i);
        out.push_back(SyntheticPair{prefix + buf, std::move(masks[i]), images[i],
                                    PairProvenance{maskgen_run, candidate_ids[i], translator_id}});
    }
    return out;
}

std::filesystem::path export_pairs(const std::filesystem::path& dir, const std::vector<SyntheticPair>& pairs) {
    std::filesystem::create_directories(dir);
    nlohmann::json items = nlohmann::json::array();
    for (const auto& p : pairs) {
        const std::string mask_file = "pair_" + p.id + "_mask.png";
        const std::string t2_file = "pair_" + p.id + "_t2.png";
        write_png(dir / mask_file, mask_to_gray(p.mask));
        write_png(dir / t2_file, image_to_gray(p.image));
        items.push_back({{"id", p.id},
                         {"mask", mask_file},
                         {"t2", t2_file},
                         {"maskgen_run", p.provenance.maskgen_run},
                         {"candidate_id", p.provenance.candidate_id},
                         {"translator_id", p.provenance.translator_id}});
    }
    const auto manifest = dir / "manifest.json";
    std::ofstream os(manifest);
    if (!os) throw IoError("export_pairs: cannot write " + manifest.string());
    os << nlohmann::json{{"pairs", items}}.dump(2) << '\n';
    return manifest;
}

std::vector<SyntheticPair> load_pairs(const std::filesystem::path& manifest) {
    std::ifstream is(manifest);
    if (!is) throw IoError("load_pairs: cannot read " + manifest.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_pairs: malformed manifest " + manifest.string() + ": " + e.what());
    }
    const auto dir = manifest.parent_path();
    std::vector<SyntheticPair> out;
    for (const auto& item : j.at("pairs")) {
        SyntheticPair p;
        p.id = item.at("id").get<std::string>();
        p.mask = gray_to_mask(read_png(dir / item.at("mask").get<std::string>()));
        p.image = gray_to_image(read_png(dir / item.at("t2").get<std::string>()));
        p.provenance = PairProvenance{item.value("maskgen_run", ""), item.value("candidate_id", ""),
                                      item.value("translator_id", "")};
        if (!p.mask.same_shape(p.image)) throw IoError("load_pairs: mask and image sizes differ for " + p.id);
        out.push_back(std::move(p));
    }
    return out;
}

void save_translator(const std::filesystem::path& path, TranslatorGenerator& generator, std::uint64_t seed) {
    const nlohmann::json meta{{"kind", "translator"}, {"pix2pix", generator.config()}, {"seed", seed}};
    const auto state = generator.state();
    nn::save_checkpoint(path, meta, std::vector<const Tensor*>(state.begin(), state.end()));
}

TranslatorGenerator load_translator(const std::filesystem::path& path) {
    auto ck = nn::load_checkpoint(path);
    if (ck.meta.value("kind", "") != "translator") {
        throw IoError("load_translator: " + path.string() + " is not a translator checkpoint");
    }
    TranslatorGenerator g(ck.meta.at("pix2pix").get<Pix2PixConfig>(), ck.meta.value("seed", std::uint64_t{0}));
    nn::restore_tensors(ck.tensors, g.state());
    return g;
}

}  // namespace gsyn
