#include "glandsynth/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "glandsynth/dataio.hpp"
#include "glandsynth/errors.hpp"
#include "glandsynth/seeds.hpp"

namespace fs = std::filesystem;

namespace gsyn {

namespace {

constexpr std::array<std::string_view, 8> kLabels{"Original", "Vertical flip", "Horizontal flip", "Rotation",
                                                  "Shift",    "Zoom",          "All",             "Synthetic data"};

std::string hash_hex(const nlohmann::json& j) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v + 0.0);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

std::string curation_mode_name(CurationMode m) { return m == CurationMode::automatic ? "auto" : "reviewed"; }

CurationMode parse_curation_mode(const std::string& s) {
    if (s == "auto") return CurationMode::automatic;
    if (s == "reviewed") return CurationMode::reviewed;
    throw std::invalid_argument("unknown curation mode: " + s);
}

bool is_standard_row(Row r) { return r != Row::original && r != Row::synthetic; }

SliceSample pair_to_sample(const SyntheticPair& p, const Spacing2& spacing) {
    SliceSample s;
    s.image = p.image;
    s.mask = p.mask;
    s.patient_id = p.id;
    s.slice_index = 0;
    s.spacing_mm = spacing;
    return s;
}

void notify(const ProgressFn& progress, const std::string& message) {
    if (progress) progress(message);
}

}  // namespace

void to_json(nlohmann::json& j, const AugmentRanges& a) {
    j = nlohmann::json{{"rotation_deg", a.rotation_deg},
                       {"shift_frac", a.shift_frac},
                       {"zoom_lo", a.zoom_lo},
                       {"zoom_hi", a.zoom_hi}};
}

void from_json(const nlohmann::json& j, AugmentRanges& a) {
    j.at("rotation_deg").get_to(a.rotation_deg);
    j.at("shift_frac").get_to(a.shift_frac);
    j.at("zoom_lo").get_to(a.zoom_lo);
    j.at("zoom_hi").get_to(a.zoom_hi);
}

void to_json(nlohmann::json& j, const DatasetConfig& d) {
    j = nlohmann::json{{"kind", d.kind == DatasetConfig::Kind::phantom ? "phantom" : "promise12"},
                       {"path", d.path},
                       {"n_patients", d.n_patients},
                       {"n_slices", d.n_slices},
                       {"seed", d.seed},
                       {"phantom_rows", d.phantom_rows},
                       {"phantom_cols", d.phantom_cols}};
}

void from_json(const nlohmann::json& j, DatasetConfig& d) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "phantom") {
        d.kind = DatasetConfig::Kind::phantom;
    } else if (kind == "promise12") {
        d.kind = DatasetConfig::Kind::promise12;
    } else {
        throw std::invalid_argument("unknown dataset kind: " + kind);
    }
    j.at("path").get_to(d.path);
    j.at("n_patients").get_to(d.n_patients);
    j.at("n_slices").get_to(d.n_slices);
    j.at("seed").get_to(d.seed);
    j.at("phantom_rows").get_to(d.phantom_rows);
    j.at("phantom_cols").get_to(d.phantom_cols);
}

void to_json(nlohmann::json& j, const SyntheticConfig& s) {
    j = nlohmann::json{{"multiplier", s.multiplier},
                       {"count", s.count},
                       {"pool_size", s.pool_size},
                       {"max_candidate_rounds", s.max_candidate_rounds},
                       {"mask_threshold", s.mask_threshold},
                       {"pairs_manifest", s.pairs_manifest},
                       {"maskgen_checkpoint", s.maskgen_checkpoint},
                       {"translator_checkpoint", s.translator_checkpoint},
                       {"curation", curation_mode_name(s.curation)},
                       {"curation_ledger", s.curation_ledger},
                       {"maskgan", s.maskgan},
                       {"pix2pix", s.pix2pix}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& s) {
    j.at("multiplier").get_to(s.multiplier);
    j.at("count").get_to(s.count);
    j.at("pool_size").get_to(s.pool_size);
    j.at("max_candidate_rounds").get_to(s.max_candidate_rounds);
    j.at("mask_threshold").get_to(s.mask_threshold);
    j.at("pairs_manifest").get_to(s.pairs_manifest);
    j.at("maskgen_checkpoint").get_to(s.maskgen_checkpoint);
    j.at("translator_checkpoint").get_to(s.translator_checkpoint);
    s.curation = parse_curation_mode(j.at("curation").get<std::string>());
    j.at("curation_ledger").get_to(s.curation_ledger);
    j.at("maskgan").get_to(s.maskgan);
    j.at("pix2pix").get_to(s.pix2pix);
}

std::string to_string(Scale s) { return s == Scale::desk ? "desk" : "full"; }

Scale parse_scale(const std::string& s) {
    if (s == "desk") return Scale::desk;
    if (s == "full") return Scale::full;
    throw std::invalid_argument("unknown scale: " + s);
}

std::string_view row_label(Row r) { return kLabels[static_cast<std::size_t>(r)]; }

Row parse_row_label(std::string_view label) {
    for (std::size_t i = 0; i < kLabels.size(); ++i) {
        if (kLabels[i] == label) return kTableRows[i];
    }
    throw std::invalid_argument("unknown row label: " + std::string(label));
}

AugmentSpec row_augmentation(Row r, const AugmentRanges& ranges) {
    AugmentSpec spec;
    spec.rotation_deg = ranges.rotation_deg;
    spec.shift_frac = ranges.shift_frac;
    spec.zoom_lo = ranges.zoom_lo;
    spec.zoom_hi = ranges.zoom_hi;
    switch (r) {
        case Row::vertical_flip: spec.enable(Transform::vflip); break;
        case Row::horizontal_flip: spec.enable(Transform::hflip); break;
        case Row::rotation: spec.enable(Transform::rotation); break;
        case Row::shift: spec.enable(Transform::shift); break;
        case Row::zoom: spec.enable(Transform::zoom); break;
        case Row::all:
            spec.enable(Transform::rotation)
                .enable(Transform::shift)
                .enable(Transform::hflip)
                .enable(Transform::vflip)
                .enable(Transform::zoom);
            break;
        case Row::original:
        case Row::synthetic: break;
    }
    spec.validate();
    return spec;
}

void DatasetConfig::validate() const {
    if (kind == Kind::promise12 && path.empty()) throw std::invalid_argument("dataset: promise12 needs a path");
    if (kind == Kind::phantom) {
        if (n_patients < 3) throw std::invalid_argument("dataset: phantom needs at least 3 patients");
        if (n_slices < 1) throw std::invalid_argument("dataset: n_slices must be positive");
        if (phantom_rows < 8 || phantom_cols < 8) throw std::invalid_argument("dataset: phantom too small");
    }
}

void SyntheticConfig::validate() const {
    if (count < 0 && !(multiplier >= 0.0 && std::isfinite(multiplier))) {
        throw std::invalid_argument("synthetic: multiplier must be finite and non-negative");
    }
    if (pool_size < 0) throw std::invalid_argument("synthetic: pool_size must be non-negative");
    if (max_candidate_rounds < 1) throw std::invalid_argument("synthetic: max_candidate_rounds must be positive");
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) {
        throw std::invalid_argument("synthetic: mask_threshold must lie in (0,1)");
    }
    if (curation == CurationMode::reviewed && curation_ledger.empty() && pairs_manifest.empty()) {
        throw std::invalid_argument("synthetic: reviewed curation needs a curation ledger");
    }
    maskgan.validate();
    pix2pix.validate();
}

long SyntheticConfig::synthetic_count(std::size_t n_base) const {
    if (count >= 0) return count;
    return std::lround(multiplier * static_cast<double>(n_base));
}

bool ExperimentConfig::uses_synthetic() const {
    return row == Row::synthetic || (combine_with_synthetic && is_standard_row(row));
}

void ExperimentConfig::validate() const {
    dataset.validate();
    preprocess.validate();
    unet.validate();
    train.validate();
    double sum = 0.0;
    for (double r : split_ratios) {
        if (!(r >= 0.0)) throw std::invalid_argument("split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
    if (split_ratios[0] <= 0.0 || split_ratios[1] <= 0.0 || split_ratios[2] <= 0.0) {
        throw std::invalid_argument("train, validation and test ratios must all be positive");
    }
    if (unet.input_rows != preprocess.target_rows || unet.input_cols != preprocess.target_cols) {
        throw std::invalid_argument("U-Net input size differs from the preprocessing target");
    }
    if (all_policy != "composed") throw std::invalid_argument("all_policy must be \"composed\"");
    (void)row_augmentation(row, augment);
    if (uses_synthetic() != synthetic.has_value()) {
        throw std::invalid_argument(synthetic ? "synthetic settings given for a row without synthetic data"
                                              : "row needs synthetic settings");
    }
    if (synthetic) {
        synthetic->validate();
        if (synthetic->pairs_manifest.empty()) {
            if (synthetic->maskgan.resolution != preprocess.target_rows ||
                synthetic->pix2pix.resolution != preprocess.target_rows ||
                preprocess.target_rows != preprocess.target_cols) {
                throw std::invalid_argument("generator resolutions must equal the square working resolution");
            }
        }
    }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"scale", to_string(c.scale)},
                       {"root_seed", c.root_seed},
                       {"dataset", c.dataset},
                       {"preprocess", c.preprocess},
                       {"split_ratios", c.split_ratios},
                       {"keep_empty_slices", c.keep_empty_slices},
                       {"row", std::string(row_label(c.row))},
                       {"combine_with_synthetic", c.combine_with_synthetic},
                       {"augment", c.augment},
                       {"all_policy", c.all_policy},
                       {"unet", c.unet},
                       {"train", c.train},
                       {"eval", c.eval}};
    j["synthetic"] = c.synthetic ? nlohmann::json(*c.synthetic) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    if (!j.is_object()) throw std::invalid_argument("experiment config must be a JSON object");
    const Scale scale = parse_scale(j.value("scale", std::string("desk")));
    nlohmann::json merged = preset(scale);
    if (j.contains("synthetic") && j.at("synthetic").is_object()) merged["synthetic"] = preset_synthetic(scale);
    merge_known_fields(merged, j, "experiment config");

    ExperimentConfig out;
    out.scale = scale;
    merged.at("root_seed").get_to(out.root_seed);
    merged.at("dataset").get_to(out.dataset);
    merged.at("preprocess").get_to(out.preprocess);
    merged.at("split_ratios").get_to(out.split_ratios);
    merged.at("keep_empty_slices").get_to(out.keep_empty_slices);
    out.row = parse_row_label(merged.at("row").get<std::string>());
    merged.at("combine_with_synthetic").get_to(out.combine_with_synthetic);
    merged.at("augment").get_to(out.augment);
    merged.at("all_policy").get_to(out.all_policy);
    merged.at("unet").get_to(out.unet);
    merged.at("train").get_to(out.train);
    merged.at("eval").get_to(out.eval);
    if (!merged.at("synthetic").is_null()) out.synthetic = merged.at("synthetic").get<SyntheticConfig>();
    c = std::move(out);
}

void merge_known_fields(nlohmann::json& target, const nlohmann::json& patch, const std::string& where) {
    if (!patch.is_object()) throw std::invalid_argument(where + " must be a JSON object");
    for (const auto& [key, value] : patch.items()) {
        if (!target.contains(key)) throw std::invalid_argument("unknown field in " + where + ": " + key);
        auto& slot = target[key];
        if (value.is_object() && slot.is_object()) {
            merge_known_fields(slot, value, where + "." + key);
        } else {
            slot = value;
        }
    }
}

ExperimentConfig preset(Scale s) {
    ExperimentConfig c;
    c.scale = s;
    if (s == Scale::desk) {
        c.dataset.kind = DatasetConfig::Kind::phantom;
        c.dataset.n_patients = 12;
        c.dataset.n_slices = 16;
        c.preprocess.target_rows = 64;
        c.preprocess.target_cols = 64;
        c.unet.input_rows = 64;
        c.unet.input_cols = 64;
        c.unet.base_channels = 8;
        c.train.epochs = 15;
        c.train.batch_size = 8;
    } else {
        c.dataset.kind = DatasetConfig::Kind::promise12;
        c.dataset.path = "data/promise12";
    }
    return c;
}

SyntheticConfig preset_synthetic(Scale s) {
    SyntheticConfig syn;
    if (s == Scale::desk) {
        syn.count = 64;
        syn.pool_size = 64;
        syn.maskgan.resolution = 64;
        syn.maskgan.top_channels = 64;
        syn.maskgan.iterations = 150;
        syn.maskgan.lr = 2e-3;
        syn.maskgan.generator_steps = 2;
        syn.maskgan.ema_decay = 0.97;
        syn.pix2pix.resolution = 64;
        syn.pix2pix.base_channels = 8;
        syn.pix2pix.max_channels = 64;
        syn.pix2pix.iterations = 300;
    } else {
        syn.multiplier = 8.0;
    }
    return syn;
}

std::string config_hash(const ExperimentConfig& c) { return hash_hex(nlohmann::json(c)); }

ExperimentConfig row_config(const ExperimentConfig& base, Row row, bool combine_with_synthetic,
                            const SyntheticConfig& synthetic) {
    ExperimentConfig c = base;
    c.row = row;
    c.combine_with_synthetic = combine_with_synthetic && is_standard_row(row);
    c.synthetic.reset();
    if (c.uses_synthetic()) c.synthetic = synthetic;
    return c;
}

// ---------------------------------------------------------------------------------------------
// Data preparation

std::vector<std::string> PreparedDataset::patient_ids() const {
    std::vector<std::string> ids;
    ids.reserve(patients.size());
    for (const auto& p : patients) ids.push_back(p.id);
    return ids;
}

const PreparedPatient& PreparedDataset::patient(const std::string& id) const {
    for (const auto& p : patients) {
        if (p.id == id) return p;
    }
    throw std::out_of_range("unknown patient: " + id);
}

PreparedDataset prepare_dataset(const DatasetConfig& dataset, const PreprocessConfig& preprocess) {
    dataset.validate();
    preprocess.validate();
    PreparedDataset out;
    auto add = [&](const Volume& volume, const MaskVolume& mask) {
        PreparedPatient p;
        p.id = volume.patient_id;
        p.slices = preprocess_case(volume, &mask, preprocess);
        const Spacing2 s2 = p.slices.front().spacing_mm;
        p.spacing_mm = Spacing3{volume.spacing_mm.slice, s2.row, s2.col};
        out.patients.push_back(std::move(p));
    };
    if (dataset.kind == DatasetConfig::Kind::phantom) {
        PhantomOptions opts;
        opts.rows = dataset.phantom_rows;
        opts.cols = dataset.phantom_cols;
        for (int i = 0; i < dataset.n_patients; ++i) {
            const auto [volume, mask] =
                generate_phantom_case(dataset.seed + static_cast<std::uint64_t>(i), dataset.n_slices, opts);
            add(volume, mask);
        }
    } else {
        if (!fs::is_directory(dataset.path)) throw IoError("dataset not found: " + dataset.path);
        for (const auto& id : list_promise12_cases(dataset.path)) {
            LoadedCase lc = load_promise12_case(dataset.path, id);
            for (auto& w : lc.warnings) out.warnings.push_back(std::move(w));
            if (!lc.mask) {
                out.warnings.push_back(id + ": no segmentation, skipped");
                continue;
            }
            add(lc.volume, *lc.mask);
        }
        if (out.patients.empty()) throw IoError("dataset has no annotated cases: " + dataset.path);
    }
    return out;
}

std::string PreprocessCache::key(const DatasetConfig& dataset, const PreprocessConfig& preprocess) {
    return nlohmann::json(dataset).dump() + "|" + hash_hex(nlohmann::json(preprocess));
}

std::shared_ptr<const PreparedDataset> PreprocessCache::get(const DatasetConfig& dataset,
                                                            const PreprocessConfig& preprocess) {
    const std::string k = key(dataset, preprocess);
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(k); it != entries_.end()) {
        ++hits_;
        return it->second;
    }
    ++misses_;
    auto data = std::make_shared<const PreparedDataset>(prepare_dataset(dataset, preprocess));
    entries_.emplace(k, data);
    return data;
}

std::size_t PreprocessCache::hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
}

std::size_t PreprocessCache::misses() const {
    std::lock_guard lock(mutex_);
    return misses_;
}

SplitManifest split_for(const ExperimentConfig& c, const PreparedDataset& data) {
    return split_patients(data.patient_ids(), c.split_ratios, derive_seed(c.root_seed, "split"));
}

std::vector<SliceSample> gather_slices(const PreparedDataset& data, const std::vector<std::string>& patients,
                                       bool keep_empty) {
    std::vector<SliceSample> out;
    for (const auto& id : patients) {
        for (const auto& s : data.patient(id).slices) {
            if (keep_empty || count_foreground(s.mask) > 0) out.push_back(s);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Synthetic pool

SyntheticPool build_synthetic_pool(const ExperimentConfig& c, const std::vector<SliceSample>& train,
                                   std::size_t pool_size, const ProgressFn& progress) {
    if (!c.synthetic) throw std::invalid_argument("build_synthetic_pool: no synthetic settings");
    const SyntheticConfig& syn = *c.synthetic;
    SyntheticPool pool;
    if (pool_size == 0) return pool;

    if (!syn.pairs_manifest.empty()) {
        if (!fs::exists(syn.pairs_manifest)) throw IoError("pairs manifest not found: " + syn.pairs_manifest);
        pool.pairs = load_pairs(syn.pairs_manifest);
        if (pool.pairs.size() > pool_size) pool.pairs.resize(pool_size);
        pool.accepted = pool.pairs.size();
        if (pool.pairs.empty()) throw TrainingError("pairs manifest lists no pairs: " + syn.pairs_manifest);
        return pool;
    }
    for (const auto* path : {&syn.maskgen_checkpoint, &syn.translator_checkpoint, &syn.curation_ledger}) {
        if (!path->empty() && !fs::exists(*path)) throw IoError("missing file: " + *path);
    }

    std::vector<SliceSample> gland;
    std::vector<Mask> real_masks;
    for (const auto& s : train) {
        if (count_foreground(s.mask) == 0) continue;
        gland.push_back(s);
        real_masks.push_back(s.mask);
    }
    if (gland.empty()) throw TrainingError("training split holds no gland slices");

    std::string translator_id;
    std::optional<TranslatorGenerator> translator;
    if (!syn.translator_checkpoint.empty()) {
        translator.emplace(load_translator(syn.translator_checkpoint));
        translator_id = fs::path(syn.translator_checkpoint).filename().string();
    } else {
        notify(progress, "training translator on " + std::to_string(gland.size()) + " pairs");
        auto trained = train_translator(gland, syn.pix2pix, derive_seed(c.root_seed, "pix2pix"));
        translator.emplace(std::move(trained.generator));
        translator_id = "pix2pix-" + hash_hex(nlohmann::json(syn.pix2pix)).substr(0, 8);
    }
    if (translator->config().resolution != c.preprocess.target_rows) {
        throw std::invalid_argument("translator resolution differs from the working resolution");
    }

    std::unique_ptr<CurationStore> store;
    std::string run_id;
    if (syn.curation == CurationMode::reviewed) {
        CurationOptions opts;
        opts.auto_verdicts = false;
        store = std::make_unique<CurationStore>(fs::path(syn.curation_ledger), opts);
        run_id = fs::path(syn.curation_ledger).stem().string();
        pool.candidates = store->list().size();
    } else {
        CurationOptions opts;
        opts.bounds = fit_area_bounds(real_masks);
        store = std::make_unique<CurationStore>(opts);
        std::optional<MaskGenerator> generator;
        if (!syn.maskgen_checkpoint.empty()) {
            generator.emplace(load_mask_generator(syn.maskgen_checkpoint));
            run_id = fs::path(syn.maskgen_checkpoint).stem().string();
        } else {
            notify(progress, "training mask GAN on " + std::to_string(real_masks.size()) + " masks");
            auto gan = train_mask_gan(real_masks, syn.maskgan, derive_seed(c.root_seed, "maskgan"));
            generator.emplace(std::move(gan.generator));
            run_id = "maskgan-" + hash_hex(nlohmann::json(syn.maskgan)).substr(0, 8);
        }
        if (generator->config().resolution != c.preprocess.target_rows) {
            throw std::invalid_argument("mask generator resolution differs from the working resolution");
        }
        const std::uint64_t sampling = derive_seed(c.root_seed, "gan-sampling");
        for (int round = 0; round < syn.max_candidate_rounds && store->stats().accepted < pool_size; ++round) {
            const auto masks = generate_masks(*generator, static_cast<int>(pool_size),
                                              derive_seed(sampling, static_cast<std::uint64_t>(round)),
                                              syn.mask_threshold);
            store->ingest_all(masks, "cand", static_cast<std::size_t>(round) * pool_size);
            pool.candidates += masks.size();
        }
    }

    std::vector<std::string> ids;
    for (const auto& a : store->export_accepted()) {
        if (ids.size() == pool_size) break;
        ids.push_back(a.id);
    }
    pool.accepted = store->stats().accepted;
    notify(progress, "curation accepted " + std::to_string(pool.accepted) + " of " +
                         std::to_string(pool.candidates) + " candidates");
    if (ids.empty()) throw TrainingError("no generated mask passed curation");
    pool.pairs = synthesize_pairs(*translator, *store, ids, run_id, translator_id);
    return pool;
}

std::vector<SliceSample> assemble_training_set(const std::vector<SliceSample>& base, const SyntheticPool& pool,
                                               std::size_t n_synthetic) {
    if (base.empty()) throw std::invalid_argument("assemble_training_set: no base samples");
    if (n_synthetic > 0 && pool.pairs.empty()) {
        throw std::invalid_argument("assemble_training_set: synthetic samples requested from an empty pool");
    }
    std::vector<SliceSample> out = base;
    out.reserve(base.size() + n_synthetic);
    const Spacing2 spacing = base.front().spacing_mm;
    for (std::size_t i = 0; i < n_synthetic; ++i) {
        const auto& pair = pool.pairs[i % pool.pairs.size()];
        if (pair.mask.rows != base.front().mask.rows || pair.mask.cols != base.front().mask.cols) {
            throw std::invalid_argument("assemble_training_set: synthetic pair size differs from the base slices");
        }
        out.push_back(pair_to_sample(pair, spacing));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Runs

void to_json(nlohmann::json& j, const ResultRow& r) {
    j = nlohmann::json{{"label", r.label},         {"metrics", r.metrics},     {"n_base", r.n_base},
                       {"n_synthetic", r.n_synthetic}, {"config_hash", r.config_hash}, {"best_epoch", r.best_epoch}};
}

TrainedRow train_row(const ExperimentConfig& c, const RunContext& ctx) {
    c.validate();
    PreprocessCache local_cache;
    PreprocessCache& cache = ctx.cache != nullptr ? *ctx.cache : local_cache;
    auto data = cache.get(c.dataset, c.preprocess);
    SplitManifest split = split_for(c, *data);
    if (split.train.empty() || split.val.empty() || split.test.empty()) {
        throw std::invalid_argument("train_row: every split needs at least one patient");
    }
    const auto train = gather_slices(*data, split.train, c.keep_empty_slices);
    const auto val = gather_slices(*data, split.val, c.keep_empty_slices);
    const std::string label(row_label(c.row));

    std::size_t n_synthetic = 0;
    SyntheticPool local_pool;
    const SyntheticPool* pool = &local_pool;
    if (c.uses_synthetic()) {
        n_synthetic = static_cast<std::size_t>(c.synthetic->synthetic_count(train.size()));
        if (ctx.pool != nullptr) {
            pool = ctx.pool;
        } else if (n_synthetic > 0) {
            const std::size_t size = c.synthetic->pool_size > 0
                                         ? std::min<std::size_t>(static_cast<std::size_t>(c.synthetic->pool_size), n_synthetic)
                                         : n_synthetic;
            local_pool = build_synthetic_pool(c, train, size, ctx.progress);
        }
    }
    const auto assembled = assemble_training_set(train, *pool, n_synthetic);

    const AugmentSpec augmentation = row_augmentation(c.row, c.augment);
    UNet model(c.unet, derive_seed(c.root_seed, "model-init"));
    notify(ctx.progress, label + ": training on " + std::to_string(train.size()) + " + " +
                             std::to_string(n_synthetic) + " samples");
    TrainHistory history = train_segmenter(
        model, assembled, val, c.train, derive_seed(c.root_seed, "segmenter"),
        augmentation.enabled != 0 ? &augmentation : nullptr, [&](const EpochRecord& r) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s: epoch %d train %.4f val %.4f dsc %.4f lr %g", label.c_str(), r.epoch,
                          r.train_loss, r.val_loss, r.val_dsc, r.lr);
            notify(ctx.progress, buf);
        });
    return TrainedRow{std::move(model), std::move(history), std::move(split), std::move(data), train.size(),
                      n_synthetic};
}

MetricsReport evaluate_patients(UNet& model, const PreparedDataset& data, const std::vector<std::string>& patients,
                                const EvalOptions& options) {
    std::map<std::string, PatientMasks> predictions;
    std::map<std::string, PatientMasks> truths;
    for (const auto& id : patients) {
        const auto& patient = data.patient(id);
        const auto predicted = predict_masks(model, patient.slices);
        Grid3<std::uint8_t> pred(static_cast<int>(predicted.size()), predicted.front().rows, predicted.front().cols);
        for (std::size_t s = 0; s < predicted.size(); ++s) pred.set_slice(static_cast<int>(s), predicted[s]);
        predictions.emplace(id, PatientMasks{std::move(pred), patient.spacing_mm});
        truths.emplace(id, PatientMasks{stack_masks(patient.slices), patient.spacing_mm});
    }
    return evaluate(predictions, truths, options);
}

ResultRow run_experiment(const ExperimentConfig& c, const RunContext& ctx) {
    TrainedRow trained = train_row(c, ctx);
    ResultRow row;
    row.label = std::string(row_label(c.row));
    row.metrics = evaluate_patients(trained.model, *trained.data, trained.split.test, c.eval);
    row.n_base = trained.n_base;
    row.n_synthetic = trained.n_synthetic;
    row.config_hash = config_hash(c);
    row.best_epoch = trained.history.best_epoch;
    if (!ctx.results_ledger.empty()) append_ledger_line(ctx.results_ledger, nlohmann::json(row));
    return row;
}

void to_json(nlohmann::json& j, const ResultsTable& t) {
    j = nlohmann::json{{"rows", t.rows},
                       {"root_seed", t.root_seed},
                       {"scale", to_string(t.scale)},
                       {"config_hash", t.config_hash},
                       {"with_synthetic", t.with_synthetic}};
}

ResultsTable run_table(const ExperimentConfig& base, const SyntheticConfig& synthetic, bool combine_with_synthetic,
                       const RunContext& ctx) {
    std::vector<ExperimentConfig> configs;
    for (Row r : kTableRows) {
        configs.push_back(row_config(base, r, combine_with_synthetic, synthetic));
        configs.back().validate();
    }

    ResultsTable table;
    table.root_seed = base.root_seed;
    table.scale = base.scale;
    table.with_synthetic = combine_with_synthetic;
    table.config_hash = hash_hex(nlohmann::json{{"base", row_config(base, Row::original, false, synthetic)},
                                                {"synthetic", synthetic},
                                                {"combine_with_synthetic", combine_with_synthetic}});

    PreprocessCache local_cache;
    RunContext row_ctx = ctx;
    if (row_ctx.cache == nullptr) row_ctx.cache = &local_cache;

    // Every synthetic row shares one pool sized for the largest request.
    SyntheticPool shared_pool;
    if (row_ctx.pool == nullptr) {
        const auto syn_cfg = row_config(base, Row::synthetic, false, synthetic);
        const auto data = row_ctx.cache->get(base.dataset, base.preprocess);
        const auto train = gather_slices(*data, split_for(syn_cfg, *data).train, base.keep_empty_slices);
        const auto n = static_cast<std::size_t>(synthetic.synthetic_count(train.size()));
        const std::size_t size =
            synthetic.pool_size > 0 ? std::min<std::size_t>(static_cast<std::size_t>(synthetic.pool_size), n) : n;
        shared_pool = build_synthetic_pool(syn_cfg, train, size, row_ctx.progress);
        row_ctx.pool = &shared_pool;
    }
    for (const auto& c : configs) table.rows.push_back(run_experiment(c, row_ctx));
    return table;
}

std::vector<long> geometric_ladder(long top, int steps) {
    if (steps < 1) throw std::invalid_argument("geometric_ladder: steps must be positive");
    if (top < (1L << (steps - 1))) throw std::invalid_argument("geometric_ladder: top too small for the step count");
    std::vector<long> out{0};
    for (int k = steps - 1; k >= 0; --k) out.push_back(std::lround(static_cast<double>(top) / std::ldexp(1.0, k)));
    return out;
}

std::vector<long> default_sweep_counts(Scale s) {
    return s == Scale::desk ? geometric_ladder(64, 3) : geometric_ladder(10000, 5);
}

ExperimentConfig sweep_config(const ExperimentConfig& base, const SyntheticConfig& synthetic, long count) {
    if (count < 0) throw std::invalid_argument("sweep_config: negative count");
    if (count == 0) return row_config(base, Row::original, false, synthetic);
    SyntheticConfig syn = synthetic;
    syn.count = count;
    return row_config(base, Row::synthetic, false, syn);
}

SweepTable sweep_synthetic_size(const ExperimentConfig& base, const SyntheticConfig& synthetic,
                                const std::vector<long>& counts, const RunContext& ctx) {
    if (counts.empty()) throw std::invalid_argument("sweep_synthetic_size: no counts");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] < 0) throw std::invalid_argument("sweep_synthetic_size: negative count");
        if (i > 0 && counts[i] <= counts[i - 1]) throw std::invalid_argument("sweep_synthetic_size: counts must increase");
    }
    SweepTable table;
    table.root_seed = base.root_seed;
    table.config_hash = hash_hex(nlohmann::json{{"base", row_config(base, Row::original, false, synthetic)},
                                                {"synthetic", synthetic},
                                                {"counts", counts}});

    PreprocessCache local_cache;
    RunContext row_ctx = ctx;
    if (row_ctx.cache == nullptr) row_ctx.cache = &local_cache;

    // One pool for the whole ladder, so smaller counts use a prefix of the larger sets.
    SyntheticPool shared_pool;
    const long top = counts.back();
    if (row_ctx.pool == nullptr && top > 0) {
        const auto syn_cfg = sweep_config(base, synthetic, top);
        const auto data = row_ctx.cache->get(base.dataset, base.preprocess);
        const auto train = gather_slices(*data, split_for(syn_cfg, *data).train, base.keep_empty_slices);
        const std::size_t size = synthetic.pool_size > 0
                                     ? std::min<std::size_t>(static_cast<std::size_t>(synthetic.pool_size),
                                                             static_cast<std::size_t>(top))
                                     : static_cast<std::size_t>(top);
        shared_pool = build_synthetic_pool(syn_cfg, train, size, row_ctx.progress);
        row_ctx.pool = &shared_pool;
    }
    for (long count : counts) table.rows.push_back(SweepRow{count, run_experiment(sweep_config(base, synthetic, count), row_ctx)});
    return table;
}

std::vector<std::pair<long, double>> doubling_gains(const SweepTable& t) {
    std::vector<std::pair<long, double>> out;
    for (std::size_t i = 1; i < t.rows.size(); ++i) {
        const auto& prev = t.rows[i - 1];
        const auto& cur = t.rows[i];
        if (prev.count > 0 && cur.count == 2 * prev.count) {
            out.emplace_back(cur.count, cur.result.metrics.dsc_pct - prev.result.metrics.dsc_pct);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Rendering

std::vector<TableRow> table_rows(const ResultsTable& t) {
    std::vector<TableRow> out;
    for (const auto& r : t.rows) {
        out.push_back(TableRow{r.label, r.metrics.dsc_pct, r.metrics.msd_mm, r.metrics.hd_mm, r.metrics.vdsc_pct});
    }
    return out;
}

std::string emit_table(const std::vector<TableRow>& rows, TableFormat format) {
    if (rows.empty()) throw std::invalid_argument("emit_table: no rows");
    std::string out;
    if (format == TableFormat::csv) {
        out = "Transformation,DSC,MSD,HD,VDSC\n";
        for (const auto& r : rows) {
            out += r.label + "," + fmt2(r.dsc_pct) + "," + fmt2(r.msd_mm) + "," + fmt2(r.hd_mm) + "," +
                   fmt2(r.vdsc_pct) + "\n";
        }
    } else {
        out = "| Transformation | DSC | MSD | HD | VDSC |\n|---|---|---|---|---|\n";
        for (const auto& r : rows) {
            out += "| " + r.label + " | " + fmt2(r.dsc_pct) + " | " + fmt2(r.msd_mm) + " | " + fmt2(r.hd_mm) + " | " +
                   fmt2(r.vdsc_pct) + " |\n";
        }
    }
    return out;
}

std::vector<TableRow> parse_table_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "Transformation,DSC,MSD,HD,VDSC") {
        throw std::invalid_argument("parse_table_csv: bad header");
    }
    std::vector<TableRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
            fields.push_back(line.substr(start, pos - start));
        }
        fields.push_back(line.substr(start));
        if (fields.size() != 5) throw std::invalid_argument("parse_table_csv: expected 5 fields in: " + line);
        TableRow r;
        r.label = std::string(row_label(parse_row_label(fields[0])));
        double* targets[4] = {&r.dsc_pct, &r.msd_mm, &r.hd_mm, &r.vdsc_pct};
        for (int k = 0; k < 4; ++k) {
            const auto& f = fields[static_cast<std::size_t>(k) + 1];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), *targets[k]);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw std::invalid_argument("parse_table_csv: bad number: " + f);
            }
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string emit_sweep_csv(const SweepTable& t) {
    std::string out = "count,DSC,MSD,HD,VDSC\n";
    for (const auto& r : t.rows) {
        const auto& m = r.result.metrics;
        out += std::to_string(r.count) + "," + fmt2(m.dsc_pct) + "," + fmt2(m.msd_mm) + "," + fmt2(m.hd_mm) + "," +
               fmt2(m.vdsc_pct) + "\n";
    }
    return out;
}

void append_ledger_line(const fs::path& path, const nlohmann::json& record) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const std::string line = record.dump() + "\n";
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (fd < 0) throw IoError("cannot open results ledger: " + path.string());
    const auto written = ::write(fd, line.data(), line.size());
    ::close(fd);
    if (written != static_cast<ssize_t>(line.size())) throw IoError("short write to results ledger: " + path.string());
}

}  // namespace gsyn
