#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/augment.hpp"
#include "glandsynth/dataio.hpp"
#include "glandsynth/curation.hpp"
#include "glandsynth/evalmetrics.hpp"
#include "glandsynth/maskgen.hpp"
#include "glandsynth/preprocess.hpp"
#include "glandsynth/synthesis.hpp"
#include "glandsynth/unetseg.hpp"

namespace gsyn {

enum class Scale { desk, full };

std::string to_string(Scale s);
Scale parse_scale(const std::string& s);

/// The eight result rows, in table order.
enum class Row { original, vertical_flip, horizontal_flip, rotation, shift, zoom, all, synthetic };

inline constexpr std::array<Row, 8> kTableRows{Row::original, Row::vertical_flip, Row::horizontal_flip,
                                                Row::rotation, Row::shift,         Row::zoom,
                                                Row::all,      Row::synthetic};

std::string_view row_label(Row r);
/// Exact label match; throws std::invalid_argument otherwise.
Row parse_row_label(std::string_view label);

/// Parameter ranges of the standard transforms; which ones are active follows from the row.
struct AugmentRanges {
    double rotation_deg = 10.0;
    double shift_frac = 0.10;
    double zoom_lo = 1.0;
    double zoom_hi = 1.2;

    bool operator==(const AugmentRanges&) const = default;
};

void to_json(nlohmann::json& j, const AugmentRanges& a);
void from_json(const nlohmann::json& j, AugmentRanges& a);

/// Standard-transform policy of a row. "All" composes every transform on each sample.
AugmentSpec row_augmentation(Row r, const AugmentRanges& ranges);

struct DatasetConfig {
    enum class Kind { phantom, promise12 };
    Kind kind = Kind::phantom;
    std::string path;           // promise12 root
    int n_patients = 12;        // phantom only
    int n_slices = 16;
    std::uint64_t seed = 100;   // phantom patient i uses seed + i
    int phantom_rows = 96;
    int phantom_cols = 96;

    void validate() const;
    bool operator==(const DatasetConfig&) const = default;
};

void to_json(nlohmann::json& j, const DatasetConfig& d);
void from_json(const nlohmann::json& j, DatasetConfig& d);

enum class CurationMode { automatic, reviewed };

struct SyntheticConfig {
    double multiplier = 8.0;     // synthetic samples = round(multiplier * base slices)
    long count = -1;             // >= 0 overrides the multiplier
    int pool_size = 0;           // distinct pairs to synthesize; 0 means one per synthetic sample
    int max_candidate_rounds = 8;
    double mask_threshold = 0.5;
    std::string pairs_manifest;         // pre-synthesized pairs; skips generation entirely
    std::string maskgen_checkpoint;     // empty: train the mask GAN on the training split
    std::string translator_checkpoint;  // empty: train the translator on the training split
    CurationMode curation = CurationMode::automatic;
    std::string curation_ledger;        // reviewed mode: accepted masks come from this ledger
    MaskGanConfig maskgan;
    Pix2PixConfig pix2pix;

    void validate() const;
    [[nodiscard]] long synthetic_count(std::size_t n_base) const;
    bool operator==(const SyntheticConfig&) const = default;
};

void to_json(nlohmann::json& j, const SyntheticConfig& s);
void from_json(const nlohmann::json& j, SyntheticConfig& s);

struct ExperimentConfig {
    Scale scale = Scale::desk;
    std::uint64_t root_seed = 0;
    DatasetConfig dataset;
    PreprocessConfig preprocess;
    std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
    bool keep_empty_slices = true;  // training and validation slices without gland
    Row row = Row::original;
    bool combine_with_synthetic = false;  // standard rows additionally receive synthetic pairs
    AugmentRanges augment;
    std::string all_policy = "composed";
    std::optional<SyntheticConfig> synthetic;  // present iff the row involves synthetic data
    UNetConfig unet;
    SegTrainConfig train;
    EvalOptions eval;

    /// Throws std::invalid_argument on a broken invariant.
    void validate() const;
    [[nodiscard]] bool uses_synthetic() const;
    bool operator==(const ExperimentConfig&) const = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing fields take the defaults of the document's "scale" (desk when absent).
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Recursive overwrite of `target` by `patch`; throws std::invalid_argument naming the first
/// key that `target` does not already have.
void merge_known_fields(nlohmann::json& target, const nlohmann::json& patch, const std::string& where);

/// Defaults of a scale preset; the row is Original and the synthetic block is kept aside in
/// `preset_synthetic`.
ExperimentConfig preset(Scale s);
SyntheticConfig preset_synthetic(Scale s);

/// FNV-1a over the canonical JSON rendering, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

/// Configuration of one row derived from shared settings. The synthetic block is attached when
/// the row needs it (the Synthetic data row, or any standard row except Original when combining).
ExperimentConfig row_config(const ExperimentConfig& base, Row row, bool combine_with_synthetic,
                            const SyntheticConfig& synthetic);

// ---------------------------------------------------------------------------------------------
// Data preparation

struct PreparedPatient {
    std::string id;
    Spacing3 spacing_mm;              // after resampling
    std::vector<SliceSample> slices;  // every slice, in order
};

struct PreparedDataset {
    std::vector<PreparedPatient> patients;
    std::vector<std::string> warnings;

    [[nodiscard]] std::vector<std::string> patient_ids() const;
    [[nodiscard]] const PreparedPatient& patient(const std::string& id) const;
};

/// Loads and preprocesses a dataset. Throws IoError when a PROMISE12 root is missing.
PreparedDataset prepare_dataset(const DatasetConfig& dataset, const PreprocessConfig& preprocess);

/// Shared cache keyed by (dataset, preprocessing hash). Thread-safe.
class PreprocessCache {
public:
    std::shared_ptr<const PreparedDataset> get(const DatasetConfig& dataset, const PreprocessConfig& preprocess);
    [[nodiscard]] std::size_t hits() const;
    [[nodiscard]] std::size_t misses() const;

    static std::string key(const DatasetConfig& dataset, const PreprocessConfig& preprocess);

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const PreparedDataset>> entries_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

SplitManifest split_for(const ExperimentConfig& c, const PreparedDataset& data);

/// Slices of the listed patients; gland-free slices are dropped unless keep_empty.
std::vector<SliceSample> gather_slices(const PreparedDataset& data, const std::vector<std::string>& patients,
                                       bool keep_empty);

// ---------------------------------------------------------------------------------------------
// Synthetic pool and training-set assembly

struct SyntheticPool {
    std::vector<SyntheticPair> pairs;
    std::size_t candidates = 0;  // generated masks screened (0 when loaded from a manifest)
    std::size_t accepted = 0;
};

using ProgressFn = std::function<void(const std::string& message)>;

/// Mask GAN -> curation -> translator -> pairs, or the pairs of `pairs_manifest`. Throws
/// IoError for a referenced checkpoint, ledger or manifest that does not exist and
/// TrainingError when no generated mask survives curation.
SyntheticPool build_synthetic_pool(const ExperimentConfig& c, const std::vector<SliceSample>& train,
                                   std::size_t pool_size, const ProgressFn& progress = {});

/// Base samples followed by `n_synthetic` synthetic samples taken cyclically from the pool.
std::vector<SliceSample> assemble_training_set(const std::vector<SliceSample>& base, const SyntheticPool& pool,
                                               std::size_t n_synthetic);

// ---------------------------------------------------------------------------------------------
// Runs

struct ResultRow {
    std::string label;
    MetricsReport metrics;
    std::size_t n_base = 0;
    std::size_t n_synthetic = 0;
    std::string config_hash;
    int best_epoch = 0;
};

void to_json(nlohmann::json& j, const ResultRow& r);

struct RunContext {
    PreprocessCache* cache = nullptr;          // a private cache when null
    const SyntheticPool* pool = nullptr;       // built on demand when null
    ProgressFn progress;
    std::filesystem::path results_ledger;      // one NDJSON line appended per completed row
};

struct TrainedRow {
    UNet model;
    TrainHistory history;
    SplitManifest split;
    std::shared_ptr<const PreparedDataset> data;
    std::size_t n_base = 0;
    std::size_t n_synthetic = 0;
};

/// Preprocess -> split -> assemble the row's training set -> train the segmenter.
TrainedRow train_row(const ExperimentConfig& c, const RunContext& ctx = {});

/// Whole-volume predictions of the listed patients scored against their ground truth.
MetricsReport evaluate_patients(UNet& model, const PreparedDataset& data, const std::vector<std::string>& patients,
                                const EvalOptions& options);

/// train_row, then evaluation on the held-out test patients.
ResultRow run_experiment(const ExperimentConfig& c, const RunContext& ctx = {});

struct ResultsTable {
    std::vector<ResultRow> rows;
    std::uint64_t root_seed = 0;
    Scale scale = Scale::desk;
    std::string config_hash;  // of the shared settings
    bool with_synthetic = false;
};

void to_json(nlohmann::json& j, const ResultsTable& t);

/// All eight rows in table order; the synthetic pool is built once and shared.
ResultsTable run_table(const ExperimentConfig& base, const SyntheticConfig& synthetic, bool combine_with_synthetic,
                       const RunContext& ctx = {});

struct SweepRow {
    long count = 0;
    ResultRow result;
};

struct SweepTable {
    std::vector<SweepRow> rows;
    std::uint64_t root_seed = 0;
    std::string config_hash;
};

/// {0, top / 2^(steps-1), ..., top / 2, top}, rounded to integers.
std::vector<long> geometric_ladder(long top, int steps);
/// Ladder ending at the largest count of the scale (64 desk, 10000 full).
std::vector<long> default_sweep_counts(Scale s);

/// Count 0 is the Original configuration; every other count is the Synthetic data row with an
/// absolute synthetic count.
ExperimentConfig sweep_config(const ExperimentConfig& base, const SyntheticConfig& synthetic, long count);

SweepTable sweep_synthetic_size(const ExperimentConfig& base, const SyntheticConfig& synthetic,
                                const std::vector<long>& counts, const RunContext& ctx = {});

/// DSC change (percentage points) between consecutive rows whose count doubles. Reported only.
std::vector<std::pair<long, double>> doubling_gains(const SweepTable& t);

// ---------------------------------------------------------------------------------------------
// Rendering

struct TableRow {
    std::string label;
    double dsc_pct = 0.0;
    double msd_mm = 0.0;
    double hd_mm = 0.0;
    double vdsc_pct = 0.0;

    bool operator==(const TableRow&) const = default;
};

enum class TableFormat { csv, markdown };

std::vector<TableRow> table_rows(const ResultsTable& t);
/// Header "Transformation,DSC,MSD,HD,VDSC"; every value at 2 decimals. Throws
/// std::invalid_argument when `rows` is empty.
std::string emit_table(const std::vector<TableRow>& rows, TableFormat format);
/// Inverse of the CSV rendering; labels must belong to the fixed row set.
std::vector<TableRow> parse_table_csv(const std::string& csv);

/// Header "count,DSC,MSD,HD,VDSC".
std::string emit_sweep_csv(const SweepTable& t);

/// Appends one line with a single write so concurrent writers never interleave within a row.
void append_ledger_line(const std::filesystem::path& path, const nlohmann::json& record);

}  // namespace gsyn
