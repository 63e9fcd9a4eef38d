#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/grid.hpp"

namespace gsyn {

// ---------------------------------------------------------------------------------------------
// MetaImage (.mhd + .raw/.zraw)

enum class MetaElementType { int8, uint8, int16, uint16, float32 };

struct MetaImage {
    Grid3<float> voxels;  // (z, y, x)
    Spacing3 spacing_mm;
    MetaElementType element_type = MetaElementType::float32;
};

/// Reads a little-endian MetaImage. Uncompressed and zlib-compressed payloads are supported,
/// as is ElementDataFile = LOCAL. Throws IoError on any inconsistency.
MetaImage read_metaimage(const std::filesystem::path& header);

/// Writes `<stem>.mhd` plus `<stem>.raw` (or `.zraw` when compressed).
void write_metaimage(const std::filesystem::path& header, const Grid3<float>& voxels, const Spacing3& spacing,
                     MetaElementType type, bool compressed = false);

// ---------------------------------------------------------------------------------------------
// PROMISE12 cases

struct LoadedCase {
    Volume volume;
    std::optional<MaskVolume> mask;
    std::vector<std::string> warnings;
};

/// Loads `<root>/<case_id>.mhd` and, if present, `<root>/<case_id>_segmentation.mhd`.
/// `case_id` may be given as "Case07" or "07".
LoadedCase load_promise12_case(const std::filesystem::path& root, const std::string& case_id);

/// Sorted case ids ("CaseNN") having an image header under `root`.
std::vector<std::string> list_promise12_cases(const std::filesystem::path& root);

// ---------------------------------------------------------------------------------------------
// Synthetic phantoms

struct PhantomOptions {
    int rows = 96;
    int cols = 96;
    Spacing3 spacing_mm{3.6, 0.625, 0.625};
};

/// Deterministic prostate-like phantom: one filled ellipse per interior slice whose axes vary
/// smoothly along the stack, empty first and last slices, brighter gland over a textured,
/// noisy background.
std::pair<Volume, MaskVolume> generate_phantom_case(std::uint64_t seed, int n_slices,
                                                    const PhantomOptions& opts = {});

// ---------------------------------------------------------------------------------------------
// Patient split

struct SplitManifest {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{0.6, 0.2, 0.2};

    bool operator==(const SplitManifest&) const = default;
};

void to_json(nlohmann::json& j, const SplitManifest& m);
void from_json(const nlohmann::json& j, SplitManifest& m);

/// Largest-remainder sizes for `n` items under `ratios`; ties go to the earlier split.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

/// Seeded shuffle then partition. Throws std::invalid_argument on duplicate ids, empty input,
/// negative ratios, or ratios not summing to 1 within 1e-9.
SplitManifest split_patients(const std::vector<std::string>& patient_ids, const std::array<double, 3>& ratios,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------------------------
// Slicing

/// One sample per axial slice; drops empty-mask slices unless `keep_empty`.
std::vector<SliceSample> extract_slices(const Volume& volume, const MaskVolume& mask, bool keep_empty);

/// Stacks sample masks back into a volume ordered by slice_index. Indices must be unique.
Grid3<std::uint8_t> stack_masks(const std::vector<SliceSample>& samples);
Grid3<float> stack_images(const std::vector<SliceSample>& samples);

}  // namespace gsyn
