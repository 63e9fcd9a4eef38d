#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/grid.hpp"

namespace gsyn {

enum class Interp { linear, nearest };

struct PreprocessConfig {
    int target_rows = 256;
    int target_cols = 256;
    double clip_lo_pct = 1.0;
    double clip_hi_pct = 99.0;
    double clahe_clip_limit = 0.01;  // fraction of the tile pixel count
    int clahe_tile_rows = 8;
    int clahe_tile_cols = 8;
    bool renormalize_after_clip = true;

    /// Throws std::invalid_argument when out of range.
    void validate() const;
    bool operator==(const PreprocessConfig&) const = default;
};

void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);

/// Pixel-centre aligned resampling. Linear output stays within the input range; nearest only
/// reproduces input values.
template <typename T>
Grid2<T> resample_slice(const Grid2<T>& image, int rows, int cols, Interp mode);

extern template Grid2<float> resample_slice(const Grid2<float>&, int, int, Interp);
extern template Grid2<std::uint8_t> resample_slice(const Grid2<std::uint8_t>&, int, int, Interp);

/// Spacing after resampling `in_rows x in_cols` to `out_rows x out_cols`.
Spacing2 rescale_spacing(const Spacing2& s, int in_rows, int in_cols, int out_rows, int out_cols);

/// Affine map min -> 0, max -> 1; a constant image maps to zeros.
Image normalize01(const Image& image);

/// Linear-interpolated percentile over the sorted values (numpy's default rule).
double percentile(std::vector<float> values, double pct);

Image clip_percentiles(const Image& image, double lo_pct, double hi_pct);

constexpr int kClaheBins = 256;

/// Contrast-limited adaptive histogram equalisation on a [0,1] image.
Image clahe(const Image& image, const PreprocessConfig& config);

/// Full chain on one volume: resample -> normalize -> clip -> (renormalize) -> CLAHE.
/// Masks, when given, are only resampled (nearest).
std::vector<SliceSample> preprocess_case(const Volume& volume, const MaskVolume* mask, const PreprocessConfig& config);

/// Same chain for one slice image.
Image preprocess_image(const Image& image, const PreprocessConfig& config);

}  // namespace gsyn
