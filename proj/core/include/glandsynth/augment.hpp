#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/grid.hpp"

namespace gsyn {

enum class Transform : unsigned { rotation = 1u, shift = 2u, hflip = 4u, vflip = 8u, zoom = 16u };

struct AugmentSpec {
    double rotation_deg = 10.0;  // angles drawn from [-rotation_deg, +rotation_deg]
    double shift_frac = 0.10;    // of height / width
    double zoom_lo = 1.0;
    double zoom_hi = 1.2;
    unsigned enabled = 0;        // bitwise OR of Transform

    [[nodiscard]] bool has(Transform t) const { return (enabled & static_cast<unsigned>(t)) != 0; }
    AugmentSpec& enable(Transform t) {
        enabled |= static_cast<unsigned>(t);
        return *this;
    }
    void validate() const;
    bool operator==(const AugmentSpec&) const = default;

    static AugmentSpec none() { return {}; }
    static AugmentSpec all();
};

void to_json(nlohmann::json& j, const AugmentSpec& s);
void from_json(const nlohmann::json& j, AugmentSpec& s);

/// One concrete geometric transform. Shifts are in pixels (dx along columns, dy along rows);
/// positive angles rotate counter-clockwise as displayed (rows pointing down).
struct TransformParams {
    double angle_deg = 0.0;
    double dx = 0.0;
    double dy = 0.0;
    bool hflip = false;
    bool vflip = false;
    double zoom = 1.0;

    [[nodiscard]] bool is_identity() const {
        return angle_deg == 0.0 && dx == 0.0 && dy == 0.0 && !hflip && !vflip && zoom == 1.0;
    }
    bool operator==(const TransformParams&) const = default;
};

/// Forward map of a pixel coordinate (row, col) under `p` for an image of the given size.
/// Flip first, then rotation and zoom about the image centre, then shift.
std::pair<double, double> map_point(const TransformParams& p, int rows, int cols, double row, double col);

/// Same transform on image (bilinear) and mask (nearest); out-of-frame pixels are 0.
SliceSample apply_transform(const SliceSample& sample, const TransformParams& params);

TransformParams sample_params(const AugmentSpec& spec, int rows, int cols, std::uint64_t seed);

/// One freshly transformed variant per input (on-the-fly policy).
std::vector<SliceSample> build_augmented_epoch(const std::vector<SliceSample>& samples, const AugmentSpec& spec,
                                               std::uint64_t seed);

}  // namespace gsyn
