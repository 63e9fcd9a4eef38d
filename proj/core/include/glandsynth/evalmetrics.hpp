#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glandsynth/grid.hpp"

namespace gsyn {

/// 2|A and B| / (|A| + |B|); two empty masks score 1.
double dice(const Mask& a, const Mask& b);

/// 3-D Dice over all voxels of one patient; two empty volumes score 1.
double volumetric_dice(const Grid3<std::uint8_t>& pred, const Grid3<std::uint8_t>& gt);

struct SurfaceStats {
    double msd_mm = 0.0;  // mean of the pooled nearest-boundary distances in both directions
    double hd_mm = 0.0;   // max of the two directed Hausdorff distances
};

/// Boundary pixels: foreground with a 4-neighbour in the background or on the image edge.
std::vector<std::pair<int, int>> boundary_pixels(const Mask& m);

/// Exact Euclidean surface distances between two nonempty 2-D masks in millimetres.
/// Throws std::domain_error when either mask is empty.
SurfaceStats surface_distance_stats(const Mask& a, const Mask& b, const Spacing2& spacing);

/// 3-D variant with 6-neighbour boundaries.
SurfaceStats surface_distance_stats(const Grid3<std::uint8_t>& a, const Grid3<std::uint8_t>& b,
                                    const Spacing3& spacing);

struct EvalOptions {
    bool include_empty_slices = false;  // count empty/empty slices (DSC 1) in the slice mean
    bool surface_3d = false;            // 3-D surface distances instead of per-slice 2-D

    bool operator==(const EvalOptions&) const = default;
};

void to_json(nlohmann::json& j, const EvalOptions& o);
void from_json(const nlohmann::json& j, EvalOptions& o);

struct CaseMetrics {
    std::string patient_id;
    double slice_dsc_mean = 0.0;
    int n_dsc_slices = 0;
    double vdsc = 0.0;
    double msd_mm = 0.0;
    double hd_mm = 0.0;
    bool surface_defined = false;
    int n_undefined_surface_slices = 0;
};

/// Table-1 shaped summary; field order mirrors the table columns DSC, MSD, HD, VDSC.
struct MetricsReport {
    double dsc_pct = 0.0;
    double msd_mm = 0.0;
    double hd_mm = 0.0;
    double vdsc_pct = 0.0;
    int n_cases = 0;
    int n_surface_warnings = 0;  // cases or slices excluded from MSD/HD for an empty operand
    std::vector<CaseMetrics> cases;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

/// Header "DSC,MSD,HD,VDSC" and one row at 2-decimal precision.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);

struct PatientMasks {
    Grid3<std::uint8_t> voxels;
    Spacing3 spacing_mm;
};

/// Throws std::invalid_argument when the patient sets or per-patient shapes differ.
MetricsReport evaluate(const std::map<std::string, PatientMasks>& predictions,
                       const std::map<std::string, PatientMasks>& ground_truths, const EvalOptions& options = {});

}  // namespace gsyn
