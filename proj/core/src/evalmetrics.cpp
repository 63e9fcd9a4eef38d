#include "glandsynth/evalmetrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace gsyn {

namespace {

template <typename Container>
double dice_counts(const Container& a, const Container& b) {
    std::size_t inter = 0;
    std::size_t na = 0;
    std::size_t nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0;
        const bool y = b[i] != 0;
        na += x;
        nb += y;
        inter += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// Exact squared Euclidean distance transform (lower envelope of parabolas, one axis at a time).
void edt_1d(const double* f, double* d, int n, double step, std::vector<int>& v, std::vector<double>& z) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.assign(static_cast<std::size_t>(n), 0);
    z.assign(static_cast<std::size_t>(n) + 1, 0.0);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        const double pq = q * step;
        while (k >= 0) {
            const double pv = v[k] * step;
            const double s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
            if (s <= z[k]) {
                --k;
                continue;
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = inf;
            break;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
        }
    }
    if (k < 0) {
        std::fill(d, d + n, inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        const double pq = q * step;
        while (z[j + 1] < pq) ++j;
        const double dv = pq - v[j] * step;
        d[q] = dv * dv + f[v[j]];
    }
}

std::vector<double> squared_edt(const Grid3<std::uint8_t>& seeds, const Spacing3& spacing) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int ns = seeds.slices;
    const int nr = seeds.rows;
    const int nc = seeds.cols;
    std::vector<double> g(seeds.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = seeds.vox[i] ? 0.0 : inf;
    const int longest = std::max({ns, nr, nc});
    std::vector<double> line(static_cast<std::size_t>(longest));
    std::vector<double> out(static_cast<std::size_t>(longest));
    std::vector<int> v;
    std::vector<double> z;
    auto pass = [&](int count, std::size_t stride, double step, auto base_of, int outer) {
        for (int o = 0; o < outer; ++o) {
            const std::size_t base = base_of(o);
            for (int i = 0; i < count; ++i) line[static_cast<std::size_t>(i)] = g[base + i * stride];
            edt_1d(line.data(), out.data(), count, step, v, z);
            for (int i = 0; i < count; ++i) g[base + i * stride] = out[static_cast<std::size_t>(i)];
        }
    };
    const std::size_t plane = static_cast<std::size_t>(nr) * nc;
    pass(nc, 1, spacing.col, [&](int o) { return static_cast<std::size_t>(o) * nc; }, ns * nr);
    pass(nr, static_cast<std::size_t>(nc), spacing.row,
         [&](int o) { return static_cast<std::size_t>(o / nc) * plane + static_cast<std::size_t>(o % nc); },
         ns * nc);
    if (ns > 1) pass(ns, plane, spacing.slice, [&](int o) { return static_cast<std::size_t>(o); }, nr * nc);
    return g;
}

Grid3<std::uint8_t> boundary_volume(const Grid3<std::uint8_t>& v, bool use_slice_axis) {
    Grid3<std::uint8_t> b(v.slices, v.rows, v.cols);
    for (int s = 0; s < v.slices; ++s) {
        for (int r = 0; r < v.rows; ++r) {
            for (int c = 0; c < v.cols; ++c) {
                if (!v.at(s, r, c)) continue;
                bool edge = r == 0 || c == 0 || r == v.rows - 1 || c == v.cols - 1 || !v.at(s, r - 1, c) ||
                            !v.at(s, r + 1, c) || !v.at(s, r, c - 1) || !v.at(s, r, c + 1);
                if (use_slice_axis) {
                    edge = edge || s == 0 || s == v.slices - 1 || !v.at(s - 1, r, c) || !v.at(s + 1, r, c);
                }
                b.at(s, r, c) = edge ? 1 : 0;
            }
        }
    }
    return b;
}

SurfaceStats stats_from_boundaries(const Grid3<std::uint8_t>& ba, const Grid3<std::uint8_t>& bb,
                                   const Spacing3& spacing) {
    const auto da = squared_edt(ba, spacing);
    const auto db = squared_edt(bb, spacing);
    double sum = 0.0;
    double hd = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ba.size(); ++i) {
        if (ba.vox[i]) {
            const double d = std::sqrt(db[i]);
            sum += d;
            hd = std::max(hd, d);
            ++n;
        }
        if (bb.vox[i]) {
            const double d = std::sqrt(da[i]);
            sum += d;
            hd = std::max(hd, d);
            ++n;
        }
    }
    return SurfaceStats{sum / static_cast<double>(n), hd};
}

Grid3<std::uint8_t> as_volume(const Mask& m) {
    Grid3<std::uint8_t> v(1, m.rows, m.cols);
    v.vox = m.px;
    return v;
}

}  // namespace

double dice(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("dice: shape mismatch");
    return dice_counts(a.px, b.px);
}

double volumetric_dice(const Grid3<std::uint8_t>& pred, const Grid3<std::uint8_t>& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("volumetric_dice: shape mismatch");
    return dice_counts(pred.vox, gt.vox);
}

std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            if (!m.at(r, c)) continue;
            const bool edge = r == 0 || c == 0 || r == m.rows - 1 || c == m.cols - 1;
            if (edge || !m.at(r - 1, c) || !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1)) {
                out.emplace_back(r, c);
            }
        }
    }
    return out;
}

SurfaceStats surface_distance_stats(const Mask& a, const Mask& b, const Spacing2& spacing) {
    if (!a.same_shape(b)) throw std::invalid_argument("surface_distance_stats: shape mismatch");
    if (count_foreground(a) == 0 || count_foreground(b) == 0) {
        throw std::domain_error("surface_distance_stats: empty mask");
    }
    const Spacing3 sp{1.0, spacing.row, spacing.col};
    return stats_from_boundaries(boundary_volume(as_volume(a), false), boundary_volume(as_volume(b), false), sp);
}

SurfaceStats surface_distance_stats(const Grid3<std::uint8_t>& a, const Grid3<std::uint8_t>& b,
                                    const Spacing3& spacing) {
    if (!a.same_shape(b)) throw std::invalid_argument("surface_distance_stats: shape mismatch");
    const auto has_fg = [](const Grid3<std::uint8_t>& v) {
        return std::any_of(v.vox.begin(), v.vox.end(), [](std::uint8_t x) { return x != 0; });
    };
    if (!has_fg(a) || !has_fg(b)) throw std::domain_error("surface_distance_stats: empty volume");
    return stats_from_boundaries(boundary_volume(a, true), boundary_volume(b, true), spacing);
}

void to_json(nlohmann::json& j, const EvalOptions& o) {
    j = nlohmann::json{{"include_empty_slices", o.include_empty_slices}, {"surface_3d", o.surface_3d}};
}

void from_json(const nlohmann::json& j, EvalOptions& o) {
    o.include_empty_slices = j.value("include_empty_slices", false);
    o.surface_3d = j.value("surface_3d", false);
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : r.cases) {
        cases.push_back({{"patient_id", c.patient_id},
                         {"slice_dsc_mean", c.slice_dsc_mean},
                         {"n_dsc_slices", c.n_dsc_slices},
                         {"vdsc", c.vdsc},
                         {"msd_mm", c.msd_mm},
                         {"hd_mm", c.hd_mm},
                         {"surface_defined", c.surface_defined},
                         {"n_undefined_surface_slices", c.n_undefined_surface_slices}});
    }
    j = nlohmann::json{{"DSC", r.dsc_pct},     {"MSD", r.msd_mm},
                       {"HD", r.hd_mm},        {"VDSC", r.vdsc_pct},
                       {"n_cases", r.n_cases}, {"n_surface_warnings", r.n_surface_warnings},
                       {"cases", cases}};
}

std::string metrics_csv_header() { return "DSC,MSD,HD,VDSC"; }

std::string metrics_csv_row(const MetricsReport& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.2f,%.2f", r.dsc_pct, r.msd_mm, r.hd_mm, r.vdsc_pct);
    return buf;
}

MetricsReport evaluate(const std::map<std::string, PatientMasks>& predictions,
                       const std::map<std::string, PatientMasks>& ground_truths, const EvalOptions& options) {
    if (predictions.size() != ground_truths.size()) throw std::invalid_argument("evaluate: patient sets differ");
    MetricsReport report;
    double dsc_sum = 0.0;
    long dsc_count = 0;
    double vdsc_sum = 0.0;
    double msd_sum = 0.0;
    double hd_sum = 0.0;
    int surface_cases = 0;

    for (const auto& [id, gt] : ground_truths) {
        const auto it = predictions.find(id);
        if (it == predictions.end()) throw std::invalid_argument("evaluate: no prediction for patient " + id);
        const auto& pred = it->second.voxels;
        if (!pred.same_shape(gt.voxels)) throw std::invalid_argument("evaluate: shape mismatch for patient " + id);

        CaseMetrics cm;
        cm.patient_id = id;
        cm.vdsc = volumetric_dice(pred, gt.voxels);

        double case_dsc = 0.0;
        double case_msd = 0.0;
        double case_hd = 0.0;
        int surface_slices = 0;
        for (int s = 0; s < gt.voxels.slices; ++s) {
            const Mask p = pred.slice(s);
            const Mask g = gt.voxels.slice(s);
            const bool pe = count_foreground(p) == 0;
            const bool ge = count_foreground(g) == 0;
            if (!(pe && ge) || options.include_empty_slices) {
                const double d = dice(p, g);
                case_dsc += d;
                ++cm.n_dsc_slices;
                dsc_sum += d;
                ++dsc_count;
            }
            if (options.surface_3d || (pe && ge)) continue;
            if (pe || ge) {
                ++cm.n_undefined_surface_slices;
                continue;
            }
            const auto st = surface_distance_stats(p, g, Spacing2{gt.spacing_mm.row, gt.spacing_mm.col});
            case_msd += st.msd_mm;
            case_hd += st.hd_mm;
            ++surface_slices;
        }
        cm.slice_dsc_mean = cm.n_dsc_slices > 0 ? case_dsc / cm.n_dsc_slices : 1.0;

        if (options.surface_3d) {
            try {
                const auto st = surface_distance_stats(pred, gt.voxels, gt.spacing_mm);
                cm.msd_mm = st.msd_mm;
                cm.hd_mm = st.hd_mm;
                cm.surface_defined = true;
            } catch (const std::domain_error&) {
                cm.surface_defined = false;
            }
        } else if (surface_slices > 0) {
            cm.msd_mm = case_msd / surface_slices;
            cm.hd_mm = case_hd / surface_slices;
            cm.surface_defined = true;
        }
        report.n_surface_warnings += cm.n_undefined_surface_slices + (cm.surface_defined ? 0 : 1);
        if (cm.surface_defined) {
            msd_sum += cm.msd_mm;
            hd_sum += cm.hd_mm;
            ++surface_cases;
        }
        vdsc_sum += cm.vdsc;
        report.cases.push_back(cm);
    }

    report.n_cases = static_cast<int>(report.cases.size());
    report.dsc_pct = dsc_count > 0 ? 100.0 * dsc_sum / static_cast<double>(dsc_count) : 100.0;
    report.vdsc_pct = report.n_cases > 0 ? 100.0 * vdsc_sum / report.n_cases : 0.0;
    // No measurable case leaves the distances undefined rather than falsely perfect.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    report.msd_mm = surface_cases > 0 ? msd_sum / surface_cases : nan;
    report.hd_mm = surface_cases > 0 ? hd_sum / surface_cases : nan;
    return report;
}

}  // namespace gsyn
