#include "glandsynth/augment.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "glandsynth/seeds.hpp"

namespace gsyn {

AugmentSpec AugmentSpec::all() {
    AugmentSpec s;
    s.enable(Transform::rotation)
        .enable(Transform::shift)
        .enable(Transform::hflip)
        .enable(Transform::vflip)
        .enable(Transform::zoom);
    return s;
}

void AugmentSpec::validate() const {
    if (!(rotation_deg >= 0.0)) throw std::invalid_argument("AugmentSpec: rotation range must be >= 0");
    if (!(shift_frac >= 0.0 && shift_frac < 1.0)) throw std::invalid_argument("AugmentSpec: shift_frac in [0,1)");
    if (!(zoom_lo > 0.0 && zoom_lo <= zoom_hi)) throw std::invalid_argument("AugmentSpec: bad zoom range");
}

void to_json(nlohmann::json& j, const AugmentSpec& s) {
    nlohmann::json names = nlohmann::json::array();
    for (auto [t, n] : {std::pair{Transform::rotation, "rotation"}, std::pair{Transform::shift, "shift"},
                        std::pair{Transform::hflip, "hflip"}, std::pair{Transform::vflip, "vflip"},
                        std::pair{Transform::zoom, "zoom"}}) {
        if (s.has(t)) names.push_back(n);
    }
    j = nlohmann::json{{"rotation_deg", s.rotation_deg},
                       {"shift_frac", s.shift_frac},
                       {"zoom_range", {s.zoom_lo, s.zoom_hi}},
                       {"enabled", names}};
}

void from_json(const nlohmann::json& j, AugmentSpec& s) {
    AugmentSpec d;
    d.rotation_deg = j.value("rotation_deg", d.rotation_deg);
    d.shift_frac = j.value("shift_frac", d.shift_frac);
    if (j.contains("zoom_range")) {
        d.zoom_lo = j.at("zoom_range").at(0).get<double>();
        d.zoom_hi = j.at("zoom_range").at(1).get<double>();
    }
    for (const auto& n : j.value("enabled", nlohmann::json::array())) {
        const auto name = n.get<std::string>();
        if (name == "rotation") d.enable(Transform::rotation);
        else if (name == "shift") d.enable(Transform::shift);
        else if (name == "hflip") d.enable(Transform::hflip);
        else if (name == "vflip") d.enable(Transform::vflip);
        else if (name == "zoom") d.enable(Transform::zoom);
        else throw std::invalid_argument("AugmentSpec: unknown transform '" + name + "'");
    }
    d.validate();
    s = d;
}

std::pair<double, double> map_point(const TransformParams& p, int rows, int cols, double row, double col) {
    const double cy = (rows - 1) / 2.0;
    const double cx = (cols - 1) / 2.0;
    double y = p.vflip ? (rows - 1) - row : row;
    double x = p.hflip ? (cols - 1) - col : col;
    const double th = p.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th);
    const double s = std::sin(th);
    const double ux = x - cx;
    const double uy = y - cy;
    x = cx + p.zoom * (c * ux + s * uy) + p.dx;
    y = cy + p.zoom * (-s * ux + c * uy) + p.dy;
    return {y, x};
}

namespace {

// Inverse of map_point: output coordinate -> source coordinate.
std::pair<double, double> source_point(const TransformParams& p, int rows, int cols, double row, double col) {
    const double cy = (rows - 1) / 2.0;
    const double cx = (cols - 1) / 2.0;
    const double th = p.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th);
    const double s = std::sin(th);
    const double vx = (col - p.dx - cx) / p.zoom;
    const double vy = (row - p.dy - cy) / p.zoom;
    double x = cx + c * vx - s * vy;
    double y = cy + s * vx + c * vy;
    if (p.hflip) x = (cols - 1) - x;
    if (p.vflip) y = (rows - 1) - y;
    return {y, x};
}

}  // namespace

SliceSample apply_transform(const SliceSample& sample, const TransformParams& params) {
    if (!sample.image.same_shape(sample.mask)) throw std::invalid_argument("apply_transform: image/mask shape mismatch");
    if (params.is_identity()) return sample;
    if (!(params.zoom > 0.0)) throw std::invalid_argument("apply_transform: zoom must be > 0");

    const int rows = sample.image.rows;
    const int cols = sample.image.cols;
    SliceSample out = sample;
    out.image = Image(rows, cols);
    out.mask = Mask(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const auto [sy, sx] = source_point(params, rows, cols, r, c);

            const long nr = std::lround(sy);
            const long nc = std::lround(sx);
            if (nr >= 0 && nr < rows && nc >= 0 && nc < cols) {
                out.mask.at(r, c) = sample.mask.at(static_cast<int>(nr), static_cast<int>(nc));
            }

            const double fy = std::floor(sy);
            const double fx = std::floor(sx);
            const int y0 = static_cast<int>(fy);
            const int x0 = static_cast<int>(fx);
            const double wy = sy - fy;
            const double wx = sx - fx;
            double acc = 0.0;
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) {
                    const int yy = y0 + a;
                    const int xx = x0 + b;
                    const double w = (a ? wy : 1.0 - wy) * (b ? wx : 1.0 - wx);
                    if (w == 0.0 || yy < 0 || yy >= rows || xx < 0 || xx >= cols) continue;
                    acc += w * sample.image.at(yy, xx);
                }
            }
            out.image.at(r, c) = static_cast<float>(acc);
        }
    }
    return out;
}

TransformParams sample_params(const AugmentSpec& spec, int rows, int cols, std::uint64_t seed) {
    spec.validate();
    TransformParams p;
    std::mt19937_64 rng(derive_seed(seed, "augment-params"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // Every draw is consumed regardless of the enabled set so streams stay aligned across specs.
    const double a = unit(rng);
    const double sx = unit(rng);
    const double sy = unit(rng);
    const double fh = unit(rng);
    const double fv = unit(rng);
    const double z = unit(rng);
    if (spec.has(Transform::rotation)) p.angle_deg = spec.rotation_deg * (2.0 * a - 1.0);
    if (spec.has(Transform::shift)) {
        p.dx = spec.shift_frac * cols * (2.0 * sx - 1.0);
        p.dy = spec.shift_frac * rows * (2.0 * sy - 1.0);
    }
    if (spec.has(Transform::hflip)) p.hflip = fh < 0.5;
    if (spec.has(Transform::vflip)) p.vflip = fv < 0.5;
    if (spec.has(Transform::zoom)) p.zoom = spec.zoom_lo + (spec.zoom_hi - spec.zoom_lo) * z;
    return p;
}

std::vector<SliceSample> build_augmented_epoch(const std::vector<SliceSample>& samples, const AugmentSpec& spec,
                                               std::uint64_t seed) {
    if (samples.empty()) throw std::invalid_argument("build_augmented_epoch: no samples");
    std::vector<SliceSample> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        out.push_back(apply_transform(s, sample_params(spec, s.image.rows, s.image.cols, derive_seed(seed, i))));
    }
    return out;
}

}  // namespace gsyn
