#include "glandsynth/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gsyn {

void PreprocessConfig::validate() const {
    if (target_rows < 1 || target_cols < 1) throw std::invalid_argument("PreprocessConfig: target size must be >= 1");
    if (!(clip_lo_pct >= 0.0 && clip_lo_pct < clip_hi_pct && clip_hi_pct <= 100.0)) {
        throw std::invalid_argument("PreprocessConfig: need 0 <= clip_lo_pct < clip_hi_pct <= 100");
    }
    if (clahe_tile_rows < 1 || clahe_tile_cols < 1) throw std::invalid_argument("PreprocessConfig: tiles must be >= 1");
    if (!(clahe_clip_limit > 0.0 && clahe_clip_limit <= 1.0)) {
        throw std::invalid_argument("PreprocessConfig: clahe_clip_limit must lie in (0, 1]");
    }
}

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
    j = nlohmann::json{{"target_size", {c.target_rows, c.target_cols}},
                       {"clip_lo_pct", c.clip_lo_pct},
                       {"clip_hi_pct", c.clip_hi_pct},
                       {"clahe_clip_limit", c.clahe_clip_limit},
                       {"clahe_tiles", {c.clahe_tile_rows, c.clahe_tile_cols}},
                       {"renormalize_after_clip", c.renormalize_after_clip}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
    PreprocessConfig d;
    if (j.contains("target_size")) {
        d.target_rows = j.at("target_size").at(0).get<int>();
        d.target_cols = j.at("target_size").at(1).get<int>();
    }
    d.clip_lo_pct = j.value("clip_lo_pct", d.clip_lo_pct);
    d.clip_hi_pct = j.value("clip_hi_pct", d.clip_hi_pct);
    d.clahe_clip_limit = j.value("clahe_clip_limit", d.clahe_clip_limit);
    if (j.contains("clahe_tiles")) {
        d.clahe_tile_rows = j.at("clahe_tiles").at(0).get<int>();
        d.clahe_tile_cols = j.at("clahe_tiles").at(1).get<int>();
    }
    d.renormalize_after_clip = j.value("renormalize_after_clip", d.renormalize_after_clip);
    d.validate();
    c = d;
}

// ---------------------------------------------------------------------------------------------
// Resampling

namespace {

struct Tap {
    int i0, i1;
    double w;  // weight of i1
};

std::vector<Tap> linear_taps(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(o)] = Tap{i0, i1, src - i0};
    }
    return taps;
}

std::vector<int> nearest_taps(int in, int out) {
    std::vector<int> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        taps[static_cast<std::size_t>(o)] = std::min(in - 1, static_cast<int>(std::floor((o + 0.5) * scale)));
    }
    return taps;
}

}  // namespace

template <typename T>
Grid2<T> resample_slice(const Grid2<T>& image, int rows, int cols, Interp mode) {
    if (image.empty()) throw std::invalid_argument("resample_slice: empty input");
    if (rows < 1 || cols < 1) throw std::invalid_argument("resample_slice: target dims must be >= 1");
    Grid2<T> out(rows, cols);
    if (mode == Interp::nearest) {
        const auto ty = nearest_taps(image.rows, rows);
        const auto tx = nearest_taps(image.cols, cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) out.at(r, c) = image.at(ty[r], tx[c]);
        }
        return out;
    }
    const auto ty = linear_taps(image.rows, rows);
    const auto tx = linear_taps(image.cols, cols);
    double lo = image.px.front();
    double hi = lo;
    for (const auto v : image.px) {
        lo = std::min<double>(lo, v);
        hi = std::max<double>(hi, v);
    }
    for (int r = 0; r < rows; ++r) {
        const Tap& a = ty[static_cast<std::size_t>(r)];
        for (int c = 0; c < cols; ++c) {
            const Tap& b = tx[static_cast<std::size_t>(c)];
            const double top = (1.0 - b.w) * image.at(a.i0, b.i0) + b.w * image.at(a.i0, b.i1);
            const double bot = (1.0 - b.w) * image.at(a.i1, b.i0) + b.w * image.at(a.i1, b.i1);
            const double v = std::clamp((1.0 - a.w) * top + a.w * bot, lo, hi);
            if constexpr (std::is_integral_v<T>) {
                out.at(r, c) = static_cast<T>(std::lround(v));
            } else {
                out.at(r, c) = static_cast<T>(v);
            }
        }
    }
    return out;
}

template Grid2<float> resample_slice(const Grid2<float>&, int, int, Interp);
template Grid2<std::uint8_t> resample_slice(const Grid2<std::uint8_t>&, int, int, Interp);

Spacing2 rescale_spacing(const Spacing2& s, int in_rows, int in_cols, int out_rows, int out_cols) {
    return Spacing2{s.row * in_rows / out_rows, s.col * in_cols / out_cols};
}

// ---------------------------------------------------------------------------------------------
// Intensity

Image normalize01(const Image& image) {
    Image out(image.rows, image.cols);
    if (image.empty()) return out;
    for (float v : image.px) {
        if (!std::isfinite(v)) throw std::invalid_argument("normalize01: non-finite input");
    }
    const auto [mn, mx] = std::minmax_element(image.px.begin(), image.px.end());
    const double lo = *mn;
    const double range = static_cast<double>(*mx) - lo;
    if (range <= 0.0) return out;
    for (std::size_t i = 0; i < image.size(); ++i) {
        out.px[i] = static_cast<float>((image.px[i] - lo) / range);
    }
    // Guard the endpoints against rounding.
    out.px[static_cast<std::size_t>(mn - image.px.begin())] = 0.0f;
    out.px[static_cast<std::size_t>(mx - image.px.begin())] = 1.0f;
    return out;
}

double percentile(std::vector<float> values, double pct) {
    if (values.empty()) throw std::invalid_argument("percentile: empty input");
    std::sort(values.begin(), values.end());
    const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (static_cast<double>(values[hi]) - values[lo]);
}

Image clip_percentiles(const Image& image, double lo_pct, double hi_pct) {
    if (!(lo_pct < hi_pct)) throw std::invalid_argument("clip_percentiles: lo_pct must be < hi_pct");
    if (image.empty()) return image;
    const auto lo = static_cast<float>(percentile(image.px, lo_pct));
    const auto hi = static_cast<float>(percentile(image.px, hi_pct));
    Image out = image;
    for (auto& v : out.px) v = std::clamp(v, lo, hi);
    return out;
}

// ---------------------------------------------------------------------------------------------
// CLAHE

namespace {

int clahe_bin(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return std::min(kClaheBins - 1, static_cast<int>(c * kClaheBins));
}

// Blend weights along one axis: pixel index -> (tile0, tile1, weight of tile1).
std::vector<Tap> tile_taps(int size, int tiles) {
    std::vector<Tap> taps(static_cast<std::size_t>(size));
    for (int p = 0; p < size; ++p) {
        const double f = (p + 0.5) * tiles / size - 0.5;
        const int t0 = static_cast<int>(std::floor(f));
        const double w = f - t0;
        taps[static_cast<std::size_t>(p)] = Tap{std::clamp(t0, 0, tiles - 1), std::clamp(t0 + 1, 0, tiles - 1), w};
    }
    return taps;
}

}  // namespace

Image clahe(const Image& image, const PreprocessConfig& config) {
    config.validate();
    const int ty = config.clahe_tile_rows;
    const int tx = config.clahe_tile_cols;
    if (image.rows < ty || image.cols < tx) {
        throw std::invalid_argument("clahe: image " + std::to_string(image.rows) + "x" + std::to_string(image.cols) +
                                    " smaller than tile grid");
    }

    // Per-tile equalisation maps.
    std::vector<std::vector<double>> maps(static_cast<std::size_t>(ty) * tx, std::vector<double>(kClaheBins));
    for (int a = 0; a < ty; ++a) {
        const int r0 = a * image.rows / ty;
        const int r1 = (a + 1) * image.rows / ty;
        for (int b = 0; b < tx; ++b) {
            const int c0 = b * image.cols / tx;
            const int c1 = (b + 1) * image.cols / tx;
            std::vector<double> hist(kClaheBins, 0.0);
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) hist[static_cast<std::size_t>(clahe_bin(image.at(r, c)))] += 1.0;
            }
            const double pixels = static_cast<double>(r1 - r0) * (c1 - c0);
            const double limit = config.clahe_clip_limit * pixels;
            double excess = 0.0;
            for (auto& h : hist) {
                if (h > limit) {
                    excess += h - limit;
                    h = limit;
                }
            }
            const double share = excess / kClaheBins;
            auto& map = maps[static_cast<std::size_t>(a) * tx + b];
            double cdf = 0.0;
            for (int k = 0; k < kClaheBins; ++k) {
                cdf += hist[static_cast<std::size_t>(k)] + share;
                map[static_cast<std::size_t>(k)] = std::min(1.0, cdf / pixels);
            }
        }
    }

    const auto row_taps = tile_taps(image.rows, ty);
    const auto col_taps = tile_taps(image.cols, tx);
    Image out(image.rows, image.cols);
    for (int r = 0; r < image.rows; ++r) {
        const Tap& ry = row_taps[static_cast<std::size_t>(r)];
        for (int c = 0; c < image.cols; ++c) {
            const Tap& cx = col_taps[static_cast<std::size_t>(c)];
            const auto k = static_cast<std::size_t>(clahe_bin(image.at(r, c)));
            auto m = [&](int a, int b) { return maps[static_cast<std::size_t>(a) * tx + b][k]; };
            const double top = (1.0 - cx.w) * m(ry.i0, cx.i0) + cx.w * m(ry.i0, cx.i1);
            const double bot = (1.0 - cx.w) * m(ry.i1, cx.i0) + cx.w * m(ry.i1, cx.i1);
            out.at(r, c) = static_cast<float>(std::clamp((1.0 - ry.w) * top + ry.w * bot, 0.0, 1.0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Chain

Image preprocess_image(const Image& image, const PreprocessConfig& config) {
    Image x = resample_slice(image, config.target_rows, config.target_cols, Interp::linear);
    x = normalize01(x);
    x = clip_percentiles(x, config.clip_lo_pct, config.clip_hi_pct);
    if (config.renormalize_after_clip) x = normalize01(x);
    return clahe(x, config);
}

std::vector<SliceSample> preprocess_case(const Volume& volume, const MaskVolume* mask, const PreprocessConfig& config) {
    config.validate();
    const auto& v = volume.voxels;
    if (v.slices < 1 || v.rows < 1 || v.cols < 1) throw std::invalid_argument("preprocess_case: empty volume");
    if (mask != nullptr && !mask->voxels.same_shape(v)) {
        throw std::invalid_argument("preprocess_case: mask shape differs from volume");
    }
    const Spacing2 spacing = rescale_spacing(Spacing2{volume.spacing_mm.row, volume.spacing_mm.col}, v.rows, v.cols,
                                             config.target_rows, config.target_cols);
    std::vector<SliceSample> out;
    out.reserve(static_cast<std::size_t>(v.slices));
    for (int s = 0; s < v.slices; ++s) {
        SliceSample sample;
        sample.image = preprocess_image(v.slice(s), config);
        sample.mask = mask != nullptr
                          ? resample_slice(mask->voxels.slice(s), config.target_rows, config.target_cols, Interp::nearest)
                          : Mask(config.target_rows, config.target_cols);
        sample.patient_id = volume.patient_id;
        sample.slice_index = s;
        sample.spacing_mm = spacing;
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace gsyn
