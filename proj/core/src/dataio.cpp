#include "glandsynth/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "glandsynth/errors.hpp"
#include "glandsynth/seeds.hpp"

namespace gsyn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------------------------
// PROMISE12

namespace {

std::string normalize_case_id(const std::string& id) {
    if (id.rfind("Case", 0) == 0) return id;
    return "Case" + id;
}

}  // namespace

LoadedCase load_promise12_case(const fs::path& root, const std::string& case_id) {
    const std::string id = normalize_case_id(case_id);
    const fs::path image_header = root / (id + ".mhd");
    if (!fs::exists(image_header)) throw IoError("promise12: missing header " + image_header.string());

    LoadedCase out;
    MetaImage image = read_metaimage(image_header);
    out.volume = Volume{std::move(image.voxels), image.spacing_mm, id};

    const fs::path seg_header = root / (id + "_segmentation.mhd");
    if (!fs::exists(seg_header)) return out;

    MetaImage seg = read_metaimage(seg_header);
    if (!seg.voxels.same_shape(out.volume.voxels)) {
        throw IoError("promise12: segmentation shape differs from image for " + id);
    }
    MaskVolume mask{Grid3<std::uint8_t>(seg.voxels.slices, seg.voxels.rows, seg.voxels.cols), out.volume.spacing_mm,
                    id};
    std::set<float> labels;
    for (std::size_t i = 0; i < seg.voxels.size(); ++i) {
        const float v = seg.voxels.vox[i];
        if (v < 0.0f || v != std::floor(v)) {
            throw IoError("promise12: segmentation of " + id + " holds non-label value " + std::to_string(v));
        }
        if (v > 0.0f) labels.insert(v);
        mask.voxels.vox[i] = v > 0.0f ? 1 : 0;
    }
    if (labels.size() > 1) {
        out.warnings.push_back("segmentation of " + id + " has " + std::to_string(labels.size()) +
                               " foreground labels; merged into one gland label");
    }
    out.mask = std::move(mask);
    return out;
}

std::vector<std::string> list_promise12_cases(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("promise12: not a directory: " + root.string());
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(root)) {
        const std::string name = entry.path().filename().string();
        if (entry.path().extension() != ".mhd" || name.rfind("Case", 0) != 0) continue;
        const std::string stem = entry.path().stem().string();
        if (stem.find("_segmentation") != std::string::npos) continue;
        ids.push_back(stem);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ---------------------------------------------------------------------------------------------
// Phantom

std::pair<Volume, MaskVolume> generate_phantom_case(std::uint64_t seed, int n_slices, const PhantomOptions& opts) {
    if (n_slices < 1) throw std::invalid_argument("generate_phantom_case: n_slices must be >= 1");
    if (opts.rows < 16 || opts.cols < 16) throw std::invalid_argument("generate_phantom_case: image too small");

    std::mt19937_64 rng(derive_seed(seed, "phantom"));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    const int rows = opts.rows;
    const int cols = opts.cols;
    const double cy0 = rows * (0.5 + uniform(-0.04, 0.04));
    const double cx0 = cols * (0.5 + uniform(-0.04, 0.04));
    const double ay_max = rows * uniform(0.14, 0.19);
    const double ax_max = cols * uniform(0.18, 0.24);
    const double theta0 = uniform(-0.3, 0.3);
    const double theta_drift = uniform(-0.15, 0.15);
    const double drift_y = rows * uniform(-0.02, 0.02);
    const double drift_x = cols * uniform(-0.02, 0.02);

    const double gland_mean = uniform(480.0, 560.0);
    const double body_mean = uniform(230.0, 280.0);
    const double tex_amp = uniform(30.0, 60.0);
    const double fy = uniform(1.5, 3.0);
    const double fx = uniform(1.5, 3.0);
    const double phase_y = uniform(0.0, 2.0 * std::numbers::pi);
    const double phase_x = uniform(0.0, 2.0 * std::numbers::pi);
    const double body_ry = rows * uniform(0.40, 0.46);
    const double body_rx = cols * uniform(0.44, 0.48);
    constexpr double kNoise = 25.0;
    constexpr double kMaxIntensity = 1000.0;

    Volume volume{Grid3<float>(n_slices, rows, cols), opts.spacing_mm, ""};
    MaskVolume mask{Grid3<std::uint8_t>(n_slices, rows, cols), opts.spacing_mm, ""};
    std::normal_distribution<double> noise(0.0, kNoise);

    for (int s = 0; s < n_slices; ++s) {
        const bool edge = s == 0 || s == n_slices - 1;
        const double t = n_slices > 1 ? static_cast<double>(s) / (n_slices - 1) : 0.0;
        const double profile = std::sqrt(std::max(0.0, std::sin(std::numbers::pi * t)));
        const double ay = std::max(1.5, ay_max * profile);
        const double ax = std::max(1.5, ax_max * profile);
        const double theta = theta0 + theta_drift * (t - 0.5);
        const double cy = cy0 + drift_y * std::sin(std::numbers::pi * t);
        const double cx = cx0 + drift_x * std::sin(std::numbers::pi * t);
        const double ct = std::cos(theta);
        const double st = std::sin(theta);

        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                const double dy = r - cy;
                const double dx = c - cx;
                const double u1 = (dx * ct + dy * st) / ax;
                const double v1 = (-dx * st + dy * ct) / ay;
                const double rho = u1 * u1 + v1 * v1;
                const bool inside = !edge && rho <= 1.0;
                mask.voxels.at(s, r, c) = inside ? 1 : 0;

                const double by = (r - rows * 0.5) / body_ry;
                const double bx = (c - cols * 0.5) / body_rx;
                const bool in_body = by * by + bx * bx <= 1.0;
                double v = in_body ? body_mean : 40.0;
                v += tex_amp * std::sin(2.0 * std::numbers::pi * fy * r / rows + phase_y) *
                     std::cos(2.0 * std::numbers::pi * fx * c / cols + phase_x);
                if (inside) v = gland_mean + 0.15 * (gland_mean - body_mean) * (1.0 - rho);
                v += noise(rng);
                volume.voxels.at(s, r, c) = static_cast<float>(std::clamp(v, 0.0, kMaxIntensity));
            }
        }
    }
    const std::string id = "Phantom" + std::to_string(seed);
    volume.patient_id = id;
    mask.patient_id = id;
    return {std::move(volume), std::move(mask)};
}

// ---------------------------------------------------------------------------------------------
// Split

void to_json(nlohmann::json& j, const SplitManifest& m) {
    j = nlohmann::json{{"seed", m.seed}, {"ratios", m.ratios}, {"train", m.train}, {"val", m.val}, {"test", m.test}};
}

void from_json(const nlohmann::json& j, SplitManifest& m) {
    j.at("seed").get_to(m.seed);
    j.at("ratios").get_to(m.ratios);
    j.at("train").get_to(m.train);
    j.at("val").get_to(m.val);
    j.at("test").get_to(m.test);
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = ratios[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        remainder[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b] + 1e-12; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
    return sizes;
}

SplitManifest split_patients(const std::vector<std::string>& patient_ids, const std::array<double, 3>& ratios,
                             std::uint64_t seed) {
    if (patient_ids.empty()) throw std::invalid_argument("split_patients: no patients");
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw std::invalid_argument("split_patients: ratios must be nonnegative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split_patients: ratios must sum to 1");
    std::set<std::string> unique(patient_ids.begin(), patient_ids.end());
    if (unique.size() != patient_ids.size()) throw std::invalid_argument("split_patients: duplicate patient ids");

    std::vector<std::string> ids = patient_ids;
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(derive_seed(seed, "split"));
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(ids[i], ids[pick(rng)]);
    }

    const auto sizes = split_sizes(ids.size(), ratios);
    SplitManifest m;
    m.seed = seed;
    m.ratios = ratios;
    auto it = ids.begin();
    m.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
    it += static_cast<std::ptrdiff_t>(sizes[0]);
    m.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
    it += static_cast<std::ptrdiff_t>(sizes[1]);
    m.test.assign(it, ids.end());
    return m;
}

// ---------------------------------------------------------------------------------------------
// Slicing

std::vector<SliceSample> extract_slices(const Volume& volume, const MaskVolume& mask, bool keep_empty) {
    if (!volume.voxels.same_shape(mask.voxels)) {
        throw std::invalid_argument("extract_slices: image and mask shapes differ for " + volume.patient_id);
    }
    std::vector<SliceSample> out;
    out.reserve(static_cast<std::size_t>(volume.voxels.slices));
    for (int s = 0; s < volume.voxels.slices; ++s) {
        Mask m = mask.voxels.slice(s);
        if (!keep_empty && count_foreground(m) == 0) continue;
        out.push_back(SliceSample{volume.voxels.slice(s), std::move(m), volume.patient_id, s,
                                  Spacing2{volume.spacing_mm.row, volume.spacing_mm.col}});
    }
    return out;
}

namespace {

template <typename T, typename Get>
Grid3<T> stack(const std::vector<SliceSample>& samples, Get get) {
    if (samples.empty()) return {};
    std::vector<const SliceSample*> order;
    for (const auto& s : samples) order.push_back(&s);
    std::sort(order.begin(), order.end(),
              [](const SliceSample* a, const SliceSample* b) { return a->slice_index < b->slice_index; });
    const auto& first = get(*order.front());
    Grid3<T> out(static_cast<int>(order.size()), first.rows, first.cols);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && order[i]->slice_index == order[i - 1]->slice_index) {
            throw std::invalid_argument("stack: duplicate slice_index " + std::to_string(order[i]->slice_index));
        }
        out.set_slice(static_cast<int>(i), get(*order[i]));
    }
    return out;
}

}  // namespace

Grid3<std::uint8_t> stack_masks(const std::vector<SliceSample>& samples) {
    return stack<std::uint8_t>(samples, [](const SliceSample& s) -> const Mask& { return s.mask; });
}

Grid3<float> stack_images(const std::vector<SliceSample>& samples) {
    return stack<float>(samples, [](const SliceSample& s) -> const Image& { return s.image; });
}

}  // namespace gsyn
