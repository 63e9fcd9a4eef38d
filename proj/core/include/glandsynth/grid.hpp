#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsyn {

/// Dense row-major 2-D array.
template <typename T>
struct Grid2 {
    int rows = 0;
    int cols = 0;
    std::vector<T> px;

    Grid2() = default;
    Grid2(int r, int c, T fill = T{}) : rows(r), cols(c), px(static_cast<std::size_t>(r) * c, fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Grid2: negative dimension");
    }

    [[nodiscard]] std::size_t size() const { return px.size(); }
    [[nodiscard]] bool empty() const { return px.empty(); }
    [[nodiscard]] bool same_shape(const Grid2& o) const { return rows == o.rows && cols == o.cols; }
    template <typename U>
    [[nodiscard]] bool same_shape(const Grid2<U>& o) const { return rows == o.rows && cols == o.cols; }

    T& at(int r, int c) { return px[static_cast<std::size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return px[static_cast<std::size_t>(r) * cols + c]; }

    bool operator==(const Grid2&) const = default;
};

/// Dense 3-D array indexed (slice, row, col).
template <typename T>
struct Grid3 {
    int slices = 0;
    int rows = 0;
    int cols = 0;
    std::vector<T> vox;

    Grid3() = default;
    Grid3(int s, int r, int c, T fill = T{})
        : slices(s), rows(r), cols(c), vox(static_cast<std::size_t>(s) * r * c, fill) {
        if (s < 0 || r < 0 || c < 0) throw std::invalid_argument("Grid3: negative dimension");
    }

    [[nodiscard]] std::size_t size() const { return vox.size(); }
    [[nodiscard]] std::size_t slice_size() const { return static_cast<std::size_t>(rows) * cols; }
    template <typename U>
    [[nodiscard]] bool same_shape(const Grid3<U>& o) const {
        return slices == o.slices && rows == o.rows && cols == o.cols;
    }

    T& at(int s, int r, int c) { return vox[(static_cast<std::size_t>(s) * rows + r) * cols + c]; }
    const T& at(int s, int r, int c) const { return vox[(static_cast<std::size_t>(s) * rows + r) * cols + c]; }

    [[nodiscard]] Grid2<T> slice(int s) const {
        Grid2<T> out(rows, cols);
        const auto first = vox.begin() + static_cast<std::ptrdiff_t>(s * slice_size());
        std::copy(first, first + static_cast<std::ptrdiff_t>(slice_size()), out.px.begin());
        return out;
    }

    void set_slice(int s, const Grid2<T>& g) {
        if (g.rows != rows || g.cols != cols) throw std::invalid_argument("Grid3::set_slice: shape mismatch");
        std::copy(g.px.begin(), g.px.end(), vox.begin() + static_cast<std::ptrdiff_t>(s * slice_size()));
    }

    bool operator==(const Grid3&) const = default;
};

using Image = Grid2<float>;
using Mask = Grid2<std::uint8_t>;

struct Spacing2 {
    double row = 1.0;
    double col = 1.0;
    bool operator==(const Spacing2&) const = default;
};

struct Spacing3 {
    double slice = 1.0;
    double row = 1.0;
    double col = 1.0;
    bool operator==(const Spacing3&) const = default;
};

/// T2 intensity volume of one patient.
struct Volume {
    Grid3<float> voxels;
    Spacing3 spacing_mm;
    std::string patient_id;
};

/// Binary whole-gland segmentation of one patient.
struct MaskVolume {
    Grid3<std::uint8_t> voxels;
    Spacing3 spacing_mm;
    std::string patient_id;
};

/// Paired 2-D image and mask; the unit of training.
struct SliceSample {
    Image image;
    Mask mask;
    std::string patient_id;
    int slice_index = 0;
    Spacing2 spacing_mm;

    [[nodiscard]] std::string key() const { return patient_id + "#" + std::to_string(slice_index); }
};

[[nodiscard]] inline std::size_t count_foreground(const Mask& m) {
    std::size_t n = 0;
    for (auto v : m.px) n += v != 0;
    return n;
}

}  // namespace gsyn
