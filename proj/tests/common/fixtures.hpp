#pragma once

#include <random>

#include "glandsynth/grid.hpp"

namespace fixture {

inline gsyn::Mask filled_rect(int rows, int cols, int r0, int c0, int r1, int c1) {
    gsyn::Mask m(rows, cols);
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) m.at(r, c) = 1;
    return m;
}

inline gsyn::Mask ellipse(int rows, int cols, double cy, double cx, double ay, double ax) {
    gsyn::Mask m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double y = (r - cy) / ay;
            const double x = (c - cx) / ax;
            m.at(r, c) = y * y + x * x <= 1.0 ? 1 : 0;
        }
    return m;
}

/// Random blobby mask: Bernoulli noise with density p.
inline gsyn::Mask random_mask(int rows, int cols, double p, std::mt19937_64& rng) {
    gsyn::Mask m(rows, cols);
    std::bernoulli_distribution d(p);
    for (auto& v : m.px) v = d(rng) ? 1 : 0;
    return m;
}

}  // namespace fixture
