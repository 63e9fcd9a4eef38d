#pragma once

// Independent reference implementations used to cross-check the library. They favour the
// most literal formulation over speed.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "glandsynth/grid.hpp"

namespace oracle {

using Point = std::pair<int, int>;

inline std::set<Point> foreground(const gsyn::Mask& m) {
    std::set<Point> s;
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c)
            if (m.at(r, c)) s.insert({r, c});
    return s;
}

/// 2|A n B| / (|A| + |B|) by explicit set intersection.
inline double dice(const gsyn::Mask& a, const gsyn::Mask& b) {
    const auto sa = foreground(a);
    const auto sb = foreground(b);
    if (sa.empty() && sb.empty()) return 1.0;
    std::vector<Point> both;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(both));
    return 2.0 * static_cast<double>(both.size()) / static_cast<double>(sa.size() + sb.size());
}

inline double volumetric_dice(const gsyn::Grid3<std::uint8_t>& a, const gsyn::Grid3<std::uint8_t>& b) {
    long inter = 0;
    long na = 0;
    long nb = 0;
    for (int s = 0; s < a.slices; ++s)
        for (int r = 0; r < a.rows; ++r)
            for (int c = 0; c < a.cols; ++c) {
                const bool x = a.at(s, r, c) != 0;
                const bool y = b.at(s, r, c) != 0;
                inter += x && y;
                na += x;
                nb += y;
            }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

/// Foreground pixels with at least one 4-neighbour that is background or outside the grid.
inline std::vector<Point> boundary(const gsyn::Mask& m) {
    std::vector<Point> out;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            if (!m.at(r, c)) continue;
            for (int k = 0; k < 4; ++k) {
                const int y = r + dr[k];
                const int x = c + dc[k];
                if (y < 0 || y >= m.rows || x < 0 || x >= m.cols || !m.at(y, x)) {
                    out.emplace_back(r, c);
                    break;
                }
            }
        }
    return out;
}

struct Surface {
    double msd;
    double hd;
};

/// O(|A| |B|) all-pairs nearest boundary distances in millimetres. MSD pools both directed
/// distance sets; HD is the larger directed maximum.
inline Surface surface(const gsyn::Mask& a, const gsyn::Mask& b, double row_mm, double col_mm) {
    const auto ba = boundary(a);
    const auto bb = boundary(b);
    auto directed = [&](const std::vector<Point>& from, const std::vector<Point>& to, double& sum, double& mx) {
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                const double dy = (p.first - q.first) * row_mm;
                const double dx = (p.second - q.second) * col_mm;
                best = std::min(best, std::sqrt(dy * dy + dx * dx));
            }
            sum += best;
            mx = std::max(mx, best);
        }
    };
    double sum = 0.0;
    double mx = 0.0;
    directed(ba, bb, sum, mx);
    directed(bb, ba, sum, mx);
    return {sum / static_cast<double>(ba.size() + bb.size()), mx};
}

/// numpy-style linear percentile on a sorted copy.
inline double percentile(std::vector<double> v, double pct) {
    std::sort(v.begin(), v.end());
    const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Plain global histogram equalisation over 256 bins: value -> cdf(bin) / N.
inline gsyn::Image global_equalize(const gsyn::Image& im) {
    std::vector<double> hist(256, 0.0);
    auto bin = [](float v) { return std::min(255, static_cast<int>(std::floor(v * 256.0))); };
    for (const float v : im.px) hist[static_cast<std::size_t>(bin(v))] += 1.0;
    std::vector<double> cdf(256, 0.0);
    double run = 0.0;
    for (std::size_t i = 0; i < 256; ++i) {
        run += hist[i];
        cdf[i] = run / static_cast<double>(im.size());
    }
    gsyn::Image out(im.rows, im.cols);
    for (std::size_t i = 0; i < im.size(); ++i) out.px[i] = static_cast<float>(cdf[static_cast<std::size_t>(bin(im.px[i]))]);
    return out;
}

/// Number of 8-connected foreground components by repeated flood fill.
inline int components8(const gsyn::Mask& m) {
    std::vector<int> label(m.size(), 0);
    int n = 0;
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            if (!m.at(r, c) || label[static_cast<std::size_t>(r) * m.cols + c]) continue;
            ++n;
            std::vector<Point> frontier{{r, c}};
            label[static_cast<std::size_t>(r) * m.cols + c] = n;
            while (!frontier.empty()) {
                auto [y, x] = frontier.back();
                frontier.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy;
                        const int xx = x + dx;
                        if (yy < 0 || yy >= m.rows || xx < 0 || xx >= m.cols) continue;
                        auto& l = label[static_cast<std::size_t>(yy) * m.cols + xx];
                        if (m.at(yy, xx) && !l) {
                            l = n;
                            frontier.emplace_back(yy, xx);
                        }
                    }
            }
        }
    return n;
}

}  // namespace oracle
