#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "common/oracles.hpp"
#include "glandsynth/dataio.hpp"
#include "glandsynth/preprocess.hpp"

using namespace gsyn;

namespace {

Image random_image(int rows, int cols, std::mt19937_64& rng, float lo = 0.0f, float hi = 1.0f) {
    Image im(rows, cols);
    std::uniform_real_distribution<float> d(lo, hi);
    for (auto& v : im.px) v = d(rng);
    return im;
}

double stddev(const Image& im) {
    double m = 0.0;
    for (float v : im.px) m += v;
    m /= static_cast<double>(im.size());
    double s = 0.0;
    for (float v : im.px) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(im.size()));
}

}  // namespace

TEST_CASE("config validation and json") {
    PreprocessConfig c;
    CHECK_NOTHROW(c.validate());
    c.clip_lo_pct = 99.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PreprocessConfig{};
    c.clahe_tile_rows = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PreprocessConfig{};
    c.clahe_clip_limit = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PreprocessConfig{};
    c.target_rows = 64;
    c.clahe_tile_cols = 4;
    CHECK(nlohmann::json(c).get<PreprocessConfig>() == c);
}

TEST_CASE("resample: constant, monotone, nearest") {
    const Image flat(5, 7, 0.25f);
    const Image r = resample_slice(flat, 13, 3, Interp::linear);
    CHECK(r.rows == 13);
    CHECK(r.cols == 3);
    for (float v : r.px) CHECK(v == 0.25f);

    Image ramp(2, 2);
    ramp.at(0, 1) = 1.0f;
    ramp.at(1, 1) = 1.0f;
    const Image up = resample_slice(ramp, 2, 4, Interp::linear);
    for (int row = 0; row < 2; ++row)
        for (int c = 1; c < 4; ++c) CHECK(up.at(row, c) >= up.at(row, c - 1));

    std::mt19937_64 rng(21);
    const Image noise = random_image(9, 11, rng);
    const auto [lo, hi] = std::minmax_element(noise.px.begin(), noise.px.end());
    const Image big = resample_slice(noise, 23, 17, Interp::linear);
    for (float v : big.px) {
        CHECK(v >= *lo);
        CHECK(v <= *hi);
    }
    const Image nn = resample_slice(noise, 23, 17, Interp::nearest);
    const std::set<float> values(noise.px.begin(), noise.px.end());
    for (float v : nn.px) CHECK(values.count(v) == 1);

    Mask m(6, 6);
    m.at(2, 3) = 1;
    m.at(3, 3) = 1;
    const Mask mm = resample_slice(m, 17, 9, Interp::nearest);
    for (auto v : mm.px) CHECK(v <= 1);
    CHECK(count_foreground(mm) > 0);
    CHECK_THROWS_AS(resample_slice(Image(), 4, 4, Interp::linear), std::invalid_argument);
}

TEST_CASE("resample: same size is the identity") {
    std::mt19937_64 rng(22);
    const Image im = random_image(8, 6, rng);
    CHECK(resample_slice(im, 8, 6, Interp::linear) == im);
    CHECK(resample_slice(im, 8, 6, Interp::nearest) == im);
}

TEST_CASE("spacing rescales with the resampling factor") {
    const Spacing2 s = rescale_spacing(Spacing2{0.5, 0.625}, 512, 320, 256, 256);
    CHECK(s.row == doctest::Approx(1.0));
    CHECK(s.col == doctest::Approx(0.78125));
}

TEST_CASE("normalize01") {
    Image a(1, 3);
    a.px = {2, 4, 6};
    const Image n = normalize01(a);
    CHECK(n.px[0] == 0.0f);
    CHECK(n.px[1] == 0.5f);
    CHECK(n.px[2] == 1.0f);
    Image c(1, 3, 5.0f);
    for (float v : normalize01(c).px) CHECK(v == 0.0f);
    Image bad(1, 2);
    bad.px[1] = std::numeric_limits<float>::infinity();
    CHECK_THROWS(normalize01(bad));
    std::mt19937_64 rng(23);
    const Image r = normalize01(random_image(7, 7, rng, -300.0f, 900.0f));
    CHECK(*std::min_element(r.px.begin(), r.px.end()) == 0.0f);
    CHECK(*std::max_element(r.px.begin(), r.px.end()) == 1.0f);
}

TEST_CASE("percentile clipping matches the sort-based oracle") {
    Image ramp(1, 101);
    for (int i = 0; i <= 100; ++i) ramp.px[static_cast<std::size_t>(i)] = static_cast<float>(i);
    const Image clipped = clip_percentiles(ramp, 1.0, 99.0);
    CHECK(*std::min_element(clipped.px.begin(), clipped.px.end()) == 1.0f);
    CHECK(*std::max_element(clipped.px.begin(), clipped.px.end()) == 99.0f);
    CHECK(clip_percentiles(ramp, 0.0, 100.0) == ramp);
    const Image flat(3, 3, 0.7f);
    CHECK(clip_percentiles(flat, 1.0, 99.0) == flat);

    std::mt19937_64 rng(24);
    std::uniform_int_distribution<int> dim(1, 40);
    for (int t = 0; t < 50; ++t) {
        const Image im = random_image(dim(rng), dim(rng), rng, -5.0f, 5.0f);
        const std::vector<double> vals(im.px.begin(), im.px.end());
        const auto lo = static_cast<float>(oracle::percentile(vals, 1.0));
        const auto hi = static_cast<float>(oracle::percentile(vals, 99.0));
        const Image out = clip_percentiles(im, 1.0, 99.0);
        for (std::size_t i = 0; i < im.size(); ++i) CHECK(out.px[i] == std::clamp(im.px[i], lo, hi));
    }
}

TEST_CASE("clip_percentiles preserves order") {
    std::mt19937_64 rng(25);
    const Image im = random_image(10, 10, rng);
    const Image out = clip_percentiles(im, 5.0, 95.0);
    for (std::size_t i = 0; i < im.size(); ++i)
        for (std::size_t j = 0; j < im.size(); ++j)
            if (im.px[i] <= im.px[j]) CHECK(out.px[i] <= out.px[j]);
}

TEST_CASE("clahe: 1x1 tiles with no clipping is global equalisation") {
    std::mt19937_64 rng(26);
    PreprocessConfig c;
    c.clahe_tile_rows = 1;
    c.clahe_tile_cols = 1;
    c.clahe_clip_limit = 1.0;
    for (int t = 0; t < 10; ++t) {
        const Image im = random_image(20 + t, 30 - t, rng);
        const Image out = clahe(im, c);
        const Image ref = oracle::global_equalize(im);
        for (std::size_t i = 0; i < im.size(); ++i) CHECK(std::abs(out.px[i] - ref.px[i]) <= 1.0f / 255.0f);
    }
}

TEST_CASE("clahe: constant image stays constant, range stays in [0,1]") {
    PreprocessConfig c;
    const Image flat(64, 64, 0.3f);
    const Image out = clahe(flat, c);
    for (float v : out.px) CHECK(v == out.px[0]);
    std::mt19937_64 rng(27);
    for (int t = 0; t < 100; ++t) {
        const Image o = clahe(random_image(32, 32, rng), c);
        for (float v : o.px) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK_THROWS_AS(clahe(Image(4, 4), c), std::invalid_argument);
}

TEST_CASE("clahe stretches a low-contrast ramp") {
    PreprocessConfig c;
    c.clahe_tile_rows = 1;
    c.clahe_tile_cols = 1;
    Image ramp(32, 32);
    for (int r = 0; r < 32; ++r)
        for (int col = 0; col < 32; ++col) ramp.at(r, col) = 0.4f + 0.2f * static_cast<float>(col) / 31.0f;
    const Image out = clahe(ramp, c);
    CHECK(stddev(out) >= stddev(ramp));
}

TEST_CASE("preprocess_case: shapes, binarity, determinism") {
    auto [vol, mask] = generate_phantom_case(5, 6);
    PreprocessConfig c;
    const auto s = preprocess_case(vol, &mask, c);
    REQUIRE(s.size() == 6);
    for (const auto& x : s) {
        CHECK(x.image.rows == 256);
        CHECK(x.image.cols == 256);
        CHECK(x.mask.same_shape(x.image));
        for (auto v : x.mask.px) CHECK(v <= 1);
        for (float v : x.image.px) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK(x.spacing_mm.row == doctest::Approx(0.625 * 96.0 / 256.0));
    }
    CHECK(count_foreground(s[0].mask) == 0);
    CHECK(count_foreground(s[3].mask) > 0);

    // Running the chain again on 256x256 input keeps the shape.
    Volume again = vol;
    again.voxels = stack_images(s);
    const auto s2 = preprocess_case(again, nullptr, c);
    CHECK(s2.front().image.rows == 256);
    CHECK(count_foreground(s2.front().mask) == 0);

    const auto s3 = preprocess_case(vol, &mask, c);
    CHECK(s3[2].image == s[2].image);
    CHECK(preprocess_image(vol.voxels.slice(2), c) == s[2].image);
}
