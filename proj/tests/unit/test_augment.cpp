#include <doctest.h>

#include <cmath>
#include <random>

#include "common/fixtures.hpp"
#include "glandsynth/augment.hpp"

using namespace gsyn;

namespace {

SliceSample noisy_sample(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    SliceSample s;
    s.image = Image(rows, cols);
    for (auto& v : s.image.px) v = u(rng);
    s.mask = fixture::ellipse(rows, cols, rows / 2.0 - 2, cols / 2.0 + 3, rows / 5.0, cols / 4.0);
    s.patient_id = "p";
    s.slice_index = 4;
    return s;
}

std::pair<double, double> centroid(const Mask& m) {
    double r = 0, c = 0, n = 0;
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            if (m.at(y, x)) {
                r += y;
                c += x;
                n += 1;
            }
    return {r / n, c / n};
}

bool binary(const Mask& m) {
    for (auto v : m.px)
        if (v > 1) return false;
    return true;
}

}  // namespace

TEST_CASE("identity params return the input unchanged") {
    const SliceSample s = noisy_sample(20, 24, 1);
    const SliceSample o = apply_transform(s, TransformParams{});
    CHECK(o.image == s.image);
    CHECK(o.mask == s.mask);
    CHECK(o.key() == s.key());
}

TEST_CASE("flips are involutions and are exact") {
    const SliceSample s = noisy_sample(17, 22, 2);
    TransformParams h;
    h.hflip = true;
    const SliceSample once = apply_transform(s, h);
    CHECK(once.image.at(3, 0) == s.image.at(3, 21));
    CHECK(apply_transform(once, h).image == s.image);
    CHECK(apply_transform(once, h).mask == s.mask);
    TransformParams v;
    v.vflip = true;
    const SliceSample vo = apply_transform(s, v);
    CHECK(vo.mask.at(0, 5) == s.mask.at(16, 5));
    CHECK(apply_transform(vo, v).image == s.image);
}

TEST_CASE("quarter turns move single pixels to the rotated coordinate") {
    const int n = 15;
    const double cy = (n - 1) / 2.0;
    const double cx = (n - 1) / 2.0;
    for (int r = 0; r < n; r += 3) {
        for (int c = 0; c < n; c += 4) {
            SliceSample s;
            s.image = Image(n, n);
            s.mask = Mask(n, n);
            s.mask.at(r, c) = 1;
            TransformParams p;
            p.angle_deg = 90.0;
            const SliceSample o = apply_transform(s, p);
            // Counter-clockwise as displayed with rows growing downwards.
            const int er = static_cast<int>(cy - (c - cx));
            const int ec = static_cast<int>(cx + (r - cy));
            CHECK(count_foreground(o.mask) == 1);
            CHECK(o.mask.at(er, ec) == 1);
            const auto [mr, mc] = map_point(p, n, n, r, c);
            CHECK(mr == doctest::Approx(er));
            CHECK(mc == doctest::Approx(ec));
        }
    }
    const SliceSample s = noisy_sample(16, 16, 3);
    for (double a : {90.0, 180.0, 270.0, -90.0}) {
        TransformParams p;
        p.angle_deg = a;
        CHECK(count_foreground(apply_transform(s, p).mask) == count_foreground(s.mask));
    }
}

TEST_CASE("integer shifts translate content with zero fill") {
    const SliceSample s = noisy_sample(12, 12, 4);
    TransformParams p;
    p.dx = 3;
    p.dy = -2;
    const SliceSample o = apply_transform(s, p);
    CHECK(o.image.at(5, 7) == s.image.at(7, 4));
    CHECK(o.image.at(0, 0) == 0.0f);
    CHECK(o.image.at(11, 5) == 0.0f);
}

TEST_CASE("centroid of the transformed mask follows the transformed centroid") {
    std::mt19937_64 rng(5);
    const AugmentSpec spec = AugmentSpec::all();
    for (int t = 0; t < 200; ++t) {
        const SliceSample s = noisy_sample(48, 40, static_cast<std::uint64_t>(t));
        TransformParams p = sample_params(spec, 48, 40, rng());
        p.dx *= 0.3;  // keep the gland fully in frame
        p.dy *= 0.3;
        const SliceSample o = apply_transform(s, p);
        const auto [r0, c0] = centroid(s.mask);
        const auto [er, ec] = map_point(p, 48, 40, r0, c0);
        const auto [r1, c1] = centroid(o.mask);
        CHECK(std::hypot(r1 - er, c1 - ec) <= 1.0);
        CHECK(binary(o.mask));
        CHECK(o.image.same_shape(s.image));
        CHECK(o.mask.same_shape(s.mask));
    }
}

TEST_CASE("sample_params: bounds, determinism, disabled transforms") {
    AugmentSpec none;
    AugmentSpec rot;
    rot.enable(Transform::rotation);
    for (std::uint64_t sd = 0; sd < 10000; ++sd) {
        CHECK(sample_params(none, 256, 256, sd).is_identity());
        const auto p = sample_params(rot, 256, 256, sd);
        CHECK(std::abs(p.angle_deg) <= 10.0);
        CHECK(p.dx == 0.0);
        CHECK(p.zoom == 1.0);
    }
    const AugmentSpec all = AugmentSpec::all();
    int hf = 0;
    for (std::uint64_t sd = 0; sd < 2000; ++sd) {
        const auto p = sample_params(all, 200, 100, sd);
        CHECK(std::abs(p.dx) <= 10.0);
        CHECK(std::abs(p.dy) <= 20.0);
        CHECK(p.zoom >= 1.0);
        CHECK(p.zoom <= 1.2);
        hf += p.hflip;
    }
    CHECK(hf > 850);
    CHECK(hf < 1150);
    CHECK(sample_params(all, 256, 256, 77) == sample_params(all, 256, 256, 77));
    CHECK_FALSE(sample_params(all, 256, 256, 77) == sample_params(all, 256, 256, 78));
}

TEST_CASE("spec json round trip and validation") {
    const AugmentSpec all = AugmentSpec::all();
    CHECK(nlohmann::json(all).get<AugmentSpec>() == all);
    CHECK(nlohmann::json(all)["enabled"].size() == 5);
    AugmentSpec bad;
    bad.shift_frac = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS(nlohmann::json({{"enabled", {"elastic"}}}).get<AugmentSpec>());
}

TEST_CASE("build_augmented_epoch keeps count, binarity, and identity when disabled") {
    std::vector<SliceSample> in;
    for (int i = 0; i < 9; ++i) in.push_back(noisy_sample(32, 32, 100 + static_cast<std::uint64_t>(i)));
    const auto out = build_augmented_epoch(in, AugmentSpec::all(), 3);
    REQUIRE(out.size() == in.size());
    int changed = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        CHECK(binary(out[i].mask));
        CHECK(out[i].key() == in[i].key());
        changed += !(out[i].image == in[i].image);
    }
    CHECK(changed > 0);
    const auto same = build_augmented_epoch(in, AugmentSpec::none(), 3);
    for (std::size_t i = 0; i < in.size(); ++i) {
        CHECK(same[i].image == in[i].image);
        CHECK(same[i].mask == in[i].mask);
    }
    CHECK(build_augmented_epoch(in, AugmentSpec::all(), 3)[4].image == out[4].image);
    CHECK_THROWS(build_augmented_epoch({}, AugmentSpec::all(), 3));
}
