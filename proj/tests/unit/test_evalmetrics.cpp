#include <doctest.h>

#include <cmath>
#include <random>

#include "common/fixtures.hpp"
#include "common/oracles.hpp"
#include "glandsynth/evalmetrics.hpp"

using namespace gsyn;

TEST_CASE("dice examples") {
    const Mask a = fixture::filled_rect(8, 8, 2, 2, 6, 6);
    CHECK(dice(a, a) == 1.0);
    Mask x(4, 4);
    Mask y(4, 4);
    x.at(1, 1) = x.at(1, 2) = 1;
    y.at(1, 1) = 1;
    CHECK(dice(x, y) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(dice(fixture::filled_rect(8, 8, 0, 0, 2, 2), fixture::filled_rect(8, 8, 5, 5, 7, 7)) == 0.0);
    CHECK(dice(Mask(3, 3), Mask(3, 3)) == 1.0);
    CHECK_THROWS_AS(dice(Mask(3, 3), Mask(3, 4)), std::invalid_argument);
}

TEST_CASE("dice symmetry and invariance under joint flips") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 50; ++t) {
        const Mask a = fixture::random_mask(9, 7, 0.4, rng);
        const Mask b = fixture::random_mask(9, 7, 0.4, rng);
        CHECK(dice(a, b) == dice(b, a));
        Mask fa(9, 7);
        Mask fb(9, 7);
        for (int r = 0; r < 9; ++r)
            for (int c = 0; c < 7; ++c) {
                fa.at(r, c) = a.at(8 - r, c);
                fb.at(r, c) = b.at(8 - r, c);
            }
        CHECK(dice(fa, fb) == doctest::Approx(dice(a, b)).epsilon(1e-15));
        CHECK(dice(a, b) == doctest::Approx(oracle::dice(a, b)).epsilon(1e-15));
    }
}

TEST_CASE("surface distances: identities and the 3-4-5 pair") {
    const Mask a = fixture::ellipse(20, 20, 9.5, 9.5, 6, 4);
    const auto same = surface_distance_stats(a, a, Spacing2{});
    CHECK(same.msd_mm == 0.0);
    CHECK(same.hd_mm == 0.0);

    Mask p(8, 8);
    Mask q(8, 8);
    p.at(0, 0) = 1;
    q.at(3, 4) = 1;
    const auto st = surface_distance_stats(p, q, Spacing2{});
    CHECK(st.hd_mm == 5.0);
    CHECK(st.msd_mm == 5.0);

    CHECK_THROWS_AS(surface_distance_stats(p, Mask(8, 8), Spacing2{}), std::domain_error);
}

TEST_CASE("surface distances: concentric squares match the all-pairs oracle") {
    const Mask big = fixture::filled_rect(15, 15, 3, 3, 12, 12);   // 9x9
    const Mask small = fixture::filled_rect(15, 15, 5, 5, 10, 10);  // 5x5
    const auto st = surface_distance_stats(big, small, Spacing2{});
    const auto ref = oracle::surface(big, small, 1.0, 1.0);
    CHECK(std::abs(st.msd_mm - ref.msd) < 1e-12);
    CHECK(std::abs(st.hd_mm - ref.hd) < 1e-12);
    CHECK(st.hd_mm == doctest::Approx(std::sqrt(8.0)));
}

TEST_CASE("surface distances respect anisotropic spacing") {
    Mask p(6, 6);
    Mask q(6, 6);
    p.at(0, 0) = 1;
    q.at(2, 3) = 1;
    const auto st = surface_distance_stats(p, q, Spacing2{0.5, 2.0});
    CHECK(st.hd_mm == doctest::Approx(std::sqrt(1.0 + 36.0)).epsilon(1e-15));
}

TEST_CASE("surface distances agree with the oracle on random masks") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> dim(1, 16);
    std::uniform_real_distribution<double> sp(0.3, 2.0);
    int checked = 0;
    while (checked < 100) {
        const int rows = dim(rng);
        const int cols = dim(rng);
        const Mask a = fixture::random_mask(rows, cols, 0.3, rng);
        const Mask b = fixture::random_mask(rows, cols, 0.3, rng);
        if (count_foreground(a) == 0 || count_foreground(b) == 0) continue;
        const Spacing2 s{sp(rng), sp(rng)};
        const auto st = surface_distance_stats(a, b, s);
        const auto ref = oracle::surface(a, b, s.row, s.col);
        CHECK(std::abs(st.msd_mm - ref.msd) < 1e-9);
        CHECK(std::abs(st.hd_mm - ref.hd) < 1e-9);
        CHECK(st.msd_mm <= st.hd_mm);
        const auto swapped = surface_distance_stats(b, a, s);
        CHECK(std::abs(swapped.msd_mm - st.msd_mm) < 1e-12);
        CHECK(swapped.hd_mm == st.hd_mm);
        ++checked;
    }
}

TEST_CASE("boundary pixels of a filled square") {
    const Mask m = fixture::filled_rect(5, 5, 1, 1, 4, 4);
    const auto b = boundary_pixels(m);
    CHECK(b.size() == 8);  // 3x3 square: all but the centre
    const Mask full(3, 3, 1);
    CHECK(boundary_pixels(full).size() == 8);  // image edge counts as background
}

TEST_CASE("3-D surface distances") {
    Grid3<std::uint8_t> a(3, 4, 4);
    Grid3<std::uint8_t> b(3, 4, 4);
    a.at(0, 0, 0) = 1;
    b.at(2, 0, 0) = 1;
    const auto st = surface_distance_stats(a, b, Spacing3{2.5, 1.0, 1.0});
    CHECK(st.hd_mm == 5.0);
    CHECK(st.msd_mm == 5.0);
    CHECK(surface_distance_stats(a, a, Spacing3{}).hd_mm == 0.0);
}

TEST_CASE("volumetric dice") {
    Grid3<std::uint8_t> gt(4, 6, 6);
    Grid3<std::uint8_t> pred(4, 6, 6);
    CHECK(volumetric_dice(gt, pred) == 1.0);
    // Equal-area slices, each with per-slice dice 1/2: volumetric dice is also 1/2.
    for (int s = 0; s < 4; ++s) {
        for (int c = 0; c < 4; ++c) gt.at(s, 1, c) = 1;
        for (int c = 2; c < 6; ++c) pred.at(s, 1, c) = 1;
    }
    CHECK(dice(pred.slice(0), gt.slice(0)) == 0.5);
    CHECK(volumetric_dice(pred, gt) == 0.5);
    CHECK(volumetric_dice(gt, gt) == 1.0);
    CHECK(volumetric_dice(Grid3<std::uint8_t>(4, 6, 6), gt) == 0.0);
    CHECK_THROWS_AS(volumetric_dice(Grid3<std::uint8_t>(3, 6, 6), gt), std::invalid_argument);
}

namespace {

PatientMasks patient(int slices, int rows, int cols, Spacing3 sp = Spacing3{3.0, 0.5, 0.5}) {
    return PatientMasks{Grid3<std::uint8_t>(slices, rows, cols), sp};
}

void paint(PatientMasks& p, int s, const Mask& m) { p.voxels.set_slice(s, m); }

}  // namespace

TEST_CASE("evaluate: perfect predictions") {
    std::map<std::string, PatientMasks> gt;
    gt["A"] = patient(3, 10, 10);
    paint(gt["A"], 1, fixture::ellipse(10, 10, 4.5, 4.5, 3, 2));
    const auto r = evaluate(gt, gt);
    CHECK(r.dsc_pct == 100.0);
    CHECK(r.msd_mm == 0.0);
    CHECK(r.hd_mm == 0.0);
    CHECK(r.vdsc_pct == 100.0);
    CHECK(r.n_cases == 1);
    CHECK(metrics_csv_header() == "DSC,MSD,HD,VDSC");
    CHECK(metrics_csv_row(r) == "100.00,0.00,0.00,100.00");
}

TEST_CASE("evaluate: two-patient toy set against per-formula recomputation") {
    std::map<std::string, PatientMasks> gt;
    std::map<std::string, PatientMasks> pred;
    gt["P1"] = patient(3, 12, 12);
    pred["P1"] = patient(3, 12, 12);
    gt["P2"] = patient(2, 12, 12, Spacing3{3.0, 1.0, 0.5});
    pred["P2"] = patient(2, 12, 12, Spacing3{3.0, 1.0, 0.5});

    const Mask g1 = fixture::filled_rect(12, 12, 2, 2, 8, 8);
    const Mask p1 = fixture::filled_rect(12, 12, 3, 3, 9, 9);
    const Mask g2 = fixture::filled_rect(12, 12, 4, 4, 7, 9);
    const Mask p2 = fixture::filled_rect(12, 12, 4, 5, 7, 10);
    const Mask g3 = fixture::filled_rect(12, 12, 1, 1, 5, 5);
    paint(gt["P1"], 0, g1);
    paint(pred["P1"], 0, p1);
    paint(gt["P1"], 1, g2);
    paint(pred["P1"], 1, p2);
    // slice 2 of P1 empty in both: excluded from the slice mean by default.
    paint(gt["P2"], 0, g3);  // missed entirely: dice 0, surface undefined
    paint(gt["P2"], 1, g1);
    paint(pred["P2"], 1, p2);

    const auto r = evaluate(pred, gt);
    const double d_slices[] = {oracle::dice(p1, g1), oracle::dice(p2, g2), 0.0, oracle::dice(p2, g1)};
    const double dsc = (d_slices[0] + d_slices[1] + d_slices[2] + d_slices[3]) / 4.0;
    CHECK(r.dsc_pct == doctest::Approx(100.0 * dsc).epsilon(1e-12));

    const auto s10 = oracle::surface(p1, g1, 0.5, 0.5);
    const auto s11 = oracle::surface(p2, g2, 0.5, 0.5);
    const auto s21 = oracle::surface(p2, g1, 1.0, 0.5);
    const double msd = ((s10.msd + s11.msd) / 2.0 + s21.msd) / 2.0;
    const double hd = ((s10.hd + s11.hd) / 2.0 + s21.hd) / 2.0;
    CHECK(r.msd_mm == doctest::Approx(msd).epsilon(1e-12));
    CHECK(r.hd_mm == doctest::Approx(hd).epsilon(1e-12));
    const double vdsc = (oracle::volumetric_dice(pred["P1"].voxels, gt["P1"].voxels) +
                         oracle::volumetric_dice(pred["P2"].voxels, gt["P2"].voxels)) /
                        2.0;
    CHECK(r.vdsc_pct == doctest::Approx(100.0 * vdsc).epsilon(1e-12));
    CHECK(r.n_surface_warnings == 1);
    for (const auto& c : r.cases) CHECK(c.msd_mm <= c.hd_mm);

    EvalOptions with_empty;
    with_empty.include_empty_slices = true;
    const auto r2 = evaluate(pred, gt, with_empty);
    CHECK(r2.dsc_pct == doctest::Approx(100.0 * (dsc * 4.0 + 1.0) / 5.0).epsilon(1e-12));

    EvalOptions three_d;
    three_d.surface_3d = true;
    const auto r3 = evaluate(pred, gt, three_d);
    CHECK(std::isfinite(r3.msd_mm));
    CHECK(r3.msd_mm <= r3.hd_mm);
}

TEST_CASE("evaluate: mismatched patient sets") {
    std::map<std::string, PatientMasks> gt;
    std::map<std::string, PatientMasks> pred;
    gt["A"] = patient(1, 4, 4);
    pred["B"] = patient(1, 4, 4);
    CHECK_THROWS_AS(evaluate(pred, gt), std::invalid_argument);
    pred.clear();
    pred["A"] = patient(2, 4, 4);
    CHECK_THROWS_AS(evaluate(pred, gt), std::invalid_argument);
}

TEST_CASE("evaluate: distances undefined when nothing is measurable") {
    std::map<std::string, PatientMasks> gt;
    std::map<std::string, PatientMasks> pred;
    gt["A"] = patient(1, 6, 6);
    pred["A"] = patient(1, 6, 6);
    paint(gt["A"], 0, fixture::filled_rect(6, 6, 1, 1, 3, 3));
    const auto r = evaluate(pred, gt);
    CHECK(r.dsc_pct == 0.0);
    CHECK(std::isnan(r.msd_mm));
    CHECK(std::isnan(r.hd_mm));
}

TEST_CASE("report json uses table column names") {
    MetricsReport r;
    r.dsc_pct = 67.84;
    nlohmann::json j = r;
    CHECK(j.contains("DSC"));
    CHECK(j.contains("MSD"));
    CHECK(j.contains("HD"));
    CHECK(j.contains("VDSC"));
    EvalOptions o;
    o.surface_3d = true;
    CHECK(nlohmann::json(o).get<EvalOptions>().surface_3d);
}
