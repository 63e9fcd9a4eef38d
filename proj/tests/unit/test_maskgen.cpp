#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "common/fixtures.hpp"
#include "glandsynth/dataio.hpp"
#include "glandsynth/maskgen.hpp"
#include "glandsynth/png_io.hpp"
#include "glandsynth/preprocess.hpp"

using namespace gsyn;
using nn::Tensor;

namespace {

std::vector<Mask> phantom_masks(int size, int n_patients) {
    PreprocessConfig pc;
    pc.target_rows = size;
    pc.target_cols = size;
    std::vector<Mask> out;
    for (int p = 0; p < n_patients; ++p) {
        auto [v, m] = generate_phantom_case(500 + static_cast<std::uint64_t>(p), 12);
        for (auto& s : preprocess_case(v, &m, pc))
            if (count_foreground(s.mask) > 0) out.push_back(std::move(s.mask));
    }
    return out;
}

MaskGanConfig small_config(int res) {
    MaskGanConfig c;
    c.resolution = res;
    c.top_channels = 32;
    c.batch_size = 8;
    return c;
}

}  // namespace

TEST_CASE("latent sampler: length, determinism, standard-normal moments") {
    const auto a = sample_latent(4, 0);
    const auto b = sample_latent(4, 0);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a[i].z.size() == 100);
        CHECK(a[i].z == b[i].z);
    }
    CHECK_FALSE(sample_latent(1, 1)[0].z == a[0].z);

    const auto big = sample_latent(1000, 3);
    double sum = 0.0, sq = 0.0;
    for (const auto& v : big)
        for (float x : v.z) {
            sum += x;
            sq += static_cast<double>(x) * x;
        }
    const double n = 100000.0;
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) <= 0.02);
    CHECK(var >= 0.97);
    CHECK(var <= 1.03);

    const Tensor t = latents_to_tensor(a);
    CHECK(t.n() == 4);
    CHECK(t.c() == 100);
    CHECK(t.h() == 1);
    CHECK(t.w() == 1);
    CHECK(t.sample(2)[7] == a[2].z[7]);
}

TEST_CASE("config defaults, layer arithmetic, iteration count") {
    const MaskGanConfig c;
    CHECK(c.resolution == 256);
    CHECK(c.latent_dim == 100);
    CHECK(c.epochs == 1500);
    CHECK(c.batch_size == 32);
    CHECK(c.lr == 2e-4);
    CHECK(c.beta1 == 0.5);
    CHECK(c.upsampling_stages() == 6);
    const std::vector<int> plan{1024, 512, 256, 128, 64, 32, 1};
    for (int s = 0; s <= 6; ++s) CHECK(c.generator_channels(s) == plan[static_cast<std::size_t>(s)]);
    CHECK(c.total_iterations(100) == 1500 * 3);
    CHECK(c.total_iterations(10) == 1500);
    MaskGanConfig o = c;
    o.iterations = 150;
    CHECK(o.total_iterations(100) == 150);
    CHECK(nlohmann::json(o).get<MaskGanConfig>() == o);

    MaskGanConfig bad;
    bad.resolution = 96;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = MaskGanConfig{};
    bad.top_channels = 16;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = MaskGanConfig{};
    bad.real_label = 0.3f;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("full-size generator and discriminator shapes") {
    const MaskGanConfig c;
    MaskGenerator g(c, 1);
    CHECK(g.upsampling_stages() == 6);
    const Tensor y = g.forward(latents_to_tensor(sample_latent(2, 2)), nn::Mode::train);
    CHECK(y.n() == 2);
    CHECK(y.c() == 1);
    CHECK(y.h() == 256);
    CHECK(y.w() == 256);
    for (float v : y.values()) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }

    MaskDiscriminator d(c, 3);
    CHECK(d.downsampling_stages() == 6);
    CHECK(d.downsampling_stages() == g.upsampling_stages());
    std::mt19937_64 rng(4);
    std::vector<Mask> masks;
    for (int i = 0; i < 3; ++i) masks.push_back(fixture::random_mask(256, 256, 0.3, rng));
    const Tensor s = d.forward(masks_to_tensor(masks), nn::Mode::eval);
    CHECK(s.n() == 3);
    CHECK(s.size() == 3);
    CHECK_THROWS_AS(d.forward(Tensor(1, 1, 64, 64), nn::Mode::eval), std::invalid_argument);
}

TEST_CASE("stage counts follow the resolution") {
    for (int res : {8, 16, 32, 64, 128}) {
        MaskGanConfig c = small_config(res);
        c.top_channels = 64;
        MaskGenerator g(c, 1);
        MaskDiscriminator d(c, 1);
        const int expected = static_cast<int>(std::lround(std::log2(res / 4)));
        CHECK(g.upsampling_stages() == expected);
        CHECK(d.downsampling_stages() == expected);
        const Tensor y = g.forward(latents_to_tensor(sample_latent(1, 1)), nn::Mode::eval);
        CHECK(y.h() == res);
        CHECK(d.forward(y, nn::Mode::eval).size() == 1);
    }
}

TEST_CASE("rescaling convention round trip reproduces masks exactly") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const Mask m = fixture::random_mask(17, 23, 0.4, rng);
        const Tensor x = masks_to_tensor({m});
        for (float v : x.values()) CHECK((v == -1.0f || v == 1.0f));
        CHECK(binarize_generator_output(x.values(), 17, 23) == m);
    }
    const std::vector<float> plane{-1.0f, -0.2f, 0.0f, 0.2f};
    const Mask m = binarize_generator_output(plane, 2, 2, 0.5);
    CHECK(m.px == std::vector<std::uint8_t>{0, 0, 0, 1});
    CHECK_THROWS(binarize_generator_output(plane, 3, 3));
}

TEST_CASE("generate_masks: count, binarity, thresholds, determinism") {
    MaskGenerator g(small_config(32), 6);
    const auto a = generate_masks(g, 10, 7);
    REQUIRE(a.size() == 10);
    for (const auto& m : a) {
        CHECK(m.rows == 32);
        CHECK(m.cols == 32);
        for (auto v : m.px) CHECK(v <= 1);
    }
    CHECK(generate_masks(g, 10, 7) == a);
    for (const auto& m : generate_masks(g, 5, 7, 1.0)) CHECK(count_foreground(m) == 0);
    for (const auto& m : generate_masks(g, 5, 7, 0.0)) CHECK(count_foreground(m) == m.size());
    CHECK(generate_masks(g, 0, 7).empty());
    CHECK(generate_masks(g, 40, 7).size() == 40);
}

TEST_CASE("untrained discriminator sits near chance") {
    const auto real = phantom_masks(64, 2);
    MaskGanConfig c = small_config(64);
    MaskGenerator g(c, 8);
    MaskDiscriminator d(c, 9);
    const double acc = discriminator_accuracy(d, g, real, 32, 10);
    CHECK(acc >= 0.3);
    CHECK(acc <= 0.7);
}

TEST_CASE("training: finite losses, history length, determinism, errors") {
    const auto real = phantom_masks(32, 2);
    REQUIRE(real.size() >= 16);
    MaskGanConfig c = small_config(32);
    c.iterations = 200;
    long calls = 0;
    const MaskGan gan = train_mask_gan(real, c, 11, [&](long, double, double) { ++calls; });
    CHECK(calls == 200);
    CHECK(gan.history.d_loss.size() == 200);
    CHECK(gan.history.g_loss.size() == 200);
    for (double v : gan.history.d_loss) CHECK(std::isfinite(v));
    for (double v : gan.history.g_loss) CHECK(std::isfinite(v));

    MaskGanConfig e = small_config(32);
    e.iterations = 0;
    e.epochs = 2;
    const MaskGan by_epoch = train_mask_gan(real, e, 12);
    CHECK(static_cast<long>(by_epoch.history.d_loss.size()) == 2 * static_cast<long>(real.size() / 8));

    MaskGanConfig s = small_config(32);
    s.iterations = 15;
    s.generator_steps = 2;
    const MaskGan r1 = train_mask_gan(real, s, 13);
    const MaskGan r2 = train_mask_gan(real, s, 13);
    CHECK(r1.history.d_loss == r2.history.d_loss);
    CHECK(r1.history.g_loss == r2.history.g_loss);

    CHECK_THROWS_AS(train_mask_gan({}, s, 1), std::invalid_argument);
    CHECK_THROWS_AS(train_mask_gan({Mask(32, 32)}, s, 1), std::invalid_argument);
    CHECK_THROWS_AS(train_mask_gan({Mask(16, 16, 1)}, s, 1), std::invalid_argument);
}

TEST_CASE("generator checkpoint and mask export") {
    MaskGenerator g(small_config(32), 14);
    const auto dir = std::filesystem::temp_directory_path() / "gsyn_maskgen_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    save_mask_generator(dir / "g.ckpt", g, 14);
    MaskGenerator back = load_mask_generator(dir / "g.ckpt");
    CHECK(back.config() == g.config());
    const auto masks = generate_masks(g, 3, 15);
    CHECK(generate_masks(back, 3, 15) == masks);

    const auto paths = export_masks(dir, "r1", masks);
    REQUIRE(paths.size() == 3);
    CHECK(paths[1].filename() == "synthmask_r1_1.png");
    const Gray8 gray = read_png(paths[1]);
    CHECK(gray_to_mask(gray) == masks[1]);
    for (auto v : gray.px) CHECK((v == 0 || v == 255));
    std::filesystem::remove_all(dir);
}
