#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "common/fixtures.hpp"
#include "common/oracles.hpp"
#include "glandsynth/dataio.hpp"
#include "glandsynth/maskgen.hpp"
#include "glandsynth/preprocess.hpp"
#include "glandsynth/synthesis.hpp"
#include "unit/gradcheck.hpp"

using namespace gsyn;
using nn::Tensor;

namespace {

Pix2PixConfig tiny(int res, NormKind norm = NormKind::instance) {
    Pix2PixConfig c;
    c.resolution = res;
    c.base_channels = 4;
    c.max_channels = 16;
    c.norm = norm;
    return c;
}

struct GeneratorLayer final : nn::Layer {
    TranslatorGenerator& g;
    explicit GeneratorLayer(TranslatorGenerator& gen) : g(gen) {}
    Tensor forward(const Tensor& x, nn::Mode m) override { return g.forward(x, m); }
    Tensor backward(const Tensor& d) override { return g.backward(d); }
    void collect_parameters(std::vector<nn::Parameter*>& out) override {
        for (auto* p : g.parameters()) out.push_back(p);
    }
    [[nodiscard]] std::string name() const override { return "generator"; }
};

struct DiscriminatorLayer final : nn::Layer {
    PatchDiscriminator& d;
    Tensor mask;
    DiscriminatorLayer(PatchDiscriminator& disc, Tensor m) : d(disc), mask(std::move(m)) {}
    Tensor forward(const Tensor& x, nn::Mode m) override { return d.forward(mask, x, m); }
    Tensor backward(const Tensor& g) override { return d.backward(g); }
    void collect_parameters(std::vector<nn::Parameter*>& out) override {
        for (auto* p : d.parameters()) out.push_back(p);
    }
    [[nodiscard]] std::string name() const override { return "discriminator"; }
};

SliceSample phantom_pair(int size) {
    auto [v, m] = generate_phantom_case(31, 8);
    PreprocessConfig pc;
    pc.target_rows = size;
    pc.target_cols = size;
    return preprocess_case(v, &m, pc)[4];
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("gsyn_synth_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("config defaults and layer arithmetic") {
    const Pix2PixConfig c;
    CHECK(c.epochs == 200);
    CHECK(c.batch_size == 1);
    CHECK(c.lr == 2e-4);
    CHECK(c.lambda_l1 == 100.0);
    CHECK(c.down_stages() == 8);
    CHECK(c.encoder_channels(0) == 64);
    CHECK(c.encoder_channels(3) == 512);
    CHECK(c.encoder_channels(7) == 512);
    CHECK(c.total_iterations(10) == 2000);
    CHECK(nlohmann::json(c).get<Pix2PixConfig>() == c);
    Pix2PixConfig b = tiny(64, NormKind::batch);
    b.iterations = 7;
    CHECK(nlohmann::json(b).get<Pix2PixConfig>() == b);
    CHECK(b.total_iterations(1000) == 7);

    Pix2PixConfig bad;
    bad.lambda_l1 = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = Pix2PixConfig{};
    bad.resolution = 48;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tiny(32);
    bad.disc_stride_layers = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("generator and patch discriminator shapes") {
    for (int res : {32, 64, 256}) {
        const Pix2PixConfig c = tiny(res);
        TranslatorGenerator g(c, 1);
        std::mt19937_64 rng(2);
        const Mask m = fixture::random_mask(res, res, 0.3, rng);
        const Tensor y = g.forward(masks_to_tensor({m}), nn::Mode::train);
        CHECK(y.n() == 1);
        CHECK(y.c() == 1);
        CHECK(y.h() == res);
        CHECK(y.w() == res);
        for (float v : y.values()) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
        const Image im = translate_mask(g, m);
        CHECK(im.rows == res);
        for (float v : im.px) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }

        PatchDiscriminator d(c, 3);
        const Tensor s = d.forward(masks_to_tensor({m, m}), images_to_tensor({im, im}), nn::Mode::train);
        CHECK(s.n() == 2);
        CHECK(s.h() == d.grid_size());
        CHECK(s.w() == d.grid_size());
        CHECK(d.grid_size() < res);
        CHECK(d.grid_size() >= 1);
    }
    Pix2PixConfig full;
    PatchDiscriminator d(full, 1);
    CHECK(d.grid_size() == 30);
    TranslatorGenerator g(tiny(64), 1);
    CHECK_THROWS_AS(g.forward(Tensor(1, 1, 32, 32), nn::Mode::eval), std::invalid_argument);
}

TEST_CASE("generator and discriminator gradients match central differences") {
    for (NormKind norm : {NormKind::none, NormKind::instance}) {
        Pix2PixConfig c = tiny(32, norm);
        c.base_channels = 2;
        c.max_channels = 4;
        TranslatorGenerator g(c, 4);
        GeneratorLayer gl(g);
        std::mt19937_64 rng(5);
        for (int trial = 0; trial < 3; ++trial) {
            const auto [pe, ie] = testutil::directional_grad_error(gl, testutil::random_tensor(1, 1, 32, 32, rng), rng,
                                                                 nn::Mode::train, 1e-4f);
            CHECK(pe < 2e-2);
            CHECK(ie < 2e-2);
        }
        PatchDiscriminator d(c, 6);
        DiscriminatorLayer dl(d, testutil::random_tensor(2, 1, 32, 32, rng));
        for (int trial = 0; trial < 3; ++trial) {
            const auto [pe, ie] = testutil::directional_grad_error(dl, testutil::random_tensor(2, 1, 32, 32, rng), rng,
                                                                 nn::Mode::train, 1e-4f);
            CHECK(pe < 2e-2);
            CHECK(ie < 2e-2);
        }
    }
}

TEST_CASE("single-pair overfit halves the L1 term and keeps structure") {
    const SliceSample pair = phantom_pair(64);
    REQUIRE(count_foreground(pair.mask) > 50);
    Pix2PixConfig c = tiny(64);
    c.base_channels = 8;
    c.max_channels = 64;
    c.iterations = 300;
    Pix2Pix model = train_translator({pair}, c, 7);
    const auto& l1 = model.history.g_l1;
    REQUIRE(l1.size() == 300);
    CHECK(l1[299] <= 0.5 * l1[9]);
    for (std::size_t i = 0; i < l1.size(); ++i) {
        CHECK(std::isfinite(model.history.d_loss[i]));
        CHECK(model.history.g_total[i] ==
              doctest::Approx(model.history.g_adv[i] + c.lambda_l1 * model.history.g_l1[i]));
    }

    // Brightest pixels of the synthesised image overlap the gland better than a random mask.
    const Image out = translate_mask(model.generator, pair.mask);
    const std::size_t area = count_foreground(pair.mask);
    std::vector<float> sorted = out.px;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() - area), sorted.end());
    const float cut = sorted[sorted.size() - area];
    Mask bright(64, 64);
    for (std::size_t i = 0; i < bright.size(); ++i) bright.px[i] = out.px[i] >= cut;
    std::mt19937_64 rng(8);
    std::vector<std::size_t> idx(bright.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    Mask random(64, 64);
    for (std::size_t i = 0; i < area; ++i) random.px[idx[i]] = 1;
    CHECK(oracle::dice(bright, pair.mask) > oracle::dice(random, pair.mask));
}

TEST_CASE("lambda zero drops the reconstruction term; training is deterministic") {
    const SliceSample pair = phantom_pair(32);
    Pix2PixConfig c = tiny(32);
    c.iterations = 6;
    c.lambda_l1 = 0.0;
    const Pix2Pix a = train_translator({pair, pair}, c, 9);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(a.history.g_total[i] == a.history.g_adv[i]);
        CHECK(a.history.g_l1[i] > 0.0);
    }
    c.lambda_l1 = 100.0;
    c.batch_size = 2;
    const Pix2Pix b1 = train_translator({pair, pair, pair}, c, 10);
    const Pix2Pix b2 = train_translator({pair, pair, pair}, c, 10);
    CHECK(b1.history.d_loss == b2.history.d_loss);
    CHECK(b1.history.g_total == b2.history.g_total);

    c.iterations = 0;
    c.epochs = 2;
    CHECK(train_translator({pair, pair, pair}, c, 11).history.d_loss.size() == 4);
    CHECK_THROWS_AS(train_translator({}, c, 1), std::invalid_argument);
    CHECK_THROWS_AS(train_translator({phantom_pair(64)}, c, 1), std::invalid_argument);
}

TEST_CASE("synthesize_pairs: accepted only, deterministic, provenance, export") {
    CurationStore store(CurationOptions{ScreenBounds{0.0, 1.0, 0.0}, true});
    std::vector<Mask> masks;
    for (int i = 0; i < 100; ++i)
        masks.push_back(fixture::ellipse(32, 32, 16, 15 + (i % 3), 5 + (i % 4), 7));
    masks.push_back(Mask(32, 32));  // empty: auto-rejected
    const auto ids = store.ingest_all(masks, "m");
    TranslatorGenerator g(tiny(32), 12);

    const std::vector<std::string> accepted(ids.begin(), ids.begin() + 100);
    const auto pairs = synthesize_pairs(g, store, accepted, "gan1", "tr1");
    REQUIRE(pairs.size() == 100);
    for (const auto& p : pairs)
        for (float v : p.image.px) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    CHECK(pairs[3].id == "syn_000003");
    CHECK(pairs[3].provenance == PairProvenance{"gan1", "m_000003", "tr1"});
    CHECK(pairs[3].mask == store.mask("m_000003"));

    const auto twice = synthesize_pairs(g, store, {"m_000005", "m_000005"}, "gan1", "tr1");
    CHECK(twice[0].image == twice[1].image);
    CHECK(twice[0].image == pairs[5].image);
    CHECK(synthesize_pairs(g, store, {}, "gan1", "tr1").empty());
    CHECK_THROWS_AS(synthesize_pairs(g, store, {"m_000100"}, "gan1", "tr1"), std::invalid_argument);
    CHECK_THROWS_AS(synthesize_pairs(g, store, {"nope"}, "gan1", "tr1"), UnknownCandidateError);

    TempDir dir;
    const auto manifest = export_pairs(dir.path, std::vector<SyntheticPair>(pairs.begin(), pairs.begin() + 4));
    CHECK(std::filesystem::exists(dir.path / "pair_syn_000002_mask.png"));
    CHECK(std::filesystem::exists(dir.path / "pair_syn_000002_t2.png"));
    const auto back = load_pairs(manifest);
    REQUIRE(back.size() == 4);
    CHECK(back[2].id == pairs[2].id);
    CHECK(back[2].mask == pairs[2].mask);
    CHECK(back[2].provenance == pairs[2].provenance);
    for (std::size_t i = 0; i < back[2].image.size(); ++i)
        CHECK(std::abs(back[2].image.px[i] - pairs[2].image.px[i]) <= 0.5f / 255.0f + 1e-6f);

    save_translator(dir.path / "t.ckpt", g, 12);
    TranslatorGenerator loaded = load_translator(dir.path / "t.ckpt");
    CHECK(loaded.config() == g.config());
    CHECK(translate_mask(loaded, masks[0]) == translate_mask(g, masks[0]));
}
