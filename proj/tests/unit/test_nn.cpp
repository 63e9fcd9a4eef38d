#include <doctest.h>

#include <filesystem>
#include <random>

#include "glandsynth/errors.hpp"
#include "glandsynth/nn/checkpoint.hpp"
#include "glandsynth/nn/layers.hpp"
#include "glandsynth/nn/losses.hpp"
#include "glandsynth/nn/optim.hpp"
#include "unit/gradcheck.hpp"

using namespace gsyn;
using namespace gsyn::nn;
using testutil::max_grad_error;
using testutil::random_tensor;

namespace {

// Keeps values at least `gap` away from zero so kinks are not straddled by the difference step.
Tensor away_from_zero(Tensor t, float gap = 0.1f) {
    for (auto& v : t.values()) v = v >= 0 ? v + gap : v - gap;
    return t;
}

}  // namespace

TEST_CASE("conv2d gradients") {
    std::mt19937_64 rng(1);
    SUBCASE("3x3 same padding") {
        Conv2d conv(2, 3, 3, 1, 1, true, rng);
        CHECK(max_grad_error(conv, random_tensor(2, 2, 5, 6, rng), rng) < 1e-2);
    }
    SUBCASE("4x4 stride 2") {
        Conv2d conv(2, 2, 4, 2, 1, false, rng);
        CHECK(conv.out_size(8) == 4);
        CHECK(max_grad_error(conv, random_tensor(1, 2, 8, 8, rng), rng) < 1e-2);
    }
    SUBCASE("pointwise") {
        Conv2d conv(3, 2, 1, 1, 0, true, rng);
        CHECK(max_grad_error(conv, random_tensor(2, 3, 4, 4, rng), rng) < 1e-2);
    }
}

TEST_CASE("conv2d matches direct convolution") {
    std::mt19937_64 rng(2);
    Conv2d conv(2, 2, 3, 2, 1, true, rng);
    std::vector<Parameter*> p;
    conv.collect_parameters(p);
    const Tensor x = random_tensor(1, 2, 5, 5, rng);
    const Tensor y = conv.forward(x, Mode::eval);
    REQUIRE(y.h() == 3);
    for (int o = 0; o < 2; ++o) {
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                double s = p[1]->value[static_cast<std::size_t>(o)];
                for (int c = 0; c < 2; ++c) {
                    for (int a = 0; a < 3; ++a) {
                        for (int b = 0; b < 3; ++b) {
                            const int yy = i * 2 - 1 + a;
                            const int xx = j * 2 - 1 + b;
                            if (yy < 0 || yy >= 5 || xx < 0 || xx >= 5) continue;
                            s += p[0]->value[static_cast<std::size_t>(o * 18 + c * 9 + a * 3 + b)] * x.at(0, c, yy, xx);
                        }
                    }
                }
                CHECK(y.at(0, o, i, j) == doctest::Approx(s).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("transposed conv gradients and geometry") {
    std::mt19937_64 rng(3);
    ConvTranspose2d up(3, 2, 4, 2, 1, true, rng);
    CHECK(up.out_size(4) == 8);
    CHECK(max_grad_error(up, random_tensor(2, 3, 4, 4, rng), rng) < 1e-2);
    ConvTranspose2d up2(2, 2, 2, 2, 0, true, rng);
    CHECK(up2.out_size(3) == 6);
    CHECK(max_grad_error(up2, random_tensor(1, 2, 3, 3, rng), rng) < 1e-2);
}

TEST_CASE("transposed conv is the adjoint of conv") {
    // <conv(x), y> == <x, convT(y)> when both share the same kernel tensor.
    std::mt19937_64 rng(4);
    Conv2d conv(2, 3, 4, 2, 1, false, rng);
    ConvTranspose2d convt(3, 2, 4, 2, 1, false, rng);
    std::vector<Parameter*> pc;
    std::vector<Parameter*> pt;
    conv.collect_parameters(pc);
    convt.collect_parameters(pt);
    // conv weight [out=3, in=2*16]; transposed weight [in=3, out=2*16]: identical layout.
    pt[0]->value = pc[0]->value;
    const Tensor x = random_tensor(1, 2, 8, 8, rng);
    const Tensor y = random_tensor(1, 3, 4, 4, rng);
    CHECK(testutil::dot(conv.forward(x, Mode::eval), y) ==
          doctest::Approx(testutil::dot(x, convt.forward(y, Mode::eval))).epsilon(1e-5));
}

TEST_CASE("linear, reshape and activations") {
    std::mt19937_64 rng(5);
    Linear lin(12, 5, rng);
    CHECK(max_grad_error(lin, random_tensor(3, 3, 2, 2, rng), rng) < 1e-2);
    Reshape rs(2, 2, 3);
    const Tensor r = rs.forward(random_tensor(2, 12, 1, 1, rng), Mode::eval);
    CHECK(r.c() == 2);
    CHECK(r.w() == 3);
    ReLU relu;
    CHECK(max_grad_error(relu, away_from_zero(random_tensor(2, 2, 3, 3, rng)), rng) < 1e-3);
    LeakyReLU lrelu(0.2f);
    CHECK(max_grad_error(lrelu, away_from_zero(random_tensor(2, 2, 3, 3, rng)), rng) < 1e-3);
    Tanh th;
    CHECK(max_grad_error(th, random_tensor(2, 2, 3, 3, rng), rng) < 1e-2);
    Sigmoid sg;
    CHECK(max_grad_error(sg, random_tensor(2, 2, 3, 3, rng), rng) < 1e-2);
}

TEST_CASE("max pooling") {
    std::mt19937_64 rng(6);
    MaxPool2d pool;
    Tensor x(1, 1, 2, 2);
    x[0] = 1;
    x[1] = 4;
    x[2] = 3;
    x[3] = 2;
    const Tensor y = pool.forward(x, Mode::eval);
    CHECK(y.size() == 1);
    CHECK(y[0] == 4.0f);
    // Distinct, well-separated values so the step never changes the argmax.
    Tensor z(1, 2, 4, 4);
    std::vector<float> vals(z.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<float>(i) * 0.1f;
    std::shuffle(vals.begin(), vals.end(), rng);
    std::copy(vals.begin(), vals.end(), z.data());
    CHECK(max_grad_error(pool, z, rng, Mode::train, 1e-2f) < 1e-3);
}

TEST_CASE("normalisation layers") {
    std::mt19937_64 rng(7);
    SUBCASE("batch norm, train mode") {
        BatchNorm2d bn(3);
        CHECK(max_grad_error(bn, random_tensor(4, 3, 3, 3, rng), rng, Mode::train, 1e-2f, 5e-3) < 2e-2);
    }
    SUBCASE("batch norm output statistics") {
        BatchNorm2d bn(2);
        const Tensor y = bn.forward(random_tensor(4, 2, 5, 5, rng, 3.0f, 9.0f), Mode::train);
        for (int c = 0; c < 2; ++c) {
            double s = 0;
            double s2 = 0;
            for (int n = 0; n < 4; ++n)
                for (int i = 0; i < 25; ++i) {
                    const double v = y.at(n, c, i / 5, i % 5);
                    s += v;
                    s2 += v * v;
                }
            CHECK(s / 100 == doctest::Approx(0.0).epsilon(1e-5).scale(1.0));
            CHECK(s2 / 100 == doctest::Approx(1.0).epsilon(1e-3));
        }
    }
    SUBCASE("batch norm eval uses running statistics") {
        BatchNorm2d bn(1);
        const Tensor x = random_tensor(2, 1, 3, 3, rng);
        const Tensor y = bn.forward(x, Mode::eval);
        // Fresh running stats are mean 0, var 1.
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-5)));
        CHECK(max_grad_error(bn, x, rng, Mode::eval) < 1e-2);
    }
    SUBCASE("instance norm") {
        InstanceNorm2d in(2);
        CHECK(max_grad_error(in, random_tensor(2, 2, 4, 4, rng), rng, Mode::train, 1e-2f, 5e-3) < 2e-2);
    }
}

TEST_CASE("sequential chains backward through every stage") {
    std::mt19937_64 rng(8);
    Sequential s;
    s.emplace<Conv2d>(1, 2, 3, 1, 1, false, rng);
    s.emplace<BatchNorm2d>(2);
    s.emplace<LeakyReLU>(0.2f);
    s.emplace<Conv2d>(2, 1, 1, 1, 0, true, rng);
    s.emplace<Tanh>();
    CHECK(s.size() == 5);
    CHECK(max_grad_error(s, random_tensor(3, 1, 4, 4, rng), rng, Mode::train, 1e-2f, 5e-3) < 3e-2);
}

TEST_CASE("losses") {
    SUBCASE("bce with logits") {
        Tensor z(1, 1, 1, 2);
        z[0] = 0.0f;
        z[1] = 2.0f;
        const auto l1 = bce_with_logits(z, 1.0f);
        const double expected = (std::log(2.0) + std::log1p(std::exp(-2.0))) / 2.0;
        CHECK(l1.loss == doctest::Approx(expected));
        CHECK(l1.grad[0] == doctest::Approx((0.5 - 1.0) / 2.0));
        const auto l0 = bce_with_logits(z, 0.0f);
        CHECK(l0.loss == doctest::Approx((std::log(2.0) + 2.0 + std::log1p(std::exp(-2.0))) / 2.0));
        Tensor big(1, 1, 1, 1);
        big[0] = -200.0f;
        CHECK(std::isfinite(bce_with_logits(big, 1.0f).loss));
    }
    SUBCASE("l1") {
        Tensor a(1, 1, 1, 3);
        Tensor b(1, 1, 1, 3);
        a[0] = 1;
        a[1] = -1;
        a[2] = 0.5f;
        b[2] = 0.5f;
        const auto l = l1_loss(a, b);
        CHECK(l.loss == doctest::Approx(2.0 / 3.0));
        CHECK(l.grad[0] == doctest::Approx(1.0 / 3.0));
        CHECK(l.grad[1] == doctest::Approx(-1.0 / 3.0));
        CHECK(l.grad[2] == 0.0f);
        CHECK_THROWS_AS(l1_loss(a, Tensor(1, 1, 1, 2)), std::invalid_argument);
    }
}

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
    Parameter p(Tensor(1, 1, 1, 3));
    p.grad[0] = 0.5f;
    p.grad[1] = -3.0f;
    p.grad[2] = 0.0f;
    Adam opt({&p}, AdamOptions{0.1, 0.9, 0.999, 1e-8});
    opt.step();
    CHECK(p.value[0] == doctest::Approx(-0.1).epsilon(1e-5));
    CHECK(p.value[1] == doctest::Approx(0.1).epsilon(1e-5));
    CHECK(p.value[2] == 0.0f);
    CHECK(opt.steps() == 1);
}

TEST_CASE("adam minimises a quadratic") {
    Parameter p(Tensor(1, 1, 1, 1));
    p.value[0] = 5.0f;
    Adam opt({&p}, AdamOptions{0.1});
    for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        p.grad[0] = 2.0f * (p.value[0] - 2.0f);
        opt.step();
    }
    CHECK(p.value[0] == doctest::Approx(2.0).epsilon(1e-2));
}

TEST_CASE("checkpoint round trip") {
    std::mt19937_64 rng(9);
    const auto path = std::filesystem::temp_directory_path() / "gsyn_test_ckpt.bin";
    Tensor a = random_tensor(2, 3, 4, 5, rng);
    Tensor b = random_tensor(1, 1, 1, 7, rng);
    save_checkpoint(path, nlohmann::json{{"kind", "test"}, {"x", 3}}, {&a, &b});
    const auto ck = load_checkpoint(path);
    CHECK(ck.meta["x"] == 3);
    REQUIRE(ck.tensors.size() == 2);
    CHECK(ck.tensors[0] == a);
    CHECK(ck.tensors[1] == b);
    Tensor a2(2, 3, 4, 5);
    Tensor b2(1, 1, 1, 7);
    restore_tensors(ck.tensors, {&a2, &b2});
    CHECK(a2 == a);
    Tensor wrong(1, 1, 1, 6);
    CHECK_THROWS(restore_tensors(ck.tensors, {&a2, &wrong}));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("channel concat and split are inverse") {
    std::mt19937_64 rng(10);
    const Tensor a = random_tensor(2, 2, 3, 3, rng);
    const Tensor b = random_tensor(2, 3, 3, 3, rng);
    const Tensor c = concat_channels(a, b);
    CHECK(c.c() == 5);
    Tensor a2;
    Tensor b2;
    split_channels(c, 2, a2, b2);
    CHECK(a2 == a);
    CHECK(b2 == b);
}
