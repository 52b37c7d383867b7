#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ppon/error.hpp"
#include "ppon/losses.hpp"
#include "support/oracles.hpp"

using namespace ppon;
using oracle::noisy;
using oracle::random_tensor;
using oracle::smooth_image;

namespace {

const double kLn2 = std::log(2.0);

Tensor image(Shape s, std::uint64_t seed)
{
    std::mt19937_64 g(seed);
    return random_tensor(s, g, 0.0f, 1.0f);
}

std::vector<double> to_double(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

struct DPlane {
    int c, h, w;
    std::vector<double> v;
};

// Feature extractor forward in double with direct convolution loops; conv
// layers only (the desk extractor has no pools, LReLU 0.2 on all but the tap).
DPlane extractor_ref(FeatureExtractor& fx, DPlane x)
{
    const auto& layers = fx.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& l = layers[li];
        const Conv& cv = fx.convs()[li];
        const int k = l.kernel, s = l.stride, p = l.padding;
        DPlane o{l.cout, (x.h + 2 * p - k) / s + 1, (x.w + 2 * p - k) / s + 1, {}};
        o.v.assign(std::size_t(o.c) * o.h * o.w, 0.0);
        for (int co = 0; co < o.c; ++co)
            for (int y = 0; y < o.h; ++y)
                for (int xx = 0; xx < o.w; ++xx) {
                    double acc = cv.bias.value.data()[co];
                    for (int ci = 0; ci < x.c; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y * s - p + ky, ix = xx * s - p + kx;
                                if (iy < 0 || ix < 0 || iy >= x.h || ix >= x.w)
                                    continue;
                                acc += x.v[(std::size_t(ci) * x.h + iy) * x.w + ix] * cv.weight.value.at(co, ci, ky, kx);
                            }
                    if (l.act == FeatureExtractor::Activation::LeakyRelu && acc < 0)
                        acc *= 0.2;
                    o.v[(std::size_t(co) * o.h + y) * o.w + xx] = acc;
                }
        x = std::move(o);
    }
    return x;
}

std::vector<double> beta_of(const MsWeights& w) { return {w.beta.begin(), w.beta.end()}; }
std::vector<double> omega_of(const MsWeights& w) { return {w.omega.begin(), w.omega.end()}; }

} // namespace

TEST_CASE("content loss: identity, constant offset and loop reference")
{
    Tensor x = image({2, 3, 8, 8}, 1);
    CHECK(content_loss(x, x).item() == 0.0f);
    CHECK(content_loss(add_scalar(x, 0.5f), x).item() == doctest::Approx(0.5).epsilon(1e-6));

    Tensor y = image({2, 3, 8, 8}, 2);
    double ref = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i)
        ref += std::abs(double(x.data()[i]) - y.data()[i]);
    ref /= double(x.numel());
    CHECK(std::abs(content_loss(x, y).item() - ref) <= 1e-7);
    CHECK(content_loss(x, y).item() > 0.0f);
    CHECK_THROWS_AS(content_loss(x, image({2, 3, 8, 9}, 3)), ShapeError);
}

TEST_CASE("ssim: window and constants")
{
    SsimParams p;
    auto taps = p.window();
    REQUIRE(taps.size() == 11);
    double sum = 0.0;
    for (float t : taps)
        sum += t;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(taps[5] > taps[4]);
    CHECK(taps[0] == doctest::Approx(taps[10]));
    CHECK(p.c1() == doctest::Approx(1e-4));
    CHECK(p.c2() == doctest::Approx(9e-4));
}

TEST_CASE("ssim: identity, symmetry and the constant closed form")
{
    Tensor x = image({1, 1, 24, 24}, 4);
    Tensor y = image({1, 1, 24, 24}, 5);
    CHECK(std::abs(ssim(x, x).ssim.item() - 1.0) <= 1e-6);
    CHECK(std::abs(ssim(x, y).ssim.item() - ssim(y, x).ssim.item()) <= 1e-7);

    Tensor zeros({1, 1, 16, 16}, 0.0f), ones({1, 1, 16, 16}, 1.0f);
    SsimResult r = ssim(zeros, ones);
    const double c1 = 1e-4;
    CHECK(std::abs(r.ssim.item() - c1 / (1.0 + c1)) <= 1e-7);
    CHECK(r.cs.item() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(ssim(Tensor({1, 1, 10, 10}), Tensor({1, 1, 10, 10})), ShapeError);
}

TEST_CASE("ssim: random 32x32 pair matches the direct windowed reference")
{
    Tensor x = image({1, 1, 32, 32}, 6);
    Tensor y = noisy(x, 0.2f, 7);
    oracle::SsimRef ref = oracle::ssim_ref(x, y);
    SsimResult r = ssim(x, y);
    CHECK(std::abs(r.ssim.item() - ref.ssim) <= 1e-6);
    CHECK(std::abs(r.cs.item() - ref.cs) <= 1e-6);

    // Channel averaging over RGB.
    Tensor a = image({2, 3, 20, 20}, 8), b = image({2, 3, 20, 20}, 9);
    CHECK(std::abs(ssim(a, b).ssim.item() - oracle::ssim_ref(a, b).ssim) <= 1e-6);
}

TEST_CASE("ms weights: published exponents and scale weights")
{
    MsWeights w = MsWeights::standard();
    CHECK(w.m_scales == 5);
    CHECK(w.beta_sum() == doctest::Approx(1.0001).epsilon(1e-6));
    CHECK(w.omega_sum() == doctest::Approx(2.0));
    CHECK(ms_min_size(w) == 176);

    MsWeights t = MsWeights::three_scale();
    CHECK(t.m_scales == 3);
    CHECK(t.beta_sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(t.beta[1] / t.beta[0] == doctest::Approx(0.2856 / 0.0448).epsilon(1e-5));
    CHECK(ms_min_size(t) == 44);

    CHECK(MsWeights::for_size(192).m_scales == 5);
    CHECK(MsWeights::for_size(96).m_scales == 3);
    CHECK_THROWS_AS(MsWeights({0.5f, 0.2f}, {1.0f, 1.0f}), ConfigError);
    CHECK_THROWS_AS(MsWeights({1.0f}, {1.0f, 1.0f}), ConfigError);
}

TEST_CASE("ms_ssim: identity and the 192x192 reference")
{
    MsWeights w = MsWeights::standard();
    Tensor x = smooth_image({1, 1, 192, 192}, 10);
    CHECK(std::abs(ms_ssim(x, x, w).item() - 1.0) <= 1e-6);

    Tensor y = noisy(x, 0.1f, 11);
    const double ref = oracle::ms_ssim_ref(x, y, beta_of(w));
    CHECK(std::abs(ms_ssim(x, y, w).item() - ref) <= 1e-5);
    CHECK_THROWS_AS(ms_ssim(Tensor({1, 1, 100, 100}), Tensor({1, 1, 100, 100}), w), ShapeError);
}

TEST_CASE("ms_ssim: three-scale variant on an RGB batch")
{
    MsWeights w = MsWeights::three_scale();
    Tensor x = smooth_image({2, 3, 64, 64}, 12);
    Tensor y = noisy(x, 0.15f, 13);
    CHECK(std::abs(ms_ssim(x, y, w).item() - oracle::ms_ssim_ref(x, y, beta_of(w))) <= 1e-5);
}

TEST_CASE("ms_l1: identity, constant offset and pyramid reference")
{
    MsWeights w = MsWeights::standard();
    Tensor x = image({1, 3, 176, 176}, 14);
    CHECK(ms_l1(x, x, w).item() == 0.0f);
    CHECK(ms_l1(add_scalar(x, 0.25f), x, w).item() == doctest::Approx(0.25 * 2.0).epsilon(1e-5));

    Tensor y = image({1, 3, 176, 176}, 15);
    CHECK(std::abs(ms_l1(x, y, w).item() - oracle::ms_l1_ref(x, y, omega_of(w))) <= 1e-6);
}

TEST_CASE("structure loss: identity, lambda 0 and non-negativity")
{
    MsWeights w = MsWeights::three_scale();
    Tensor x = smooth_image({1, 3, 48, 48}, 16);
    Tensor y = noisy(x, 0.1f, 17);
    CHECK(std::abs(structure_loss(x, x, w).total.item()) <= 1e-3);  // 1e3 * float rounding of 1 - ms_ssim
    CHECK(structure_loss(x, y, w, 0.0f).total.item() == ms_l1(x, y, w).item());
    StructureLossTerms t = structure_loss(x, y, w, 1e3f);
    CHECK(t.total.item() > 0.0f);
    CHECK(t.total.item() ==
          doctest::Approx(t.ms_l1.item() + 1e3 * (1.0 - t.ms_ssim.item())).epsilon(1e-5));
}

TEST_CASE("structure loss: gradient on an 80x80 patch matches finite differences")
{
    MsWeights w = MsWeights::for_size(80);
    Tensor hr = smooth_image({1, 3, 80, 80}, 18);
    // sr sits strictly above hr so the L1 terms stay away from their kink.
    std::mt19937_64 g(19);
    Tensor sr = add(add_scalar(hr, 0.05f), random_tensor(hr.shape(), g, 0.0f, 0.05f));
    // lambda scaled down so the float loss keeps enough digits for a central
    // difference; the gradient is linear in lambda.
    auto r = oracle::grad_check([&] { return structure_loss(sr, hr, w, 1.0f).total; }, {sr}, 24, 1e-2, 1e-2,
                                1e-5);
    INFO(r.worst);
    CHECK(r.ok());
}

TEST_CASE("ragan: symmetric start, perfect limit and swap identity")
{
    Tensor same({4, 1, 1, 1}, 0.7f);
    CHECK(ragan_d_loss(same, same).item() == doctest::Approx(2 * kLn2).epsilon(1e-6));
    CHECK(ragan_g_loss(same, same).item() == doctest::Approx(2 * kLn2).epsilon(1e-6));

    Tensor real({2, 1, 1, 1}, 200.0f), fake({2, 1, 1, 1}, -200.0f);
    const float d = ragan_d_loss(real, fake).item();
    CHECK(std::isfinite(d));
    CHECK(d <= 1e-6f);
    CHECK(std::isfinite(ragan_g_loss(real, fake).item()));
    CHECK(ragan_g_loss(real, fake).item() == doctest::Approx(800.0).epsilon(1e-6));

    std::mt19937_64 g(20);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor({4, 1, 1, 1}, g, -3, 3), b = random_tensor({4, 1, 1, 1}, g, -3, 3);
        CHECK(oracle::bit_equal(ragan_g_loss(a, b), ragan_d_loss(b, a)));
        CHECK(std::abs(ragan_d_loss(a, b).item() - oracle::ragan_d_ref(to_double(a), to_double(b))) <= 1e-6);
        CHECK(std::abs(ragan_g_loss(a, b).item() - oracle::ragan_g_ref(to_double(a), to_double(b))) <= 1e-6);
    }
    CHECK_THROWS(ragan_d_loss(Tensor(), same));
}

TEST_CASE("ragan: gradients match finite differences")
{
    std::mt19937_64 g(21);
    Tensor a = random_tensor({4, 1, 1, 1}, g, -2, 2), b = random_tensor({4, 1, 1, 1}, g, -2, 2);
    auto r = oracle::grad_check([&] { return ragan_d_loss(a, b); }, {a, b});
    INFO(r.worst);
    CHECK(r.ok());
    auto r2 = oracle::grad_check([&] { return ragan_g_loss(a, b); }, {a, b});
    INFO(r2.worst);
    CHECK(r2.ok());
}

TEST_CASE("perceptual loss: identity extractor is plain MAE")
{
    FeatureExtractor id = FeatureExtractor::identity();
    Tensor x = image({2, 3, 16, 16}, 22), y = image({2, 3, 16, 16}, 23);
    CHECK(perceptual_loss(x, x, id).item() == 0.0f);
    CHECK(perceptual_loss(x, y, id).item() == doctest::Approx(content_loss(x, y).item()).epsilon(1e-6));
    CHECK(oracle::bit_equal(id.features(x), x));
}

TEST_CASE("perceptual loss: desk extractor is deterministic and differentiable")
{
    FeatureExtractor fx = FeatureExtractor::desk();
    Tensor hr = image({1, 3, 32, 32}, 24);
    Tensor sr = noisy(hr, 0.2f, 25);
    CHECK(perceptual_loss(hr, hr, fx).item() == 0.0f);
    Tensor l1 = perceptual_loss(sr, hr, fx), l2 = perceptual_loss(sr, hr, FeatureExtractor::desk());
    CHECK(oracle::bit_equal(l1, l2));
    CHECK(l1.item() > 0.0f);

    // Double-precision reference forward, differenced with a tiny step.
    sr.set_requires_grad(true);
    backward(perceptual_loss(sr, hr, fx));
    const std::vector<float> analytic(sr.grad().begin(), sr.grad().end());
    const std::vector<double> base(sr.data().begin(), sr.data().end());
    const DPlane target = extractor_ref(fx, {3, 32, 32, {hr.data().begin(), hr.data().end()}});
    auto loss_ref = [&](const std::vector<double>& in) {
        const DPlane f = extractor_ref(fx, {3, 32, 32, in});
        double s = 0.0;
        for (std::size_t i = 0; i < f.v.size(); ++i)
            s += std::abs(f.v[i] - target.v[i]);
        return s / double(f.v.size());
    };
    std::mt19937_64 g(26);
    for (int k = 0; k < 16; ++k) {
        const std::size_t i = g() % base.size();
        auto plus = base, minus = base;
        plus[i] += 1e-7;
        minus[i] -= 1e-7;
        const double numeric = (loss_ref(plus) - loss_ref(minus)) / 2e-7;
        CAPTURE(i);
        CHECK(std::abs(analytic[i] - numeric) <= std::max(1e-7, 1e-2 * std::abs(numeric)));
    }

    // Float finite differences on a smaller input, where per-pixel gradients
    // stand well above the rounding noise of the loss.
    Tensor hr16 = image({1, 3, 16, 16}, 27);
    Tensor sr16 = noisy(hr16, 0.2f, 28);
    auto r = oracle::grad_check([&] { return perceptual_loss(sr16, hr16, fx); }, {sr16}, 24, 1e-3, 1e-2, 1e-5);
    INFO(r.worst);
    CHECK(r.ok());

    // Extractor weights never collect gradients.
    for (Conv& c : fx.convs()) {
        CHECK_FALSE(c.weight.value.has_grad());
        CHECK(c.weight.frozen);
    }
    CHECK_THROWS_AS(FeatureExtractor({{"a", false, 3, 3}}, "missing"), ConfigError);
}

TEST_CASE("feature extractor: save and load round trip")
{
    const auto path = std::filesystem::temp_directory_path() / "ppon_extractor_roundtrip.ckpt";
    FeatureExtractor fx = FeatureExtractor::desk(77);
    fx.input_mean = {0.485f, 0.456f, 0.406f};
    fx.input_std = {0.229f, 0.224f, 0.225f};
    fx.save(path.string());
    FeatureExtractor back = FeatureExtractor::load(path.string());
    Tensor x = image({1, 3, 32, 32}, 26);
    CHECK(oracle::bit_equal(fx.features(x), back.features(x)));
    CHECK(back.tap() == "stage5");
    std::filesystem::remove(path);
}

TEST_CASE("perception total: eta 0, symmetric logits and summation")
{
    FeatureExtractor fx = FeatureExtractor::desk();
    Tensor hr = image({2, 3, 32, 32}, 27), sr = image({2, 3, 32, 32}, 28);
    Tensor same({2, 1, 1, 1}, 0.3f);
    CHECK(perception_total(sr, hr, same, same, fx, 0.0f).total.item() == perceptual_loss(sr, hr, fx).item());
    CHECK(perception_total(hr, hr, same, same, fx).total.item() ==
          doctest::Approx(5e-3 * 2 * kLn2).epsilon(1e-6));

    std::mt19937_64 g(29);
    Tensor cr = random_tensor({2, 1, 1, 1}, g), cf = random_tensor({2, 1, 1, 1}, g);
    PerceptionLossTerms t = perception_total(sr, hr, cr, cf, fx, 5e-3f);
    const double expect = double(perceptual_loss(sr, hr, fx).item()) +
                          5e-3 * double(ragan_g_loss(cr, cf).item());
    CHECK(std::abs(t.total.item() - expect) <= 1e-7);
}

TEST_CASE("discriminator: grids, shapes and zero weights")
{
    CHECK(DiscriminatorConfig::vgg128().final_grid() == 4);
    CHECK(DiscriminatorConfig::vgg192().final_grid() == 6);
    CHECK(DiscriminatorConfig::desk(96).final_grid() == 6);

    Discriminator d(DiscriminatorConfig::desk(32), 3);
    Tensor x = image({7, 3, 32, 32}, 30);
    CHECK(d.forward(x).shape() == Shape{7, 1, 1, 1});
    CHECK_THROWS_AS(d.forward(image({1, 3, 24, 24}, 31)), ShapeError);

    d.visit([](Parameter& p) {
        for (float& v : p.value.mutable_data())
            v = 0.0f;
    });
    Tensor real = d.forward(x), fake = d.forward(image({7, 3, 32, 32}, 32));
    for (float v : real.data())
        CHECK(v == 0.0f);
    CHECK(ragan_d_loss(real, fake).item() == doctest::Approx(2 * kLn2).epsilon(1e-6));

    DiscriminatorConfig bad = DiscriminatorConfig::desk(30);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    DiscriminatorConfig back = DiscriminatorConfig::from_json(DiscriminatorConfig::vgg192().to_json());
    CHECK(back.ladder == DiscriminatorConfig::vgg192().ladder);
    CHECK(back.input_size == 192);
}

TEST_CASE("discriminator: gradient through two conv stages")
{
    DiscriminatorConfig cfg;
    cfg.input_size = 8;
    cfg.ladder = {{4, 1}, {4, 2}};
    cfg.dense_width = 6;
    Discriminator d(cfg, 33);
    Tensor x = image({2, 3, 8, 8}, 34);
    std::vector<Tensor> leaves{x};
    d.visit([&](Parameter& p) { leaves.push_back(p.value); });
    auto r = oracle::grad_check([&] { return mean(d.forward(x)); }, leaves, 12, 1e-3, 1e-2, 1e-4);
    INFO(r.worst);
    CHECK(r.ok());

    d.set_frozen(true);
    for (Parameter* p : d.parameters())
        CHECK_FALSE(p->value.requires_grad());
}
