#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "ppon/data.hpp"
#include "ppon/error.hpp"
#include "support/oracles.hpp"

using namespace ppon;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name)
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

Tensor ramp(int h, int w)
{
    std::vector<float> v;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                v.push_back(float(c * 7 + y * w + x) / float(h * w + 14));
    return Tensor({1, 3, h, w}, std::move(v));
}

// Low-frequency image whose bicubic downscale stays well inside [0,1].
Tensor gentle(int size, std::uint64_t seed)
{
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(0.0, 6.283);
    const double p0 = u(g), p1 = u(g), p2 = u(g);
    std::vector<float> v;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                v.push_back(float(0.5 + 0.2 * std::sin(0.05 * x + p0 + c) * std::cos(0.07 * y + p1) +
                                  0.1 * std::sin(0.03 * (x + y) + p2)));
    return Tensor({1, 3, size, size}, std::move(v));
}

Tensor quantized(Shape s, std::uint64_t seed)
{
    std::mt19937_64 g(seed);
    std::vector<float> v(s.numel());
    for (float& e : v)
        e = float(g() % 256) / 255.0f;
    return Tensor(s, std::move(v));
}

} // namespace

TEST_CASE("bicubic: identity, DC preservation and the dense operator")
{
    std::mt19937_64 g(1);
    Tensor img = random_tensor({1, 3, 9, 7}, g, 0.0f, 1.0f);
    CHECK(oracle::max_abs_diff(bicubic_resize(img, 9, 7), img) <= 1e-6);

    Tensor flat({1, 3, 13, 11}, 0.37f);
    for (auto [h, w] : {std::pair{3, 3}, {26, 22}, {5, 40}, {1, 1}}) {
        Tensor r = bicubic_resize(flat, h, w);
        REQUIRE(r.shape() == Shape{1, 3, h, w});
        for (float v : r.data())
            CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
    }

    Tensor r8 = ramp(8, 8);
    CHECK(oracle::max_abs_diff(bicubic_resize(r8, 2, 2), oracle::dense_resize(r8, 2, 2)) <= 1e-6);
    Tensor rnd = random_tensor({1, 3, 10, 12}, g, 0.0f, 1.0f);
    CHECK(oracle::max_abs_diff(bicubic_resize(rnd, 40, 48), oracle::dense_resize(rnd, 40, 48)) <= 1e-6);
    CHECK(oracle::max_abs_diff(bicubic_resize(rnd, 5, 3), oracle::dense_resize(rnd, 5, 3)) <= 1e-6);
    CHECK_THROWS_AS(bicubic_resize(rnd, 0, 3), ShapeError);
}

TEST_CASE("awgn: identity at zero, statistics and determinism")
{
    Tensor half({1, 1, 256, 256}, 0.5f);
    CHECK(oracle::bit_equal(add_awgn(half, 0.0f, 3), half));

    Tensor noisy = add_awgn(half, 10.0f, 42);
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < half.numel(); ++i) {
        const double d = double(noisy.data()[i]) - 0.5;
        s += d;
        ss += d * d;
    }
    const double n = double(half.numel());
    const double sd = std::sqrt(ss / n - (s / n) * (s / n));
    CHECK(sd >= 0.95 * 10.0 / 255.0);
    CHECK(sd <= 1.05 * 10.0 / 255.0);

    CHECK(oracle::bit_equal(add_awgn(half, 10.0f, 42), noisy));
    CHECK_FALSE(oracle::bit_equal(add_awgn(half, 10.0f, 43), noisy));
    const Tensor heavy = add_awgn(Tensor({1, 1, 32, 32}, 0.99f), 50.0f, 1);
    for (float v : heavy.data()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK_THROWS_AS(add_awgn(half, -1.0f, 1), ConfigError);
}

TEST_CASE("degrade: quarter size, noise on the LR image only")
{
    Tensor hr = gentle(64, 2);
    Tensor lr = degrade(hr, {});
    CHECK(lr.shape() == Shape{1, 3, 16, 16});
    CHECK(oracle::max_abs_diff(lr, bicubic_resize(hr, 16, 16)) <= 1e-7);
    Tensor noisy = degrade(hr, {.scale = 4, .awgn_sigma = 10.0f, .noise_seed = 5});
    CHECK(oracle::bit_equal(noisy, add_awgn(lr, 10.0f, 5)));
    CHECK_THROWS_AS(degrade(gentle(62, 1), {}), ShapeError);
    CHECK(modcrop(gentle(62, 1), 4).shape() == Shape{1, 3, 60, 60});
}

TEST_CASE("patches: a 192x192 image has exactly one crop")
{
    PairSource src = PairSource::from_hr("card", gentle(192, 3), {});
    Rng rng(4);
    for (int i = 0; i < 5; ++i) {
        ImagePair p = sample_patch_pair(src, 192, rng);
        CHECK(p.lr_top == 0);
        CHECK(p.lr_left == 0);
        CHECK(oracle::bit_equal(p.hr, src.hr));
        CHECK(oracle::bit_equal(p.lr, src.lr));
        CHECK(p.lr.shape() == Shape{1, 3, 48, 48});
    }
    PairSource small = PairSource::from_hr("tiny.png", gentle(100, 3), {});
    try {
        sample_patch_pair(small, 192, rng);
        FAIL("expected an error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("tiny.png") != std::string::npos);
    }
}

TEST_CASE("patches: LR and HR crops are aligned and cover the image")
{
    PairSource src = PairSource::from_hr("big", gentle(400, 5), {});
    Rng rng(6);
    std::set<std::pair<int, int>> origins;
    for (int i = 0; i < 1000; ++i) {
        ImagePair p = sample_patch_pair(src, 192, rng);
        origins.insert({p.lr_top, p.lr_left});
        if (i < 20) {
            CHECK(p.hr.shape() == Shape{1, 3, 192, 192});
            CHECK(p.lr.shape() == Shape{1, 3, 48, 48});
            CHECK(oracle::bit_equal(p.hr, crop(src.hr, 4 * p.lr_top, 4 * p.lr_left, 192, 192)));
            CHECK(oracle::bit_equal(p.lr, crop(src.lr, p.lr_top, p.lr_left, 48, 48)));
        }
    }
    CHECK(origins.size() >= 50);
}

TEST_CASE("patches: interior LR crop equals the downscaled HR crop")
{
    // The degradation runs on the full image; away from the border the
    // bicubic support never reaches the crop edge, so both orders agree.
    PairSource src = PairSource::from_hr("g", gentle(320, 7), {});
    Rng rng(8);
    int interior = 0;
    for (int i = 0; i < 40 && interior < 5; ++i) {
        ImagePair p = sample_patch_pair(src, 96, rng);
        const int top = p.lr_top, left = p.lr_left;
        if (top < 4 || left < 4 || top + 24 > 80 - 4 || left + 24 > 80 - 4)
            continue;
        ++interior;
        // Downscale a margin-padded HR window, then trim the margin.
        Tensor window = crop(src.hr, 4 * (top - 2), 4 * (left - 2), 96 + 16, 96 + 16);
        Tensor lr = crop(bicubic_resize(window, 28, 28), 2, 2, 24, 24);
        CHECK(oracle::max_abs_diff(lr, p.lr) <= 1e-6);
    }
    CHECK(interior == 5);
}

TEST_CASE("augmentation: hand examples, involutions and identity")
{
    Tensor t({1, 1, 2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    CHECK(oracle::bit_equal(hflip(t), Tensor({1, 1, 2, 3}, std::vector<float>{3, 2, 1, 6, 5, 4})));
    CHECK(oracle::bit_equal(rot90(t, 1), Tensor({1, 1, 3, 2}, std::vector<float>{3, 6, 2, 5, 1, 4})));
    CHECK(oracle::bit_equal(rot90(t, 2), Tensor({1, 1, 2, 3}, std::vector<float>{6, 5, 4, 3, 2, 1})));

    std::mt19937_64 g(9);
    Tensor x = random_tensor({1, 3, 5, 7}, g);
    CHECK(oracle::bit_equal(hflip(hflip(x)), x));
    CHECK(oracle::bit_equal(rot90(rot90(rot90(rot90(x, 1), 1), 1), 1), x));
    CHECK(oracle::bit_equal(rot90(x, 3), rot90(rot90(x, 2), 1)));
    CHECK(oracle::bit_equal(rot90(x, 4), x));

    PairSource src = PairSource::from_hr("s", gentle(64, 10), {});
    Rng rng(11);
    ImagePair p = sample_patch_pair(src, 32, rng);
    ImagePair same = apply_augmentation(p, {});
    CHECK(oracle::bit_equal(same.lr, p.lr));
    CHECK(oracle::bit_equal(same.hr, p.hr));

    std::set<std::pair<bool, int>> seen;
    for (int i = 0; i < 64; ++i) {
        ImagePair a = augment(p, rng);
        seen.insert({a.augmentation.hflip, a.augmentation.rot90});
        ImagePair expect = apply_augmentation(p, a.augmentation);
        CHECK(oracle::bit_equal(a.lr, expect.lr));
        CHECK(oracle::bit_equal(a.hr, expect.hr));
        // Same transform on both sides: the LR still matches the HR layout.
        Tensor manual = a.augmentation.hflip ? hflip(p.hr) : p.hr;
        CHECK(oracle::bit_equal(a.hr, rot90(manual, a.augmentation.rot90)));
    }
    CHECK(seen.size() == 8);
}

TEST_CASE("png: byte rules, exhaustive byte round trip and errors")
{
    CHECK(to_byte(1.0f) == 255);
    CHECK(to_byte(0.5f) == 128);
    CHECK(to_byte(0.0f) == 0);
    CHECK(to_byte(-3.0f) == 0);
    CHECK(to_byte(7.0f) == 255);
    for (int b = 0; b < 256; ++b)
        CHECK(to_byte(float(b) / 255.0f) == b);

    TempDir dir("ppon_png_test");
    std::vector<float> v;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 256; ++i)
            v.push_back(float((i + 85 * c) % 256) / 255.0f);
    Tensor all({1, 3, 16, 16}, v);
    save_image(dir / "all.png", all);
    Tensor back = load_image(dir / "all.png");
    REQUIRE(back.shape() == all.shape());
    for (std::size_t i = 0; i < v.size(); ++i)
        CHECK(to_byte(back.data()[i]) == to_byte(v[i]));
    CHECK(oracle::bit_equal(back, all));

    Tensor q = quantized({1, 3, 13, 17}, 12);
    save_image(dir / "q.png", q);
    CHECK(oracle::bit_equal(load_image(dir / "q.png"), q));

    CHECK_THROWS_AS(load_image(dir / "missing.png"), IoError);
    {
        std::ofstream junk(dir / "junk.png");
        junk << "not a png";
    }
    try {
        load_image(dir / "junk.png");
        FAIL("expected an error");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("junk.png") != std::string::npos);
    }
    CHECK_THROWS_AS(save_image(dir / "bad.png", Tensor({1, 1, 4, 4})), ShapeError);
}

TEST_CASE("manifest: comments, relative paths and pre-degraded LR")
{
    TempDir dir("ppon_manifest_test");
    fs::create_directories(dir.path / "hr");
    fs::create_directories(dir.path / "lr");
    Tensor a = quantized({1, 3, 32, 32}, 13), b = quantized({1, 3, 48, 48}, 14);
    save_image(dir / "hr/a.png", a);
    save_image(dir / "hr/b.png", b);
    {
        std::ofstream m(dir / "list.txt");
        m << "# training images\n\nhr/a.png\n  \nhr/b.png\n";
    }
    DatasetManifest m = load_manifest(dir / "list.txt");
    REQUIRE(m.files.size() == 2);
    CHECK(m.files[1] == "hr/b.png");
    CHECK(oracle::bit_equal(load_image(m.hr_path(0)), a));
    CHECK_FALSE(m.lr_path(0).has_value());

    auto sources = load_pair_sources(m, {});
    REQUIRE(sources.size() == 2);
    CHECK(sources[1].lr.shape() == Shape{1, 3, 12, 12});
    CHECK(oracle::max_abs_diff(sources[0].lr, degrade(a, {})) <= 1e-7);

    // A supplied LR directory is used as-is.
    fs::create_directories(dir.path / "lr/hr");
    Tensor lr_a = quantized({1, 3, 8, 8}, 15), lr_b = quantized({1, 3, 12, 12}, 16);
    save_image(dir / "lr/hr/a.png", lr_a);
    save_image(dir / "lr/hr/b.png", lr_b);
    m.lr_dir = dir / "lr";
    CHECK(oracle::bit_equal(load_pair_source(m, 0, {}).lr, lr_a));
    save_image(dir / "lr/hr/b.png", quantized({1, 3, 10, 12}, 16));
    CHECK_THROWS_AS(load_pair_source(m, 1, {}), ShapeError);

    write_manifest(dir / "out.txt", {"x.png", "y.png"});
    std::ofstream(dir / "x.png") << "";
    CHECK(load_manifest(dir / "out.txt").files == std::vector<std::string>{"x.png", "y.png"});
    {
        std::ofstream e(dir / "empty.txt");
        e << "# nothing\n";
    }
    CHECK_THROWS_AS(load_manifest(dir / "empty.txt"), IoError);
    CHECK_THROWS_AS(load_manifest(dir / "nope.txt"), IoError);
}

TEST_CASE("patch dataset: samples depend only on seed and index")
{
    std::vector<PairSource> src{PairSource::from_hr("a", gentle(128, 17), {}),
                                PairSource::from_hr("b", gentle(160, 18), {})};
    PatchDataset d1(src, 64, true, 99), d2(src, 64, true, 99), d3(src, 64, true, 100);
    ImagePair late = d1.sample(37);
    for (std::uint64_t i = 0; i < 10; ++i)
        d1.sample(i);
    CHECK(oracle::bit_equal(d1.sample(37).hr, late.hr));
    CHECK(oracle::bit_equal(d2.sample(37).hr, late.hr));
    CHECK_FALSE(oracle::bit_equal(d3.sample(37).hr, late.hr));

    Batch b = d1.batch(3, 4);
    CHECK(b.hr.shape() == Shape{4, 3, 64, 64});
    CHECK(b.lr.shape() == Shape{4, 3, 16, 16});
    CHECK(oracle::bit_equal(batch_item(b.hr, 2), d1.sample(14).hr));
    CHECK(oracle::bit_equal(batch_item(b.lr, 0), d1.sample(12).lr));
    CHECK_THROWS_AS(PatchDataset(src, 192, false, 1), ShapeError);
}

TEST_CASE("synthetic cards are deterministic RGB images in range")
{
    for (int kind = 0; kind < 8; ++kind) {
        Tensor a = synthetic_image(kind, 64, 7), b = synthetic_image(kind, 64, 7);
        CHECK(a.shape() == Shape{1, 3, 64, 64});
        CHECK(oracle::bit_equal(a, b));
        float lo = 1.0f, hi = 0.0f;
        for (float v : a.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        CHECK(lo >= 0.0f);
        CHECK(hi <= 1.0f);
        CHECK(hi - lo > 0.2f);
    }
    CHECK_FALSE(oracle::bit_equal(synthetic_image(1, 64, 7), synthetic_image(1, 64, 8)));
}
