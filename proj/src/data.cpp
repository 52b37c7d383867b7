#include "ppon/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ppon/error.hpp"
#include "ppon/ops.hpp"

namespace ppon {

namespace fs = std::filesystem;

std::uint8_t to_byte(float v)
{
    const float c = std::clamp(v, 0.0f, 1.0f);
    return std::uint8_t(std::lround(c * 255.0f));
}

Tensor load_image(const std::string& path)
{
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError("cannot decode PNG " + path + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw IoError("cannot decode PNG " + path + ": " + msg);
    }
    const int h = int(img.height);
    const int w = int(img.width);
    Tensor t(Shape{1, 3, h, w});
    auto d = t.mutable_data();
    const std::size_t plane = std::size_t(h) * w;
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            d[c * plane + i] = float(buf[i * 3 + c]) / 255.0f;
    return t;
}

void save_image(const std::string& path, const Tensor& image)
{
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3)
        throw ShapeError("save_image: expects a [1,3,H,W] tensor, got " + s.str());
    const std::size_t plane = s.plane();
    std::vector<std::uint8_t> buf(plane * 3);
    const auto d = image.data();
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            buf[i * 3 + c] = to_byte(d[c * plane + i]);
    const fs::path p(path);
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = png_uint_32(s.w);
    img.height = png_uint_32(s.h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path + ": " + img.message);
}

namespace {

double keys_cubic(double x)
{
    const double a = std::fabs(x);
    const double a2 = a * a;
    const double a3 = a2 * a;
    if (a <= 1.0)
        return 1.5 * a3 - 2.5 * a2 + 1.0;
    if (a <= 2.0)
        return -0.5 * a3 + 2.5 * a2 - 4.0 * a + 2.0;
    return 0.0;
}

struct Contribution {
    std::vector<int> index;
    std::vector<double> weight;
};

// Per-output-sample source indices and normalised weights along one axis.
std::vector<Contribution> contributions(int in, int out)
{
    const double scale = double(out) / double(in);
    const bool shrink = scale < 1.0;
    const double width = shrink ? 4.0 / scale : 4.0;
    const int taps = int(std::ceil(width)) + 2;
    std::vector<Contribution> result(out);
    for (int x = 1; x <= out; ++x) {
        const double u = x / scale + 0.5 * (1.0 - 1.0 / scale);
        const int left = int(std::floor(u - width / 2.0));
        Contribution& c = result[x - 1];
        double total = 0.0;
        for (int k = 0; k < taps; ++k) {
            const int j = left + k;  // 1-based source index
            const double wgt = shrink ? scale * keys_cubic(scale * (u - j)) : keys_cubic(u - j);
            if (wgt == 0.0)
                continue;
            c.index.push_back(std::clamp(j, 1, in) - 1);
            c.weight.push_back(wgt);
            total += wgt;
        }
        for (double& w : c.weight)
            w /= total;
    }
    return result;
}

} // namespace

Tensor bicubic_resize(const Tensor& img, int out_h, int out_w)
{
    if (out_h < 1 || out_w < 1)
        throw ShapeError("bicubic_resize: output size must be >= 1, got " + std::to_string(out_h) + "x" +
                         std::to_string(out_w));
    const Shape s = img.shape();
    const auto rows = contributions(s.h, out_h);
    const auto cols = contributions(s.w, out_w);
    Tensor out(Shape{s.n, s.c, out_h, out_w});
    auto o = out.mutable_data();
    const auto d = img.data();
    std::vector<double> tmp(std::size_t(out_h) * s.w);
    const std::size_t planes = std::size_t(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = d.data() + p * s.plane();
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < s.w; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < rows[y].index.size(); ++k)
                    acc += rows[y].weight[k] * src[std::size_t(rows[y].index[k]) * s.w + x];
                tmp[std::size_t(y) * s.w + x] = acc;
            }
        float* dst = o.data() + p * std::size_t(out_h) * out_w;
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < cols[x].index.size(); ++k)
                    acc += cols[x].weight[k] * tmp[std::size_t(y) * s.w + cols[x].index[k]];
                dst[std::size_t(y) * out_w + x] = float(acc);
            }
    }
    return out;
}

Tensor add_awgn(const Tensor& img, float sigma_255, std::uint64_t seed)
{
    if (sigma_255 < 0.0f)
        throw ConfigError("add_awgn: sigma must be >= 0, got " + std::to_string(sigma_255));
    Tensor out = img.clone();
    if (sigma_255 == 0.0f)
        return out;
    const double sigma = double(sigma_255) / 255.0;
    Rng rng(mix_seed(seed, 0xa3c9));
    auto uniform = [&] { return (double(rng() >> 11) + 0.5) * 0x1.0p-53; };
    auto d = out.mutable_data();
    // Box-Muller on the raw engine output keeps the noise stream library-independent.
    for (std::size_t i = 0; i < d.size(); i += 2) {
        const double r = std::sqrt(-2.0 * std::log(uniform()));
        const double t = 2.0 * std::numbers::pi * uniform();
        d[i] = std::clamp(float(d[i] + sigma * r * std::cos(t)), 0.0f, 1.0f);
        if (i + 1 < d.size())
            d[i + 1] = std::clamp(float(d[i + 1] + sigma * r * std::sin(t)), 0.0f, 1.0f);
    }
    return out;
}

std::string Degradation::describe() const
{
    std::ostringstream os;
    os << "bicubic_x" << scale;
    if (awgn_sigma > 0.0f)
        os << "+awgn(" << awgn_sigma << ")";
    return os.str();
}

Tensor modcrop(const Tensor& img, int scale)
{
    const Shape& s = img.shape();
    const int h = s.h - s.h % scale;
    const int w = s.w - s.w % scale;
    if (h < scale || w < scale)
        throw ShapeError("modcrop: image " + s.str() + " is smaller than the scale factor");
    if (h == s.h && w == s.w)
        return img;
    NoGradGuard guard;
    return crop(img, 0, 0, h, w);
}

Tensor degrade(const Tensor& hr, const Degradation& d)
{
    const Shape& s = hr.shape();
    if (s.h % d.scale != 0 || s.w % d.scale != 0)
        throw ShapeError("degrade: HR size " + s.str() + " is not a multiple of the scale " +
                         std::to_string(d.scale));
    Tensor lr = bicubic_resize(hr, s.h / d.scale, s.w / d.scale);
    for (float& v : lr.mutable_data())
        v = std::clamp(v, 0.0f, 1.0f);
    if (d.awgn_sigma > 0.0f)
        lr = add_awgn(lr, d.awgn_sigma, d.noise_seed);
    return lr;
}

Tensor hflip(const Tensor& img)
{
    const Shape s = img.shape();
    Tensor out(s);
    auto o = out.mutable_data();
    const auto d = img.data();
    const std::size_t rows = std::size_t(s.n) * s.c * s.h;
    for (std::size_t r = 0; r < rows; ++r)
        for (int x = 0; x < s.w; ++x)
            o[r * s.w + x] = d[r * s.w + (s.w - 1 - x)];
    return out;
}

Tensor rot90(const Tensor& img, int times)
{
    times = ((times % 4) + 4) % 4;
    Tensor cur = img;
    for (int t = 0; t < times; ++t) {
        const Shape s = cur.shape();
        Tensor out(Shape{s.n, s.c, s.w, s.h});
        auto o = out.mutable_data();
        const auto d = cur.data();
        const std::size_t planes = std::size_t(s.n) * s.c;
        for (std::size_t p = 0; p < planes; ++p) {
            const float* src = d.data() + p * s.plane();
            float* dst = o.data() + p * s.plane();
            // out[y][x] = in[x][W-1-y], out is W x H
            for (int y = 0; y < s.w; ++y)
                for (int x = 0; x < s.h; ++x)
                    dst[std::size_t(y) * s.h + x] = src[std::size_t(x) * s.w + (s.w - 1 - y)];
        }
        cur = out;
    }
    return times == 0 ? img.clone() : cur;
}

PairSource PairSource::from_hr(std::string name, const Tensor& hr, const Degradation& d)
{
    Tensor cropped = modcrop(hr, d.scale);
    return {std::move(name), cropped, degrade(cropped, d), d};
}

ImagePair sample_patch_pair(const PairSource& src, int hr_patch, Rng& rng)
{
    const int scale = src.degradation.scale;
    if (hr_patch % scale != 0)
        throw ConfigError("patch size " + std::to_string(hr_patch) + " is not a multiple of the scale");
    const Shape& hs = src.hr.shape();
    if (hs.h < hr_patch || hs.w < hr_patch)
        throw ShapeError("image " + src.name + " (" + std::to_string(hs.h) + "x" + std::to_string(hs.w) +
                         ") is smaller than the " + std::to_string(hr_patch) + "px patch");
    const int lp = hr_patch / scale;
    const Shape& ls = src.lr.shape();
    const int top = int(rng() % std::uint64_t(ls.h - lp + 1));
    const int left = int(rng() % std::uint64_t(ls.w - lp + 1));
    NoGradGuard guard;
    ImagePair pair;
    pair.lr = crop(src.lr, top, left, lp, lp);
    pair.hr = crop(src.hr, top * scale, left * scale, hr_patch, hr_patch);
    pair.degradation = src.degradation;
    pair.source = src.name;
    pair.lr_top = top;
    pair.lr_left = left;
    return pair;
}

ImagePair apply_augmentation(const ImagePair& pair, Augmentation a)
{
    ImagePair out = pair;
    if (a.hflip) {
        out.lr = hflip(out.lr);
        out.hr = hflip(out.hr);
    }
    out.lr = rot90(out.lr, a.rot90);
    out.hr = rot90(out.hr, a.rot90);
    out.augmentation = a;
    return out;
}

ImagePair augment(const ImagePair& pair, Rng& rng)
{
    const std::uint64_t r = rng();
    return apply_augmentation(pair, Augmentation{(r & 1u) != 0, int((r >> 1) & 3u)});
}

std::string DatasetManifest::hr_path(std::size_t i) const { return (fs::path(root) / files.at(i)).string(); }

std::optional<std::string> DatasetManifest::lr_path(std::size_t i) const
{
    if (!lr_dir)
        return std::nullopt;
    return (fs::path(*lr_dir) / files.at(i)).string();
}

DatasetManifest load_manifest(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open manifest " + path);
    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    std::string line;
    while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#')
            continue;
        const auto e = line.find_last_not_of(" \t\r");
        m.files.push_back(line.substr(b, e - b + 1));
    }
    if (m.files.empty())
        throw IoError("manifest " + path + " lists no images");
    return m;
}

void write_manifest(const std::string& path, const std::vector<std::string>& files)
{
    const fs::path p(path);
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write manifest " + path);
    for (const auto& f : files)
        out << f << '\n';
}

PairSource load_pair_source(const DatasetManifest& m, std::size_t i, const Degradation& d)
{
    Tensor hr = modcrop(load_image(m.hr_path(i)), d.scale);
    Degradation di = d;
    di.noise_seed = mix_seed(d.noise_seed, i);
    if (auto lr_path = m.lr_path(i)) {
        Tensor lr = load_image(*lr_path);
        if (lr.shape().h * d.scale != hr.shape().h || lr.shape().w * d.scale != hr.shape().w)
            throw ShapeError("LR image " + *lr_path + " is not 1/" + std::to_string(d.scale) +
                             " of its HR counterpart");
        return {m.files[i], hr, lr, di};
    }
    return PairSource{m.files[i], hr, degrade(hr, di), di};
}

std::vector<PairSource> load_pair_sources(const DatasetManifest& m, const Degradation& d)
{
    std::vector<PairSource> out;
    for (std::size_t i = 0; i < m.files.size(); ++i)
        out.push_back(load_pair_source(m, i, d));
    return out;
}

PatchDataset::PatchDataset(std::vector<PairSource> sources, int hr_patch, bool augment, std::uint64_t seed)
    : sources_(std::move(sources)), hr_patch_(hr_patch), augment_(augment), seed_(seed)
{
    if (sources_.empty())
        throw ConfigError("patch dataset needs at least one image");
    for (const auto& s : sources_)
        if (s.hr.shape().h < hr_patch || s.hr.shape().w < hr_patch)
            throw ShapeError("image " + s.name + " is smaller than the " + std::to_string(hr_patch) +
                             "px training patch");
}

ImagePair PatchDataset::sample(std::uint64_t index) const
{
    Rng rng(mix_seed(seed_, index));
    const PairSource& src = sources_[rng() % sources_.size()];
    ImagePair pair = sample_patch_pair(src, hr_patch_, rng);
    return augment_ ? augment(pair, rng) : pair;
}

Batch PatchDataset::batch(std::uint64_t iter, int batch_size) const
{
    std::vector<Tensor> lr, hr;
    for (int i = 0; i < batch_size; ++i) {
        ImagePair p = sample(iter * std::uint64_t(batch_size) + std::uint64_t(i));
        lr.push_back(p.lr);
        hr.push_back(p.hr);
    }
    return {stack_batch(lr), stack_batch(hr)};
}

Tensor stack_batch(const std::vector<Tensor>& items)
{
    if (items.empty())
        throw ShapeError("stack_batch: no items");
    Shape s = items[0].shape();
    s.n = 0;
    for (const Tensor& t : items) {
        if (t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w)
            throw ShapeError("stack_batch: items differ in shape (" + t.shape().str() + ")");
        s.n += t.shape().n;
    }
    std::vector<float> data;
    data.reserve(s.numel());
    for (const Tensor& t : items)
        data.insert(data.end(), t.data().begin(), t.data().end());
    return Tensor(s, std::move(data));
}

Tensor batch_item(const Tensor& batch, int n)
{
    const Shape& s = batch.shape();
    if (n < 0 || n >= s.n)
        throw ShapeError("batch_item: index " + std::to_string(n) + " outside batch of " + std::to_string(s.n));
    const std::size_t per = std::size_t(s.c) * s.plane();
    auto d = batch.data();
    return Tensor(Shape{1, s.c, s.h, s.w}, std::vector<float>(d.begin() + n * per, d.begin() + (n + 1) * per));
}

// ---------------------------------------------------------------------------
// Synthetic test cards

namespace {

struct Canvas {
    int size;
    std::vector<float> rgb;  // planar
    explicit Canvas(int s) : size(s), rgb(std::size_t(3) * s * s, 0.0f) {}
    float& at(int c, int y, int x) { return rgb[(std::size_t(c) * size + y) * size + x]; }
    void blend(int y, int x, const float col[3], float a)
    {
        if (y < 0 || x < 0 || y >= size || x >= size)
            return;
        for (int c = 0; c < 3; ++c)
            at(c, y, x) = at(c, y, x) * (1.0f - a) + col[c] * a;
    }
};

double unit(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }

void random_color(Rng& rng, float col[3])
{
    for (int c = 0; c < 3; ++c)
        col[c] = float(0.1 + 0.8 * unit(rng));
}

void draw_gradient(Canvas& cv, Rng& rng)
{
    const double fx = 1.0 + 3.0 * unit(rng), fy = 1.0 + 3.0 * unit(rng);
    for (int y = 0; y < cv.size; ++y)
        for (int x = 0; x < cv.size; ++x) {
            const double u = double(x) / cv.size, v = double(y) / cv.size;
            cv.at(0, y, x) = float(0.5 + 0.4 * std::sin(2 * std::numbers::pi * fx * u));
            cv.at(1, y, x) = float(0.2 + 0.6 * v);
            cv.at(2, y, x) = float(0.5 + 0.4 * std::cos(2 * std::numbers::pi * fy * (u + v) / 2));
        }
}

// A light and a dark colour, so edges between them always carry luma contrast.
void contrasting_colors(Rng& rng, float light[3], float dark[3])
{
    for (int c = 0; c < 3; ++c) {
        light[c] = float(0.6 + 0.3 * unit(rng));
        dark[c] = float(0.1 + 0.3 * unit(rng));
    }
}

void draw_checker(Canvas& cv, Rng& rng, int cell)
{
    float a[3], b[3];
    contrasting_colors(rng, a, b);
    for (int y = 0; y < cv.size; ++y)
        for (int x = 0; x < cv.size; ++x) {
            const float* col = ((y / cell + x / cell) % 2) ? a : b;
            for (int c = 0; c < 3; ++c)
                cv.at(c, y, x) = col[c];
        }
}

void draw_blobs(Canvas& cv, Rng& rng, int count)
{
    for (int i = 0; i < count; ++i) {
        float col[3];
        random_color(rng, col);
        const double cy = unit(rng) * cv.size, cx = unit(rng) * cv.size;
        const double sigma = 6.0 + 24.0 * unit(rng);
        for (int y = 0; y < cv.size; ++y)
            for (int x = 0; x < cv.size; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                cv.blend(y, x, col, float(std::exp(-d2 / (2 * sigma * sigma))));
            }
    }
}

void draw_glyphs(Canvas& cv, Rng& rng, int count)
{
    const float ink[3] = {0.08f, 0.08f, 0.12f};
    const int cell = 16;
    for (int i = 0; i < count; ++i) {
        const int gy = int(unit(rng) * (cv.size / cell)) * cell;
        const int gx = int(unit(rng) * (cv.size / cell)) * cell;
        // Up to four strokes per glyph inside a 12x12 box.
        const int strokes = 2 + int(rng() % 3);
        for (int s = 0; s < strokes; ++s) {
            const bool vertical = rng() & 1u;
            const int pos = 2 + int(rng() % 9);
            const int from = 2 + int(rng() % 4);
            const int to = 8 + int(rng() % 5);
            for (int t = from; t <= to; ++t)
                for (int thick = 0; thick < 2; ++thick) {
                    if (vertical)
                        cv.blend(gy + t, gx + pos + thick, ink, 1.0f);
                    else
                        cv.blend(gy + pos + thick, gx + t, ink, 1.0f);
                }
        }
    }
}

void draw_rings(Canvas& cv, Rng& rng)
{
    const double period = 10.0 + 10.0 * unit(rng);
    const double c = cv.size / 2.0;
    for (int y = 0; y < cv.size; ++y)
        for (int x = 0; x < cv.size; ++x) {
            const double r = std::hypot(y - c, x - c);
            const float v = std::cos(2 * std::numbers::pi * r / period) > 0.0 ? 0.85f : 0.15f;
            cv.at(0, y, x) = v;
            cv.at(1, y, x) = 1.0f - v;
            cv.at(2, y, x) = 0.5f;
        }
}

void draw_stripes(Canvas& cv, Rng& rng)
{
    const double angle = unit(rng) * std::numbers::pi;
    const double period = 8.0 + 8.0 * unit(rng);
    float a[3], b[3];
    contrasting_colors(rng, a, b);
    for (int y = 0; y < cv.size; ++y)
        for (int x = 0; x < cv.size; ++x) {
            const double t = x * std::cos(angle) + y * std::sin(angle);
            const float* col = std::fmod(t / period + 1000.0, 1.0) < 0.5 ? a : b;
            for (int c = 0; c < 3; ++c)
                cv.at(c, y, x) = col[c];
        }
}

void draw_rectangles(Canvas& cv, Rng& rng, int count)
{
    for (int i = 0; i < count; ++i) {
        float col[3];
        random_color(rng, col);
        const int y0 = int(unit(rng) * cv.size), x0 = int(unit(rng) * cv.size);
        const int h = 8 + int(unit(rng) * 64), w = 8 + int(unit(rng) * 64);
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x)
                cv.blend(y, x, col, 1.0f);
    }
}

} // namespace

Tensor synthetic_image(int kind, int size, std::uint64_t seed)
{
    Rng rng(mix_seed(seed, std::uint64_t(kind)));
    Canvas cv(size);
    std::fill(cv.rgb.begin(), cv.rgb.end(), 0.92f);
    switch (((kind % 8) + 8) % 8) {
    case 0:
        draw_gradient(cv, rng);
        draw_glyphs(cv, rng, 60);
        break;
    case 1: draw_checker(cv, rng, 12); break;
    case 2:
        draw_blobs(cv, rng, 12);
        draw_glyphs(cv, rng, 60);
        break;
    case 3: draw_glyphs(cv, rng, 160); break;
    case 4: draw_rings(cv, rng); break;
    case 5: draw_stripes(cv, rng); break;
    case 6: draw_rectangles(cv, rng, 40); break;
    case 7:
        draw_checker(cv, rng, 12);
        draw_blobs(cv, rng, 6);
        draw_glyphs(cv, rng, 60);
        break;
    }
    // Quantise so that a PNG round trip is exact.
    for (float& v : cv.rgb)
        v = float(to_byte(v)) / 255.0f;
    return Tensor(Shape{1, 3, size, size}, std::move(cv.rgb));
}

} // namespace ppon
