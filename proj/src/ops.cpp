#include "ppon/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ppon/error.hpp"

namespace ppon {

using detail::Node;

namespace {

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.numel() == 1 && b.numel() != 1)
        return b.shape();
    if (b.numel() == 1)
        return a.shape();
    check_same_shape(a, b, op);
    return a.shape();
}

// Elementwise binary op with scalar broadcast. `da`/`db` map (a, b, out) to the
// local partial derivative.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db)
{
    const Shape shape = broadcast_shape(a, b, name);
    const std::size_t n = shape.numel();
    const bool sa = a.numel() == 1 && n != 1;
    const bool sb = b.numel() == 1 && n != 1;
    std::vector<float> out(n);
    {
        const float* x = a.data().data();
        const float* y = b.data().data();
        for (std::size_t i = 0; i < n; ++i)
            out[i] = f(x[sa ? 0 : i], y[sb ? 0 : i]);
    }
    return make_result(shape, std::move(out), {a, b}, [=](Node& self) {
        const float* g = self.grad.data();
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const float* x = na.data.data();
        const float* y = nb.data.data();
        const float* o = self.data.data();
        if (na.requires_grad) {
            float* gx = na.accumulate_target();
            if (sa) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += double(g[i]) * da(x[0], y[sb ? 0 : i], o[i]);
                gx[0] += float(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i)
                    gx[i] += g[i] * da(x[i], y[sb ? 0 : i], o[i]);
            }
        }
        if (nb.requires_grad) {
            float* gy = nb.accumulate_target();
            if (sb) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += double(g[i]) * db(x[sa ? 0 : i], y[0], o[i]);
                gy[0] += float(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i)
                    gy[i] += g[i] * db(x[sa ? 0 : i], y[i], o[i]);
            }
        }
    });
}

// Elementwise unary op; `df` maps (x, out) to dout/dx.
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df)
{
    const std::size_t n = a.numel();
    std::vector<float> out(n);
    const float* x = a.data().data();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = f(x[i]);
    return make_result(a.shape(), std::move(out), {a}, [=](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        const float* g = self.grad.data();
        const float* xi = in.data.data();
        const float* o = self.data.data();
        for (std::size_t i = 0; i < n; ++i)
            gx[i] += g[i] * df(xi[i], o[i]);
    });
}

float stable_sigmoid(float x)
{
    if (x >= 0.0f)
        return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
}

std::size_t idx(const Shape& s, int n, int c, int h, int w)
{
    return ((std::size_t(n) * s.c + c) * s.h + h) * s.w + w;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "add", [](float x, float y) { return x + y; },
        [](float, float, float) { return 1.0f; }, [](float, float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "sub", [](float x, float y) { return x - y; },
        [](float, float, float) { return 1.0f; }, [](float, float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "mul", [](float x, float y) { return x * y; },
        [](float, float y, float) { return y; }, [](float x, float, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b)
{
    return binary(
        a, b, "div", [](float x, float y) { return x / y; },
        [](float, float y, float) { return 1.0f / y; },
        [](float, float y, float o) { return -o / y; });
}

Tensor scalar_mul(const Tensor& x, float s)
{
    return unary(
        x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor add_scalar(const Tensor& x, float s)
{
    return unary(
        x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor abs(const Tensor& x)
{
    return unary(
        x, [](float v) { return std::fabs(v); },
        [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor square(const Tensor& x)
{
    return unary(
        x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor log(const Tensor& x)
{
    return unary(
        x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor exp(const Tensor& x)
{
    return unary(
        x, [](float v) { return std::exp(v); }, [](float, float o) { return o; });
}

Tensor sigmoid(const Tensor& x)
{
    return unary(x, stable_sigmoid, [](float, float o) { return o * (1.0f - o); });
}

Tensor softplus(const Tensor& x)
{
    return unary(
        x, [](float v) { return std::max(v, 0.0f) + std::log1p(std::exp(-std::fabs(v))); },
        [](float v, float) { return stable_sigmoid(v); });
}

Tensor pow_scalar(const Tensor& x, float p)
{
    return unary(
        x, [p](float v) { return std::pow(v, p); },
        [p](float v, float o) { return p * o / v; });
}

Tensor clamp_min(const Tensor& x, float lo)
{
    return unary(
        x, [lo](float v) { return std::max(v, lo); },
        [lo](float v, float) { return v > lo ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float slope)
{
    if (!(slope >= 0.0f && slope <= 1.0f))
        throw ConfigError("leaky_relu: slope must lie in [0, 1], got " + std::to_string(slope));
    // Subgradient at exactly 0 is the slope.
    return unary(
        x, [slope](float v) { return v > 0.0f ? v : slope * v; },
        [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Tensor sum(const Tensor& x)
{
    double acc = 0.0;
    for (float v : x.data())
        acc += v;
    const std::size_t n = x.numel();
    return make_result(Shape{}, {float(acc)}, {x}, [n](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        const float g = self.grad[0];
        for (std::size_t i = 0; i < n; ++i)
            gx[i] += g;
    });
}

Tensor mean(const Tensor& x)
{
    double acc = 0.0;
    for (float v : x.data())
        acc += v;
    const std::size_t n = x.numel();
    return make_result(Shape{}, {float(acc / double(n))}, {x}, [n](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        const float g = float(double(self.grad[0]) / double(n));
        for (std::size_t i = 0; i < n; ++i)
            gx[i] += g;
    });
}

Tensor mean_hw(const Tensor& x)
{
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    const std::size_t planes = std::size_t(s.n) * s.c;
    std::vector<float> out(planes);
    const float* d = x.data().data();
    for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i)
            acc += d[p * plane + i];
        out[p] = float(acc / double(plane));
    }
    return make_result(Shape{s.n, s.c, 1, 1}, std::move(out), {x}, [plane, planes](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        for (std::size_t p = 0; p < planes; ++p) {
            const float g = float(double(self.grad[p]) / double(plane));
            for (std::size_t i = 0; i < plane; ++i)
                gx[p * plane + i] += g;
        }
    });
}

namespace {

// Shared index map for depth-to-space: element `i` of the shuffled tensor comes
// from element `map[i]` of the packed one.
std::vector<std::size_t> shuffle_map(const Shape& packed, int r)
{
    const int oc = packed.c / (r * r);
    const Shape out{packed.n, oc, packed.h * r, packed.w * r};
    std::vector<std::size_t> map(out.numel());
    std::size_t k = 0;
    for (int n = 0; n < out.n; ++n)
        for (int c = 0; c < oc; ++c)
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x) {
                    const int i = y % r;
                    const int j = x % r;
                    map[k++] = idx(packed, n, c * r * r + i * r + j, y / r, x / r);
                }
    return map;
}

Tensor permute(const Tensor& x, Shape out_shape, std::vector<std::size_t> map, bool gather)
{
    // gather: out[i] = in[map[i]]; scatter: out[map[i]] = in[i].
    std::vector<float> out(x.numel());
    const float* d = x.data().data();
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (gather)
            out[i] = d[map[i]];
        else
            out[map[i]] = d[i];
    }
    return make_result(out_shape, std::move(out), {x},
                       [map = std::move(map), gather](Node& self) {
                           Node& in = *self.inputs[0];
                           if (!in.requires_grad)
                               return;
                           float* gx = in.accumulate_target();
                           const float* g = self.grad.data();
                           for (std::size_t i = 0; i < map.size(); ++i) {
                               if (gather)
                                   gx[map[i]] += g[i];
                               else
                                   gx[i] += g[map[i]];
                           }
                       });
}

} // namespace

Tensor pixel_shuffle(const Tensor& x, int r)
{
    const Shape s = x.shape();
    if (r < 1 || s.c % (r * r) != 0)
        throw ShapeError("pixel_shuffle: channel count " + std::to_string(s.c) +
                         " is not divisible by r^2 = " + std::to_string(r * r));
    const Shape out{s.n, s.c / (r * r), s.h * r, s.w * r};
    return permute(x, out, shuffle_map(s, r), true);
}

Tensor pixel_unshuffle(const Tensor& x, int r)
{
    const Shape s = x.shape();
    if (r < 1 || s.h % r != 0 || s.w % r != 0)
        throw ShapeError("pixel_unshuffle: spatial size " + std::to_string(s.h) + "x" +
                         std::to_string(s.w) + " is not divisible by r = " + std::to_string(r));
    const Shape packed{s.n, s.c * r * r, s.h / r, s.w / r};
    return permute(x, packed, shuffle_map(packed, r), false);
}

Tensor concat_channels(std::span<const Tensor> parts)
{
    if (parts.empty())
        throw ShapeError("concat_channels: no inputs");
    Shape out = parts[0].shape();
    out.c = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.n != out.n)
            throw ShapeError("concat_channels: dimension N mismatch (" + std::to_string(s.n) +
                             " vs " + std::to_string(out.n) + ")");
        if (s.h != out.h)
            throw ShapeError("concat_channels: dimension H mismatch (" + std::to_string(s.h) +
                             " vs " + std::to_string(out.h) + ")");
        if (s.w != out.w)
            throw ShapeError("concat_channels: dimension W mismatch (" + std::to_string(s.w) +
                             " vs " + std::to_string(out.w) + ")");
        out.c += s.c;
    }
    const std::size_t plane = out.plane();
    std::vector<float> data(out.numel());
    std::vector<int> offsets;
    int c0 = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(c0);
        const int pc = p.shape().c;
        const float* src = p.data().data();
        for (int n = 0; n < out.n; ++n)
            std::copy_n(src + std::size_t(n) * pc * plane, pc * plane,
                        data.data() + (std::size_t(n) * out.c + c0) * plane);
        c0 += pc;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result(out, std::move(data), std::move(inputs),
                       [offsets, out, plane](Node& self) {
                           for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                               Node& in = *self.inputs[k];
                               if (!in.requires_grad)
                                   continue;
                               const int pc = in.shape.c;
                               float* gx = in.accumulate_target();
                               for (int n = 0; n < out.n; ++n) {
                                   const float* g =
                                       self.grad.data() + (std::size_t(n) * out.c + offsets[k]) * plane;
                                   float* dst = gx + std::size_t(n) * pc * plane;
                                   for (std::size_t i = 0; i < pc * plane; ++i)
                                       dst[i] += g[i];
                               }
                           }
                       });
}

Tensor crop(const Tensor& x, int top, int left, int height, int width)
{
    const Shape s = x.shape();
    if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > s.h || left + width > s.w)
        throw ShapeError("crop: window (" + std::to_string(top) + "," + std::to_string(left) + ") " +
                         std::to_string(height) + "x" + std::to_string(width) +
                         " exceeds input " + s.str());
    const Shape out{s.n, s.c, height, width};
    std::vector<float> data(out.numel());
    const float* d = x.data().data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < height; ++y)
                std::copy_n(d + idx(s, n, c, top + y, left), width, data.data() + idx(out, n, c, y, 0));
    return make_result(out, std::move(data), {x}, [s, out, top, left](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        for (int n = 0; n < out.n; ++n)
            for (int c = 0; c < out.c; ++c)
                for (int y = 0; y < out.h; ++y) {
                    const float* g = self.grad.data() + idx(out, n, c, y, 0);
                    float* dst = gx + idx(s, n, c, top + y, left);
                    for (int i = 0; i < out.w; ++i)
                        dst[i] += g[i];
                }
    });
}

Tensor pad(const Tensor& x, int amount)
{
    if (amount < 0)
        throw ShapeError("pad: negative amount " + std::to_string(amount));
    const Shape s = x.shape();
    const Shape out{s.n, s.c, s.h + 2 * amount, s.w + 2 * amount};
    std::vector<float> data(out.numel(), 0.0f);
    const float* d = x.data().data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                std::copy_n(d + idx(s, n, c, y, 0), s.w, data.data() + idx(out, n, c, y + amount, amount));
    return make_result(out, std::move(data), {x}, [s, out, amount](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h; ++y) {
                    const float* g = self.grad.data() + idx(out, n, c, y + amount, amount);
                    float* dst = gx + idx(s, n, c, y, 0);
                    for (int i = 0; i < s.w; ++i)
                        dst[i] += g[i];
                }
    });
}

Tensor reshape(const Tensor& x, Shape shape)
{
    if (shape.numel() != x.numel())
        throw ShapeError("reshape: " + x.shape().str() + " has " + std::to_string(x.numel()) +
                         " elements, target " + shape.str() + " has " + std::to_string(shape.numel()));
    std::vector<float> data(x.data().begin(), x.data().end());
    return make_result(shape, std::move(data), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            gx[i] += self.grad[i];
    });
}

Tensor avg_pool2(const Tensor& x)
{
    const Shape s = x.shape();
    if (s.h < 2 || s.w < 2)
        throw ShapeError("avg_pool2: spatial size " + s.str() + " is below 2x2");
    const Shape out{s.n, s.c, s.h / 2, s.w / 2};
    std::vector<float> data(out.numel());
    const float* d = x.data().data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < out.h; ++y)
                for (int w = 0; w < out.w; ++w) {
                    const float* r0 = d + idx(s, n, c, 2 * y, 2 * w);
                    const float* r1 = r0 + s.w;
                    data[idx(out, n, c, y, w)] = 0.25f * ((r0[0] + r0[1]) + (r1[0] + r1[1]));
                }
    return make_result(out, std::move(data), {x}, [s, out](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        for (int n = 0; n < out.n; ++n)
            for (int c = 0; c < out.c; ++c)
                for (int y = 0; y < out.h; ++y)
                    for (int w = 0; w < out.w; ++w) {
                        const float g = 0.25f * self.grad[idx(out, n, c, y, w)];
                        float* r0 = gx + idx(s, n, c, 2 * y, 2 * w);
                        float* r1 = r0 + s.w;
                        r0[0] += g;
                        r0[1] += g;
                        r1[0] += g;
                        r1[1] += g;
                    }
    });
}

Tensor max_pool2(const Tensor& x)
{
    const Shape s = x.shape();
    if (s.h < 2 || s.w < 2)
        throw ShapeError("max_pool2: spatial size " + s.str() + " is below 2x2");
    const Shape out{s.n, s.c, s.h / 2, s.w / 2};
    std::vector<float> data(out.numel());
    std::vector<std::size_t> arg(out.numel());
    const float* d = x.data().data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < out.h; ++y)
                for (int w = 0; w < out.w; ++w) {
                    std::size_t best = idx(s, n, c, 2 * y, 2 * w);
                    for (std::size_t cand : {best + 1, best + s.w, best + s.w + 1})
                        if (d[cand] > d[best])
                            best = cand;
                    const std::size_t o = idx(out, n, c, y, w);
                    data[o] = d[best];
                    arg[o] = best;
                }
    return make_result(out, std::move(data), {x}, [arg = std::move(arg)](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        for (std::size_t i = 0; i < arg.size(); ++i)
            gx[arg[i]] += self.grad[i];
    });
}

Tensor filter_valid(const Tensor& x, std::span<const float> taps_in)
{
    const Shape s = x.shape();
    const int t = int(taps_in.size());
    if (t < 1 || s.h < t || s.w < t)
        throw ShapeError("filter_valid: " + std::to_string(t) + "-tap window does not fit input " +
                         s.str());
    std::vector<float> taps(taps_in.begin(), taps_in.end());
    const Shape out{s.n, s.c, s.h - t + 1, s.w - t + 1};
    const std::size_t planes = std::size_t(s.n) * s.c;
    std::vector<float> data(out.numel());
    std::vector<double> tmp(std::size_t(out.h) * s.w);
    const float* d = x.data().data();
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = d + p * s.plane();
        for (int y = 0; y < out.h; ++y)
            for (int w = 0; w < s.w; ++w) {
                double acc = 0.0;
                for (int k = 0; k < t; ++k)
                    acc += double(taps[k]) * src[(y + k) * s.w + w];
                tmp[std::size_t(y) * s.w + w] = acc;
            }
        float* dst = data.data() + p * out.plane();
        for (int y = 0; y < out.h; ++y)
            for (int w = 0; w < out.w; ++w) {
                double acc = 0.0;
                for (int k = 0; k < t; ++k)
                    acc += double(taps[k]) * tmp[std::size_t(y) * s.w + w + k];
                dst[y * out.w + w] = float(acc);
            }
    }
    return make_result(out, std::move(data), {x}, [s, out, planes, taps](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad)
            return;
        float* gx = in.accumulate_target();
        const int t = int(taps.size());
        std::vector<double> gtmp(std::size_t(out.h) * s.w);
        for (std::size_t p = 0; p < planes; ++p) {
            const float* g = self.grad.data() + p * out.plane();
            std::fill(gtmp.begin(), gtmp.end(), 0.0);
            for (int y = 0; y < out.h; ++y)
                for (int w = 0; w < out.w; ++w)
                    for (int k = 0; k < t; ++k)
                        gtmp[std::size_t(y) * s.w + w + k] += double(taps[k]) * g[y * out.w + w];
            float* dst = gx + p * s.plane();
            for (int y = 0; y < s.h; ++y)
                for (int w = 0; w < s.w; ++w) {
                    double acc = 0.0;
                    const int k_lo = std::max(0, y - out.h + 1);
                    const int k_hi = std::min(t - 1, y);
                    for (int k = k_lo; k <= k_hi; ++k)
                        acc += double(taps[k]) * gtmp[std::size_t(y - k) * s.w + w];
                    dst[y * s.w + w] += float(acc);
                }
        }
    });
}

} // namespace ppon
