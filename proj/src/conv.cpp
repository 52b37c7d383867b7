#include <cblas.h>

#include <algorithm>
#include <cstring>
#include <string>

#include "ppon/error.hpp"
#include "ppon/ops.hpp"

namespace ppon {

using detail::Node;

int conv_output_size(int in, int kernel, int stride, int padding, int dilation)
{
    const int span = in + 2 * padding - dilation * (kernel - 1) - 1;
    if (span < 0)
        return 0;
    return span / stride + 1;
}

namespace {

struct ConvGeometry {
    int cin, h, w;
    int kh, kw;
    int stride, pad, dil;
    int ho, wo;

    int k_rows() const { return cin * kh * kw; }
    int cols() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

ConvGeometry make_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias,
                           Conv2dOptions opt)
{
    const Shape& x = input.shape();
    const Shape& k = weight.shape();
    if (opt.stride < 1)
        throw ConfigError("conv2d: stride must be >= 1, got " + std::to_string(opt.stride));
    if (opt.dilation < 1)
        throw ConfigError("conv2d: dilation must be >= 1, got " + std::to_string(opt.dilation));
    if (opt.padding < 0)
        throw ConfigError("conv2d: padding must be >= 0, got " + std::to_string(opt.padding));
    if (x.c != k.c)
        throw ShapeError("conv2d: input channels C=" + std::to_string(x.c) +
                         " do not match weight Cin=" + std::to_string(k.c));
    if (bias.defined() && bias.numel() != std::size_t(k.n))
        throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) +
                         " does not match Cout=" + std::to_string(k.n));
    ConvGeometry g{x.c, x.h, x.w, k.h, k.w, opt.stride, opt.padding, opt.dilation, 0, 0};
    g.ho = conv_output_size(x.h, k.h, opt.stride, opt.padding, opt.dilation);
    g.wo = conv_output_size(x.w, k.w, opt.stride, opt.padding, opt.dilation);
    if (g.ho < 1)
        throw ShapeError("conv2d: output height would be empty (H=" + std::to_string(x.h) +
                         ", kH=" + std::to_string(k.h) + ")");
    if (g.wo < 1)
        throw ShapeError("conv2d: output width would be empty (W=" + std::to_string(x.w) +
                         ", kW=" + std::to_string(k.w) + ")");
    return g;
}

// Valid output-column range [lo, hi) for which ox*stride + offset lands inside [0, w).
std::pair<int, int> valid_range(int offset, int stride, int w, int wo)
{
    int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
    int hi = w - offset <= 0 ? 0 : (w - offset - 1) / stride + 1;
    lo = std::min(lo, wo);
    hi = std::clamp(hi, lo, wo);
    return {lo, hi};
}

void im2col(const float* img, const ConvGeometry& g, float* col)
{
    const int P = g.cols();
    for (int c = 0; c < g.cin; ++c)
        for (int ki = 0; ki < g.kh; ++ki)
            for (int kj = 0; kj < g.kw; ++kj) {
                float* dst = col + std::size_t((c * g.kh + ki) * g.kw + kj) * P;
                const int xoff = kj * g.dil - g.pad;
                const auto [lo, hi] = valid_range(xoff, g.stride, g.w, g.wo);
                for (int oy = 0; oy < g.ho; ++oy) {
                    float* row = dst + std::size_t(oy) * g.wo;
                    const int iy = oy * g.stride - g.pad + ki * g.dil;
                    if (iy < 0 || iy >= g.h) {
                        std::fill_n(row, g.wo, 0.0f);
                        continue;
                    }
                    const float* src = img + (std::size_t(c) * g.h + iy) * g.w;
                    std::fill(row, row + lo, 0.0f);
                    if (g.stride == 1) {
                        std::memcpy(row + lo, src + lo + xoff, sizeof(float) * std::size_t(hi - lo));
                    } else {
                        for (int ox = lo; ox < hi; ++ox)
                            row[ox] = src[ox * g.stride + xoff];
                    }
                    std::fill(row + hi, row + g.wo, 0.0f);
                }
            }
}

void col2im_add(const float* col, const ConvGeometry& g, float* img)
{
    const int P = g.cols();
    for (int c = 0; c < g.cin; ++c)
        for (int ki = 0; ki < g.kh; ++ki)
            for (int kj = 0; kj < g.kw; ++kj) {
                const float* src = col + std::size_t((c * g.kh + ki) * g.kw + kj) * P;
                const int xoff = kj * g.dil - g.pad;
                const auto [lo, hi] = valid_range(xoff, g.stride, g.w, g.wo);
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki * g.dil;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    const float* row = src + std::size_t(oy) * g.wo;
                    float* dst = img + (std::size_t(c) * g.h + iy) * g.w;
                    for (int ox = lo; ox < hi; ++ox)
                        dst[ox * g.stride + xoff] += row[ox];
                }
            }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opt)
{
    const ConvGeometry g = make_geometry(input, weight, bias, opt);
    const int N = input.shape().n;
    const int cout = weight.shape().n;
    const int K = g.k_rows();
    const int P = g.cols();
    const std::size_t in_plane = std::size_t(g.cin) * g.h * g.w;
    const Shape out_shape{N, cout, g.ho, g.wo};

    std::vector<float> out(out_shape.numel());
    std::vector<float> col(g.pointwise() ? 0 : std::size_t(K) * P);
    const float* x = input.data().data();
    const float* wt = weight.data().data();
    for (int n = 0; n < N; ++n) {
        const float* cols = x + n * in_plane;
        if (!g.pointwise()) {
            im2col(cols, g, col.data());
            cols = col.data();
        }
        float* o = out.data() + std::size_t(n) * cout * P;
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, cout, P, K, 1.0f, wt, K, cols, P, 0.0f,
                    o, P);
        if (bias.defined()) {
            const float* b = bias.data().data();
            for (int c = 0; c < cout; ++c)
                std::for_each(o + std::size_t(c) * P, o + std::size_t(c + 1) * P,
                              [v = b[c]](float& e) { e += v; });
        }
    }

    std::vector<Tensor> inputs{input, weight};
    if (bias.defined())
        inputs.push_back(bias);
    return make_result(out_shape, std::move(out), std::move(inputs), [g, N, cout](Node& self) {
        Node& in = *self.inputs[0];
        Node& w = *self.inputs[1];
        Node* b = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
        const int K = g.k_rows();
        const int P = g.cols();
        const std::size_t in_plane = std::size_t(g.cin) * g.h * g.w;
        const float* gy = self.grad.data();

        if (b && b->requires_grad) {
            float* gb = b->accumulate_target();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < cout; ++c) {
                    const float* row = gy + (std::size_t(n) * cout + c) * P;
                    double acc = 0.0;
                    for (int p = 0; p < P; ++p)
                        acc += row[p];
                    gb[c] += float(acc);
                }
        }
        const bool need_w = w.requires_grad;
        const bool need_x = in.requires_grad;
        if (!need_w && !need_x)
            return;
        float* gw = need_w ? w.accumulate_target() : nullptr;
        float* gx = need_x ? in.accumulate_target() : nullptr;
        std::vector<float> col(g.pointwise() || !need_w ? 0 : std::size_t(K) * P);
        std::vector<float> dcol(g.pointwise() || !need_x ? 0 : std::size_t(K) * P);
        for (int n = 0; n < N; ++n) {
            const float* gyn = gy + std::size_t(n) * cout * P;
            if (need_w) {
                const float* cols = in.data.data() + n * in_plane;
                if (!g.pointwise()) {
                    im2col(cols, g, col.data());
                    cols = col.data();
                }
                cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, cout, K, P, 1.0f, gyn, P, cols, P,
                            1.0f, gw, K);
            }
            if (need_x) {
                float* gxn = gx + n * in_plane;
                if (g.pointwise()) {
                    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, P, cout, 1.0f, w.data.data(),
                                K, gyn, P, 1.0f, gxn, P);
                } else {
                    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, P, cout, 1.0f, w.data.data(),
                                K, gyn, P, 0.0f, dcol.data(), P);
                    col2im_add(dcol.data(), g, gxn);
                }
            }
        }
    });
}

Tensor conv2d_reference(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opt)
{
    const ConvGeometry g = make_geometry(input, weight, bias, opt);
    const Shape& xs = input.shape();
    const int cout = weight.shape().n;
    Tensor out(Shape{xs.n, cout, g.ho, g.wo});
    auto o = out.mutable_data();
    const auto x = input.data();
    const auto w = weight.data();
    std::size_t k = 0;
    for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < g.ho; ++oy)
                for (int ox = 0; ox < g.wo; ++ox) {
                    double acc = bias.defined() ? double(bias.data()[co]) : 0.0;
                    for (int ci = 0; ci < g.cin; ++ci)
                        for (int ki = 0; ki < g.kh; ++ki)
                            for (int kj = 0; kj < g.kw; ++kj) {
                                const int iy = oy * g.stride - g.pad + ki * g.dil;
                                const int ix = ox * g.stride - g.pad + kj * g.dil;
                                if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w)
                                    continue;
                                acc += double(x[((std::size_t(n) * g.cin + ci) * g.h + iy) * g.w + ix]) *
                                       double(w[((std::size_t(co) * g.cin + ci) * g.kh + ki) * g.kw + kj]);
                            }
                    o[k++] = float(acc);
                }
    return out;
}

} // namespace ppon
