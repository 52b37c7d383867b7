#pragma once

#include <span>
#include <vector>

#include "ppon/tensor.hpp"

// Differentiable primitives. Binary elementwise ops need identical shapes, except
// that a one-element operand broadcasts against the other side.
namespace ppon {

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

/// im2col + sgemm convolution with zero padding. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

/// Direct nested-loop convolution, double accumulation, no autograd.
Tensor conv2d_reference(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        Conv2dOptions opt = {});

int conv_output_size(int in, int kernel, int stride, int padding, int dilation);

Tensor leaky_relu(const Tensor& x, float slope);
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, float s);
Tensor add_scalar(const Tensor& x, float s);

Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(1 + e^x), overflow-safe.
Tensor softplus(const Tensor& x);
/// x^p for positive x.
Tensor pow_scalar(const Tensor& x, float p);
/// max(x, lo); gradient passes only where x > lo.
Tensor clamp_min(const Tensor& x, float lo);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Per (n, c) mean over the spatial plane, shape [N,C,1,1].
Tensor mean_hw(const Tensor& x);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor crop(const Tensor& x, int top, int left, int height, int width);
Tensor pad(const Tensor& x, int amount);
Tensor reshape(const Tensor& x, Shape shape);

/// 2x2 average pooling, stride 2; odd trailing rows/cols are dropped.
Tensor avg_pool2(const Tensor& x);
Tensor max_pool2(const Tensor& x);

/// Separable depthwise filter with `taps` along H then W, no padding ("valid").
Tensor filter_valid(const Tensor& x, std::span<const float> taps);

} // namespace ppon
