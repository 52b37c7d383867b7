#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ppon/ops.hpp"
#include "ppon/optim.hpp"

namespace ppon {

using ParameterVisitor = std::function<void(Parameter&)>;

/// Convolution layer with bias. Weights are Kaiming-uniform, biases zero.
class Conv {
public:
    Conv() = default;
    Conv(const std::string& name, int cin, int cout, int kernel, Rng& rng, Conv2dOptions opt = {},
         float init_slope = 0.2f);

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight.value, bias.value, opt_); }
    void visit(const ParameterVisitor& fn);
    const Conv2dOptions& options() const { return opt_; }

    Parameter weight;
    Parameter bias;

private:
    Conv2dOptions opt_;
};

struct HffbConfig {
    int k_dilations = 8;
    int branch_channels = 32;
    int io_channels = 64;
    int kernel = 3;
    float residual_scaling = 0.2f;
    float lrelu_slope = 0.2f;

    void validate() const;
    int concat_width() const { return k_dilations * branch_channels; }
    friend bool operator==(const HffbConfig&, const HffbConfig&) = default;
};

struct RrfbConfig {
    int n_hffb = 3;
    HffbConfig hffb;
    float residual_scaling = 0.2f;

    void validate() const;
    friend bool operator==(const RrfbConfig&, const RrfbConfig&) = default;
};

/// Hierarchical feature fusion block: K dilated 3x3 convs (rate k, pad k) whose
/// outputs are prefix-summed, concatenated, activated and fused by a 1x1 conv,
/// then added back to the input with residual scaling.
class Hffb {
public:
    Hffb(const std::string& name, const HffbConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;
    /// [f1, f1+f2, ..., f1+...+fK] before the activation.
    Tensor multi_scale_features(const Tensor& x) const;
    void visit(const ParameterVisitor& fn);
    const HffbConfig& config() const { return cfg_; }

    std::vector<Conv> branches;
    Conv fuse;

private:
    void check_input(const Tensor& x) const;
    HffbConfig cfg_;
};

/// Residual-in-residual fusion block: y = x + a * (HFFB_n o ... o HFFB_1)(x).
class Rrfb {
public:
    Rrfb(const std::string& name, const RrfbConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void visit(const ParameterVisitor& fn);
    const RrfbConfig& config() const { return cfg_; }

    std::vector<Hffb> blocks;

private:
    RrfbConfig cfg_;
};

/// Extra factor applied to the Kaiming init of the final RGB conv.
inline constexpr float kOutputInitScale = 0.1f;

/// Sub-pixel x4 reconstruction: two (conv -> shuffle(2) -> LReLU) stages and a
/// final conv to RGB.
class UpsampleHead {
public:
    UpsampleHead(const std::string& name, int channels, int scale, float slope, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void visit(const ParameterVisitor& fn);

    Conv up1, up2, out;

private:
    float slope_;
};

template <class Module>
std::size_t count_parameters(Module& m)
{
    std::size_t total = 0;
    m.visit([&](Parameter& p) { total += p.value.numel(); });
    return total;
}

} // namespace ppon
