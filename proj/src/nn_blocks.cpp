#include "ppon/nn_blocks.hpp"

#include <string>

#include "ppon/error.hpp"

namespace ppon {

Conv::Conv(const std::string& name, int cin, int cout, int kernel, Rng& rng, Conv2dOptions opt,
           float init_slope)
    : opt_(opt)
{
    Tensor w(Shape{cout, cin, kernel, kernel});
    kaiming_uniform(w, init_slope, rng);
    weight = Parameter(name + ".weight", std::move(w));
    bias = Parameter(name + ".bias", Tensor(Shape{cout, 1, 1, 1}));
}

void Conv::visit(const ParameterVisitor& fn)
{
    fn(weight);
    fn(bias);
}

void HffbConfig::validate() const
{
    if (k_dilations < 1)
        throw ConfigError("HFFB: k_dilations must be >= 1, got " + std::to_string(k_dilations));
    if (branch_channels < 1 || io_channels < 1)
        throw ConfigError("HFFB: channel widths must be >= 1");
    if (kernel < 1 || kernel % 2 == 0)
        throw ConfigError("HFFB: kernel must be odd, got " + std::to_string(kernel));
    if (!(residual_scaling > 0.0f && residual_scaling <= 1.0f))
        throw ConfigError("HFFB: residual_scaling must lie in (0, 1]");
}

void RrfbConfig::validate() const
{
    if (n_hffb < 1)
        throw ConfigError("RRFB: n_hffb must be >= 1, got " + std::to_string(n_hffb));
    hffb.validate();
}

Hffb::Hffb(const std::string& name, const HffbConfig& cfg, Rng& rng) : cfg_(cfg)
{
    cfg.validate();
    const int half = cfg.kernel / 2;
    for (int k = 1; k <= cfg.k_dilations; ++k)
        branches.emplace_back(name + ".branch" + std::to_string(k), cfg.io_channels, cfg.branch_channels,
                              cfg.kernel, rng, Conv2dOptions{1, half * k, k}, cfg.lrelu_slope);
    fuse = Conv(name + ".fuse", cfg.concat_width(), cfg.io_channels, 1, rng, {}, cfg.lrelu_slope);
    if (fuse.weight.value.shape().c != cfg.k_dilations * cfg.branch_channels ||
        fuse.weight.value.shape().n != cfg.io_channels)
        throw ConfigError("HFFB: fusion conv width does not match K * branch_channels");
}

void Hffb::check_input(const Tensor& x) const
{
    if (x.shape().c != cfg_.io_channels)
        throw ShapeError("HFFB: input has C=" + std::to_string(x.shape().c) + " channels, block expects " +
                         std::to_string(cfg_.io_channels));
}

Tensor Hffb::multi_scale_features(const Tensor& x) const
{
    check_input(x);
    std::vector<Tensor> prefix;
    prefix.reserve(branches.size());
    for (const Conv& branch : branches) {
        Tensor f = branch(x);
        prefix.push_back(prefix.empty() ? f : add(prefix.back(), f));
    }
    return concat_channels(prefix);
}

Tensor Hffb::forward(const Tensor& x) const
{
    Tensor fused = fuse(leaky_relu(multi_scale_features(x), cfg_.lrelu_slope));
    return add(x, scalar_mul(fused, cfg_.residual_scaling));
}

void Hffb::visit(const ParameterVisitor& fn)
{
    for (Conv& b : branches)
        b.visit(fn);
    fuse.visit(fn);
}

Rrfb::Rrfb(const std::string& name, const RrfbConfig& cfg, Rng& rng) : cfg_(cfg)
{
    cfg.validate();
    for (int i = 0; i < cfg.n_hffb; ++i)
        blocks.emplace_back(name + ".hffb" + std::to_string(i), cfg.hffb, rng);
}

Tensor Rrfb::forward(const Tensor& x) const
{
    Tensor h = x;
    for (const Hffb& b : blocks)
        h = b.forward(h);
    return add(x, scalar_mul(h, cfg_.residual_scaling));
}

void Rrfb::visit(const ParameterVisitor& fn)
{
    for (Hffb& b : blocks)
        b.visit(fn);
}

UpsampleHead::UpsampleHead(const std::string& name, int channels, int scale, float slope, Rng& rng)
    : slope_(slope)
{
    if (scale != 4)
        throw ConfigError("upsample head: only scale 4 is supported, got " + std::to_string(scale));
    up1 = Conv(name + ".up1", channels, channels * 4, 3, rng, {1, 1, 1}, slope);
    up2 = Conv(name + ".up2", channels, channels * 4, 3, rng, {1, 1, 1}, slope);
    out = Conv(name + ".out", channels, 3, 3, rng, {1, 1, 1}, 1.0f);
    // Small image-space output at init; keeps early residuals near zero.
    for (float& v : out.weight.value.mutable_data())
        v *= kOutputInitScale;
}

Tensor UpsampleHead::forward(const Tensor& x) const
{
    Tensor h = leaky_relu(pixel_shuffle(up1(x), 2), slope_);
    h = leaky_relu(pixel_shuffle(up2(h), 2), slope_);
    return out(h);
}

void UpsampleHead::visit(const ParameterVisitor& fn)
{
    up1.visit(fn);
    up2.visit(fn);
    out.visit(fn);
}

} // namespace ppon
