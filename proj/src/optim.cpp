#include "ppon/optim.hpp"

#include <cmath>

namespace ppon {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v))
{
    value.set_requires_grad(true);
    reset_optimizer_state();
}

void Parameter::set_frozen(bool on)
{
    frozen = on;
    value.set_requires_grad(!on);
    if (on)
        value.zero_grad();
}

void Parameter::reset_optimizer_state()
{
    adam_m.assign(value.numel(), 0.0f);
    adam_v.assign(value.numel(), 0.0f);
    step_count = 0;
}

void adam_step(std::span<Parameter* const> params, const AdamOptions& opt)
{
    for (Parameter* p : params) {
        if (p->frozen || !p->value.has_grad())
            continue;
        ++p->step_count;
        const double bc1 = 1.0 - std::pow(double(opt.beta1), double(p->step_count));
        const double bc2 = 1.0 - std::pow(double(opt.beta2), double(p->step_count));
        auto w = p->value.mutable_data();
        auto g = p->value.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const float gi = g[i];
            p->adam_m[i] = opt.beta1 * p->adam_m[i] + (1.0f - opt.beta1) * gi;
            p->adam_v[i] = opt.beta2 * p->adam_v[i] + (1.0f - opt.beta2) * gi * gi;
            const double m_hat = p->adam_m[i] / bc1;
            const double v_hat = p->adam_v[i] / bc2;
            w[i] -= float(opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps));
        }
        p->value.zero_grad();
    }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

void kaiming_uniform(Tensor& weight, float slope, Rng& rng)
{
    const Shape& s = weight.shape();
    const double fan_in = double(s.c) * s.h * s.w;
    const double gain = std::sqrt(2.0 / (1.0 + double(slope) * slope));
    const double bound = gain * std::sqrt(3.0 / fan_in);
    // Explicit affine map of the raw engine output so values do not depend on the
    // standard library's distribution implementation.
    for (float& v : weight.mutable_data()) {
        const double u = double(rng() >> 11) * 0x1.0p-53;
        v = float((2.0 * u - 1.0) * bound);
    }
}

} // namespace ppon
