#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ppon/tensor.hpp"

namespace ppon {

/// Trainable tensor plus Adam moments. A frozen parameter does not require grad,
/// so no op ever computes a gradient for it.
struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;
    std::vector<float> adam_m;
    std::vector<float> adam_v;
    std::int64_t step_count = 0;

    Parameter() = default;
    Parameter(std::string name, Tensor value);

    void set_frozen(bool on);
    void reset_optimizer_state();
};

struct AdamOptions {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Bias-corrected Adam. Frozen parameters, and parameters that received no
/// gradient, are skipped. Grads are cleared afterwards.
void adam_step(std::span<Parameter* const> params, const AdamOptions& opt);

/// Deterministic 64-bit seed mixing (splitmix64 finaliser).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0);

using Rng = std::mt19937_64;

/// Kaiming-uniform (fan-in) fill for a conv weight [Cout, Cin, kH, kW], gain for
/// a leaky ReLU with the given slope.
void kaiming_uniform(Tensor& weight, float slope, Rng& rng);

} // namespace ppon
