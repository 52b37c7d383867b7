#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppon/nn_blocks.hpp"

namespace ppon {

/// L1 loss, mean over every element.
Tensor content_loss(const Tensor& sr, const Tensor& hr);

struct SsimParams {
    int window_size = 11;
    float window_sigma = 1.5f;
    float dynamic_range = 1.0f;

    float c1() const { return (0.01f * dynamic_range) * (0.01f * dynamic_range); }
    float c2() const { return (0.03f * dynamic_range) * (0.03f * dynamic_range); }
    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    std::vector<float> window() const;
};

struct SsimResult {
    Tensor ssim;  // mean of the l*cs map
    Tensor cs;    // mean of the cs map
};

/// Gaussian-window SSIM over a "valid" sliding window, computed per channel and
/// averaged. Both results are one-element tensors.
SsimResult ssim(const Tensor& x, const Tensor& y, const SsimParams& params = {});

/// Per-(n, c) SSIM and cs means, shape [N,C,1,1].
SsimResult ssim_per_channel(const Tensor& x, const Tensor& y, const SsimParams& params = {});

struct MsWeights {
    std::vector<float> beta;
    std::vector<float> omega;
    int m_scales = 5;

    MsWeights(std::vector<float> beta, std::vector<float> omega);

    /// Five scales with the published exponents and scale weights.
    static MsWeights standard();
    /// First three scales, exponents renormalised to sum to one, for patches
    /// below 176 px.
    static MsWeights three_scale();
    /// standard() when the image supports five scales, otherwise three_scale().
    static MsWeights for_size(int min_side, const SsimParams& params = {});

    float beta_sum() const;
    float omega_sum() const;
};

/// Smallest spatial side accepted by ms_ssim / ms_l1 for these weights.
int ms_min_size(const MsWeights& w, const SsimParams& params = {});

/// Multi-scale SSIM: cs_j^beta_j for j < M, and the full SSIM (luminance times
/// cs) raised to beta_M at the coarsest scale. Batch/channel mean.
Tensor ms_ssim(const Tensor& x, const Tensor& y, const MsWeights& w, const SsimParams& params = {});

/// Weighted sum of per-scale MAE over the same 2x2 average-pooling pyramid.
Tensor ms_l1(const Tensor& x, const Tensor& y, const MsWeights& w, const SsimParams& params = {});

struct StructureLossTerms {
    Tensor total;
    Tensor ms_l1;
    Tensor ms_ssim;
};

/// ms_l1 + lambda * (1 - ms_ssim).
StructureLossTerms structure_loss(const Tensor& sr_s, const Tensor& hr, const MsWeights& w,
                                  float lambda = 1e3f, const SsimParams& params = {});

/// Relativistic average discriminator loss on raw logits C(x), shape [N,...].
Tensor ragan_d_loss(const Tensor& c_real, const Tensor& c_fake);
/// Generator counterpart; defined as ragan_d_loss with the arguments swapped.
Tensor ragan_g_loss(const Tensor& c_real, const Tensor& c_fake);

/// Frozen convolutional feature map with a named tap point. Layers are convs
/// (optionally followed by an activation) or 2x2 max pools.
class FeatureExtractor {
public:
    enum class Activation { None, Relu, LeakyRelu };
    struct Layer {
        std::string name;
        bool is_pool = false;
        int cin = 0, cout = 0, kernel = 3, stride = 1, padding = 1;
        Activation act = Activation::None;
    };

    FeatureExtractor(std::vector<Layer> layers, std::string tap, std::uint64_t seed = 0);

    /// Five-stage strided CNN with fixed seeded weights.
    static FeatureExtractor desk(std::uint64_t seed = 0x5eed);
    /// One 1x1 conv with identity weights; features equal the input image.
    static FeatureExtractor identity();
    /// Reads a conv stack (e.g. exported VGG19 weights up to conv5_4) from a
    /// checkpoint container.
    static FeatureExtractor load(const std::string& path);
    void save(const std::string& path) const;

    Tensor features(const Tensor& image) const;
    const std::string& tap() const { return tap_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Conv>& convs() { return convs_; }
    nlohmann::json describe() const;

    /// Per-channel normalisation applied to the input, e.g. ImageNet mean/std.
    std::vector<float> input_mean{0.0f, 0.0f, 0.0f};
    std::vector<float> input_std{1.0f, 1.0f, 1.0f};

private:
    std::vector<Layer> layers_;
    std::vector<Conv> convs_;  // one per non-pool layer, in order
    std::string tap_;
    std::size_t tap_index_ = 0;
};

/// Mean absolute feature difference at the tap point (1/V normalisation).
/// Gradients flow into `sr` only.
Tensor perceptual_loss(const Tensor& sr, const Tensor& hr, const FeatureExtractor& extractor);

struct PerceptionLossTerms {
    Tensor total;
    Tensor perceptual;
    Tensor adversarial;
};

/// perceptual + eta * ragan_g_loss(c_real, c_fake).
PerceptionLossTerms perception_total(const Tensor& sr_p, const Tensor& hr, const Tensor& c_real,
                                     const Tensor& c_fake, const FeatureExtractor& extractor,
                                     float eta = 5e-3f);

struct DiscriminatorConfig {
    int input_size = 128;
    int in_channels = 3;
    /// (out_channels, stride) per conv, 3x3 kernels with padding 1.
    std::vector<std::pair<int, int>> ladder;
    int dense_width = 100;
    float lrelu_slope = 0.2f;

    /// 64-64-128-128-256-256-512-512-512-512, alternating stride 1/2: 128 -> 4x4.
    static DiscriminatorConfig vgg128();
    /// Same ladder on 192 inputs: 192 -> 6x6.
    static DiscriminatorConfig vgg192();
    /// Narrow ladder for desk-scale patches.
    static DiscriminatorConfig desk(int input_size);

    int final_grid() const;
    void validate() const;
    nlohmann::json to_json() const;
    static DiscriminatorConfig from_json(const nlohmann::json& j);
};

/// VGG-style discriminator returning raw logits C(x) of shape [N,1,1,1].
class Discriminator {
public:
    Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

    Tensor forward(const Tensor& image) const;
    void visit(const ParameterVisitor& fn);
    std::vector<Parameter*> parameters();
    void set_frozen(bool on);
    const DiscriminatorConfig& config() const { return cfg_; }

    std::vector<Conv> convs;
    Conv dense1;
    Conv dense2;

private:
    DiscriminatorConfig cfg_;
};

} // namespace ppon
