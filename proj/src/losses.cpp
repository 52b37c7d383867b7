#include "ppon/losses.hpp"

#include <cmath>
#include <numeric>

#include "ppon/checkpoint.hpp"
#include "ppon/error.hpp"

namespace ppon {

Tensor content_loss(const Tensor& sr, const Tensor& hr)
{
    check_same_shape(sr, hr, "content_loss");
    return mean(abs(sub(sr, hr)));
}

std::vector<float> SsimParams::window() const
{
    std::vector<double> g(window_size);
    const double center = (window_size - 1) / 2.0;
    for (int i = 0; i < window_size; ++i) {
        const double d = i - center;
        g[i] = std::exp(-d * d / (2.0 * double(window_sigma) * window_sigma));
    }
    const double total = std::accumulate(g.begin(), g.end(), 0.0);
    std::vector<float> taps(window_size);
    for (int i = 0; i < window_size; ++i)
        taps[i] = float(g[i] / total);
    return taps;
}

namespace {

struct SsimMaps {
    Tensor ssim;
    Tensor cs;
};

SsimMaps ssim_maps(const Tensor& x, const Tensor& y, const SsimParams& p)
{
    check_same_shape(x, y, "ssim");
    const Shape& s = x.shape();
    if (s.h < p.window_size || s.w < p.window_size)
        throw ShapeError("ssim: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " is smaller than the " + std::to_string(p.window_size) + "-pixel window");
    const std::vector<float> taps = p.window();
    Tensor mu_x = filter_valid(x, taps);
    Tensor mu_y = filter_valid(y, taps);
    Tensor e_xx = filter_valid(mul(x, x), taps);
    Tensor e_yy = filter_valid(mul(y, y), taps);
    Tensor e_xy = filter_valid(mul(x, y), taps);

    Tensor mu_xx = mul(mu_x, mu_x);
    Tensor mu_yy = mul(mu_y, mu_y);
    Tensor mu_xy = mul(mu_x, mu_y);
    Tensor var_x = sub(e_xx, mu_xx);
    Tensor var_y = sub(e_yy, mu_yy);
    Tensor cov = sub(e_xy, mu_xy);

    Tensor lum = div(add_scalar(scalar_mul(mu_xy, 2.0f), p.c1()), add_scalar(add(mu_xx, mu_yy), p.c1()));
    Tensor cs = div(add_scalar(scalar_mul(cov, 2.0f), p.c2()), add_scalar(add(var_x, var_y), p.c2()));
    return {mul(lum, cs), cs};
}

// Floor for the per-scale terms before exponentiation; keeps x^beta and its
// gradient finite when structure is anti-correlated.
constexpr float kMsFloor = 1e-6f;

} // namespace

SsimResult ssim(const Tensor& x, const Tensor& y, const SsimParams& params)
{
    SsimMaps m = ssim_maps(x, y, params);
    return {mean(m.ssim), mean(m.cs)};
}

SsimResult ssim_per_channel(const Tensor& x, const Tensor& y, const SsimParams& params)
{
    SsimMaps m = ssim_maps(x, y, params);
    return {mean_hw(m.ssim), mean_hw(m.cs)};
}

MsWeights::MsWeights(std::vector<float> b, std::vector<float> o)
    : beta(std::move(b)), omega(std::move(o)), m_scales(int(beta.size()))
{
    if (beta.empty() || beta.size() != omega.size())
        throw ConfigError("MsWeights: beta and omega must be non-empty and of equal length");
    if (std::fabs(beta_sum() - 1.0f) > 1e-3f)
        throw ConfigError("MsWeights: beta exponents must sum to 1 (within 1e-3), got " +
                          std::to_string(beta_sum()));
}

MsWeights MsWeights::standard()
{
    return MsWeights({0.0448f, 0.2856f, 0.3001f, 0.2363f, 0.1333f}, {1.0f, 0.5f, 0.25f, 0.125f, 0.125f});
}

MsWeights MsWeights::three_scale()
{
    const MsWeights s = standard();
    const float total = s.beta[0] + s.beta[1] + s.beta[2];
    return MsWeights({s.beta[0] / total, s.beta[1] / total, s.beta[2] / total},
                     {s.omega[0], s.omega[1], s.omega[2]});
}

MsWeights MsWeights::for_size(int min_side, const SsimParams& params)
{
    MsWeights s = standard();
    if (min_side >= ms_min_size(s, params))
        return s;
    return three_scale();
}

float MsWeights::beta_sum() const { return std::accumulate(beta.begin(), beta.end(), 0.0f); }
float MsWeights::omega_sum() const { return std::accumulate(omega.begin(), omega.end(), 0.0f); }

int ms_min_size(const MsWeights& w, const SsimParams& params)
{
    return params.window_size * (1 << (w.m_scales - 1));
}

namespace {
void check_ms_size(const Tensor& x, const MsWeights& w, const SsimParams& params, const char* op)
{
    const int need = ms_min_size(w, params);
    const Shape& s = x.shape();
    if (s.h < need || s.w < need)
        throw ShapeError(std::string(op) + ": " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " image is too small for " + std::to_string(w.m_scales) + " scales (needs >= " +
                         std::to_string(need) + " px); reduce the number of scales");
}
} // namespace

Tensor ms_ssim(const Tensor& x, const Tensor& y, const MsWeights& w, const SsimParams& params)
{
    check_same_shape(x, y, "ms_ssim");
    check_ms_size(x, w, params, "ms_ssim");
    Tensor xj = x;
    Tensor yj = y;
    Tensor product;
    for (int j = 0; j < w.m_scales; ++j) {
        const bool last = j == w.m_scales - 1;
        SsimResult r = ssim_per_channel(xj, yj, params);
        Tensor term = pow_scalar(clamp_min(last ? r.ssim : r.cs, kMsFloor), w.beta[j]);
        product = product.defined() ? mul(product, term) : term;
        if (!last) {
            xj = avg_pool2(xj);
            yj = avg_pool2(yj);
        }
    }
    return mean(product);
}

Tensor ms_l1(const Tensor& x, const Tensor& y, const MsWeights& w, const SsimParams& params)
{
    check_same_shape(x, y, "ms_l1");
    check_ms_size(x, w, params, "ms_l1");
    Tensor xj = x;
    Tensor yj = y;
    Tensor total;
    for (int j = 0; j < w.m_scales; ++j) {
        Tensor term = scalar_mul(mean(abs(sub(xj, yj))), w.omega[j]);
        total = total.defined() ? add(total, term) : term;
        if (j + 1 < w.m_scales) {
            xj = avg_pool2(xj);
            yj = avg_pool2(yj);
        }
    }
    return total;
}

StructureLossTerms structure_loss(const Tensor& sr_s, const Tensor& hr, const MsWeights& w, float lambda,
                                  const SsimParams& params)
{
    Tensor l1 = ms_l1(sr_s, hr, w, params);
    Tensor ms = ms_ssim(sr_s, hr, w, params);
    Tensor total = add(l1, scalar_mul(add_scalar(scalar_mul(ms, -1.0f), 1.0f), lambda));
    return {total, l1, ms};
}

Tensor ragan_d_loss(const Tensor& c_real, const Tensor& c_fake)
{
    if (!c_real.defined() || !c_fake.defined())
        throw ShapeError("ragan loss: empty logit batch");
    // -log(sigmoid(z)) = softplus(-z), -log(1 - sigmoid(z)) = softplus(z)
    Tensor real_vs_fake = sub(c_real, mean(c_fake));
    Tensor fake_vs_real = sub(c_fake, mean(c_real));
    return add(mean(softplus(scalar_mul(real_vs_fake, -1.0f))), mean(softplus(fake_vs_real)));
}

Tensor ragan_g_loss(const Tensor& c_real, const Tensor& c_fake) { return ragan_d_loss(c_fake, c_real); }

// ---------------------------------------------------------------------------
// Feature extractor

FeatureExtractor::FeatureExtractor(std::vector<Layer> layers, std::string tap, std::uint64_t seed)
    : layers_(std::move(layers)), tap_(std::move(tap))
{
    Rng rng(mix_seed(seed, 0xfea7));
    bool found = false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& l = layers_[i];
        if (!l.is_pool) {
            convs_.emplace_back("extractor." + l.name, l.cin, l.cout, l.kernel, rng,
                                Conv2dOptions{l.stride, l.padding, 1}, 0.2f);
            convs_.back().weight.set_frozen(true);
            convs_.back().bias.set_frozen(true);
        }
        if (l.name == tap_) {
            tap_index_ = i;
            found = true;
        }
    }
    if (!found)
        throw ConfigError("feature extractor: tap point '" + tap_ + "' is not one of its layers");
}

FeatureExtractor FeatureExtractor::desk(std::uint64_t seed)
{
    using A = Activation;
    std::vector<Layer> layers{
        {"stage1", false, 3, 16, 3, 1, 1, A::LeakyRelu},
        {"stage2", false, 16, 32, 3, 2, 1, A::LeakyRelu},
        {"stage3", false, 32, 32, 3, 2, 1, A::LeakyRelu},
        {"stage4", false, 32, 64, 3, 2, 1, A::LeakyRelu},
        {"stage5", false, 64, 64, 3, 2, 1, A::None},
    };
    return FeatureExtractor(std::move(layers), "stage5", seed);
}

FeatureExtractor FeatureExtractor::identity()
{
    FeatureExtractor fx({{"identity", false, 3, 3, 1, 1, 0, Activation::None}}, "identity");
    auto w = fx.convs_[0].weight.value.mutable_data();
    std::fill(w.begin(), w.end(), 0.0f);
    for (int c = 0; c < 3; ++c)
        w[c * 3 + c] = 1.0f;
    return fx;
}

namespace {
const char* act_name(FeatureExtractor::Activation a)
{
    switch (a) {
    case FeatureExtractor::Activation::Relu: return "relu";
    case FeatureExtractor::Activation::LeakyRelu: return "lrelu";
    default: return "none";
    }
}

FeatureExtractor::Activation act_from(const std::string& s)
{
    if (s == "relu") return FeatureExtractor::Activation::Relu;
    if (s == "lrelu") return FeatureExtractor::Activation::LeakyRelu;
    if (s == "none") return FeatureExtractor::Activation::None;
    throw ConfigError("feature extractor: unknown activation '" + s + "'");
}
} // namespace

nlohmann::json FeatureExtractor::describe() const
{
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& l : layers_) {
        if (l.is_pool)
            layers.push_back({{"name", l.name}, {"type", "maxpool2"}});
        else
            layers.push_back({{"name", l.name},
                              {"type", "conv"},
                              {"cin", l.cin},
                              {"cout", l.cout},
                              {"kernel", l.kernel},
                              {"stride", l.stride},
                              {"padding", l.padding},
                              {"activation", act_name(l.act)}});
    }
    return {{"layers", layers}, {"tap", tap_}, {"input_mean", input_mean}, {"input_std", input_std}};
}

void FeatureExtractor::save(const std::string& path) const
{
    Container c;
    c.header = {{"format_version", kContainerVersion}, {"kind", "feature_extractor"}, {"extractor", describe()}};
    for (const Conv& conv : convs_) {
        for (const Parameter* p : {&conv.weight, &conv.bias})
            c.blobs.push_back({p->name, p->value.shape(),
                               std::vector<float>(p->value.data().begin(), p->value.data().end())});
    }
    write_container(path, c);
}

FeatureExtractor FeatureExtractor::load(const std::string& path)
{
    const Container c = read_container(path);
    std::vector<Layer> layers;
    std::string tap;
    std::vector<float> mean_v, std_v;
    try {
        if (c.header.at("kind").get<std::string>() != "feature_extractor")
            throw CheckpointError(path + ": container is not a feature extractor");
        const auto& d = c.header.at("extractor");
        for (const auto& l : d.at("layers")) {
            Layer layer;
            layer.name = l.at("name").get<std::string>();
            if (l.at("type").get<std::string>() == "maxpool2") {
                layer.is_pool = true;
            } else {
                layer.cin = l.at("cin").get<int>();
                layer.cout = l.at("cout").get<int>();
                layer.kernel = l.at("kernel").get<int>();
                layer.stride = l.at("stride").get<int>();
                layer.padding = l.at("padding").get<int>();
                layer.act = act_from(l.at("activation").get<std::string>());
            }
            layers.push_back(layer);
        }
        tap = d.at("tap").get<std::string>();
        mean_v = d.at("input_mean").get<std::vector<float>>();
        std_v = d.at("input_std").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path + ": malformed extractor header: " + e.what());
    }
    FeatureExtractor fx(std::move(layers), tap);
    for (Conv& conv : fx.convs_) {
        for (Parameter* p : {&conv.weight, &conv.bias}) {
            const NamedBlob* b = c.find(p->name);
            if (!b || !(b->shape == p->value.shape()))
                throw CheckpointError(path + ": missing or mis-shaped tensor '" + p->name + "'");
            std::copy(b->data.begin(), b->data.end(), p->value.mutable_data().begin());
        }
    }
    if (mean_v.size() != 3 || std_v.size() != 3)
        throw CheckpointError(path + ": input normalisation needs three channels");
    fx.input_mean = mean_v;
    fx.input_std = std_v;
    return fx;
}

Tensor FeatureExtractor::features(const Tensor& image) const
{
    Tensor h = image;
    const bool normalise = input_mean != std::vector<float>{0, 0, 0} || input_std != std::vector<float>{1, 1, 1};
    if (normalise) {
        Tensor w(Shape{3, 3, 1, 1});
        Tensor b(Shape{3, 1, 1, 1});
        for (int c = 0; c < 3; ++c) {
            w.mutable_data()[c * 3 + c] = 1.0f / input_std[c];
            b.mutable_data()[c] = -input_mean[c] / input_std[c];
        }
        h = conv2d(h, w, b);
    }
    std::size_t conv_i = 0;
    for (std::size_t i = 0; i <= tap_index_; ++i) {
        const Layer& l = layers_[i];
        if (l.is_pool) {
            h = max_pool2(h);
            continue;
        }
        h = convs_[conv_i++](h);
        if (l.act == Activation::Relu)
            h = leaky_relu(h, 0.0f);
        else if (l.act == Activation::LeakyRelu)
            h = leaky_relu(h, 0.2f);
    }
    return h;
}

Tensor perceptual_loss(const Tensor& sr, const Tensor& hr, const FeatureExtractor& extractor)
{
    check_same_shape(sr, hr, "perceptual_loss");
    Tensor target;
    {
        NoGradGuard guard;
        target = extractor.features(hr);
    }
    return mean(abs(sub(extractor.features(sr), target)));
}

PerceptionLossTerms perception_total(const Tensor& sr_p, const Tensor& hr, const Tensor& c_real,
                                     const Tensor& c_fake, const FeatureExtractor& extractor, float eta)
{
    Tensor perceptual = perceptual_loss(sr_p, hr, extractor);
    Tensor adversarial = ragan_g_loss(c_real, c_fake);
    return {add(perceptual, scalar_mul(adversarial, eta)), perceptual, adversarial};
}

// ---------------------------------------------------------------------------
// Discriminator

DiscriminatorConfig DiscriminatorConfig::vgg128()
{
    DiscriminatorConfig c;
    c.input_size = 128;
    c.ladder = {{64, 1}, {64, 2}, {128, 1}, {128, 2}, {256, 1}, {256, 2}, {512, 1}, {512, 2}, {512, 1}, {512, 2}};
    return c;
}

DiscriminatorConfig DiscriminatorConfig::vgg192()
{
    DiscriminatorConfig c = vgg128();
    c.input_size = 192;
    return c;
}

DiscriminatorConfig DiscriminatorConfig::desk(int input_size)
{
    DiscriminatorConfig c;
    c.input_size = input_size;
    c.ladder = {{16, 1}, {16, 2}, {32, 2}, {64, 2}, {64, 2}};
    c.dense_width = 64;
    return c;
}

int DiscriminatorConfig::final_grid() const
{
    int s = input_size;
    for (const auto& [ch, stride] : ladder)
        s = conv_output_size(s, 3, stride, 1, 1);
    return s;
}

void DiscriminatorConfig::validate() const
{
    if (ladder.empty())
        throw ConfigError("discriminator: empty channel ladder");
    int s = input_size;
    for (const auto& [ch, stride] : ladder) {
        if (ch < 1 || (stride != 1 && stride != 2))
            throw ConfigError("discriminator: ladder entries need channels >= 1 and stride 1 or 2");
        if (stride == 2 && s % 2 != 0)
            throw ConfigError("discriminator: input size " + std::to_string(input_size) +
                              " does not halve evenly through the ladder");
        s = conv_output_size(s, 3, stride, 1, 1);
    }
    if (s < 1)
        throw ConfigError("discriminator: ladder reduces the input to nothing");
}

nlohmann::json DiscriminatorConfig::to_json() const
{
    nlohmann::json l = nlohmann::json::array();
    for (const auto& [ch, stride] : ladder)
        l.push_back({ch, stride});
    return {{"input_size", input_size}, {"in_channels", in_channels}, {"ladder", l},
            {"dense_width", dense_width}, {"lrelu_slope", lrelu_slope}, {"final_grid", final_grid()},
            {"input_normalisation", "none ([0,1] images)"}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j)
{
    DiscriminatorConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    for (const auto& e : j.at("ladder"))
        c.ladder.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    c.dense_width = j.at("dense_width").get<int>();
    c.lrelu_slope = j.at("lrelu_slope").get<float>();
    return c;
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg)
{
    cfg.validate();
    Rng rng(mix_seed(seed, 0xd15c));
    int cin = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.ladder.size(); ++i) {
        const auto [ch, stride] = cfg.ladder[i];
        convs.emplace_back("disc.conv" + std::to_string(i), cin, ch, 3, rng, Conv2dOptions{stride, 1, 1},
                           cfg.lrelu_slope);
        cin = ch;
    }
    const int grid = cfg.final_grid();
    dense1 = Conv("disc.dense1", cin * grid * grid, cfg.dense_width, 1, rng, {}, cfg.lrelu_slope);
    dense2 = Conv("disc.dense2", cfg.dense_width, 1, 1, rng, {}, 1.0f);
}

Tensor Discriminator::forward(const Tensor& image) const
{
    const Shape& s = image.shape();
    if (s.h != cfg_.input_size || s.w != cfg_.input_size || s.c != cfg_.in_channels)
        throw ShapeError("discriminator: expects " + std::to_string(cfg_.in_channels) + "x" +
                         std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.input_size) +
                         " inputs, got " + s.str());
    Tensor h = image;
    for (const Conv& c : convs)
        h = leaky_relu(c(h), cfg_.lrelu_slope);
    const Shape hs = h.shape();
    h = reshape(h, Shape{hs.n, hs.c * hs.h * hs.w, 1, 1});
    h = leaky_relu(dense1(h), cfg_.lrelu_slope);
    return dense2(h);
}

void Discriminator::visit(const ParameterVisitor& fn)
{
    for (Conv& c : convs)
        c.visit(fn);
    dense1.visit(fn);
    dense2.visit(fn);
}

std::vector<Parameter*> Discriminator::parameters()
{
    std::vector<Parameter*> out;
    visit([&](Parameter& p) { out.push_back(&p); });
    return out;
}

void Discriminator::set_frozen(bool on)
{
    visit([&](Parameter& p) { p.set_frozen(on); });
}

} // namespace ppon
