#include "ppon/ppon_net.hpp"

#include "ppon/error.hpp"

namespace ppon {

const char* branch_prefix(Branch b)
{
    switch (b) {
    case Branch::Content: return "co.";
    case Branch::Structure: return "so.";
    case Branch::Perception: return "po.";
    }
    return "";
}

PponConfig PponConfig::full() { return PponConfig{}; }

PponConfig PponConfig::test()
{
    PponConfig c;
    c.n_rrfb_co = 2;
    c.n_rrfb_so = 1;
    c.n_rrfb_po = 1;
    c.channels = 16;
    c.rrfb.hffb.io_channels = 16;
    c.rrfb.hffb.branch_channels = 8;
    c.rrfb.hffb.k_dilations = 4;
    c.test_profile = true;
    return c;
}

void PponConfig::validate() const
{
    if (n_rrfb_co < 1 || n_rrfb_so < 1 || n_rrfb_po < 1)
        throw ConfigError("PPON: every branch needs at least one RRFB");
    if (scale != 4)
        throw ConfigError("PPON: only scale 4 is supported, got " + std::to_string(scale));
    if (rrfb.hffb.io_channels != channels)
        throw ConfigError("PPON: HFFB io_channels (" + std::to_string(rrfb.hffb.io_channels) +
                          ") must equal the trunk width (" + std::to_string(channels) + ")");
    rrfb.validate();
}

nlohmann::json PponConfig::to_json() const
{
    const HffbConfig& h = rrfb.hffb;
    return {
        {"n_rrfb_co", n_rrfb_co},
        {"n_rrfb_so", n_rrfb_so},
        {"n_rrfb_po", n_rrfb_po},
        {"channels", channels},
        {"scale", scale},
        {"test_profile", test_profile},
        {"rrfb",
         {{"n_hffb", rrfb.n_hffb},
          {"residual_scaling", rrfb.residual_scaling},
          {"hffb",
           {{"k_dilations", h.k_dilations},
            {"branch_channels", h.branch_channels},
            {"io_channels", h.io_channels},
            {"kernel", h.kernel},
            {"residual_scaling", h.residual_scaling},
            {"lrelu_slope", h.lrelu_slope}}}}},
    };
}

PponConfig PponConfig::from_json(const nlohmann::json& j)
{
    PponConfig c;
    c.n_rrfb_co = j.at("n_rrfb_co").get<int>();
    c.n_rrfb_so = j.at("n_rrfb_so").get<int>();
    c.n_rrfb_po = j.at("n_rrfb_po").get<int>();
    c.channels = j.at("channels").get<int>();
    c.scale = j.at("scale").get<int>();
    c.test_profile = j.at("test_profile").get<bool>();
    const auto& r = j.at("rrfb");
    c.rrfb.n_hffb = r.at("n_hffb").get<int>();
    c.rrfb.residual_scaling = r.at("residual_scaling").get<float>();
    const auto& h = r.at("hffb");
    c.rrfb.hffb.k_dilations = h.at("k_dilations").get<int>();
    c.rrfb.hffb.branch_channels = h.at("branch_channels").get<int>();
    c.rrfb.hffb.io_channels = h.at("io_channels").get<int>();
    c.rrfb.hffb.kernel = h.at("kernel").get<int>();
    c.rrfb.hffb.residual_scaling = h.at("residual_scaling").get<float>();
    c.rrfb.hffb.lrelu_slope = h.at("lrelu_slope").get<float>();
    return c;
}

ContentTrunk::ContentTrunk(const std::string& name, const PponConfig& cfg, Rng& rng)
    : head(name + ".head", 3, cfg.channels, 3, rng, {1, 1, 1})
{
    for (int i = 0; i < cfg.n_rrfb_co; ++i)
        blocks.emplace_back(name + ".rrfb" + std::to_string(i), cfg.rrfb, rng);
    tail = Conv(name + ".tail", cfg.channels, cfg.channels, 3, rng, {1, 1, 1});
}

Tensor ContentTrunk::forward(const Tensor& lr) const
{
    Tensor shallow = head(lr);
    Tensor h = shallow;
    for (const Rrfb& b : blocks)
        h = b.forward(h);
    return add(tail(h), shallow);
}

void ContentTrunk::visit(const ParameterVisitor& fn)
{
    head.visit(fn);
    for (Rrfb& b : blocks)
        b.visit(fn);
    tail.visit(fn);
}

RrfbChain::RrfbChain(const std::string& name, int count, const RrfbConfig& cfg, Rng& rng)
{
    for (int i = 0; i < count; ++i)
        blocks.emplace_back(name + ".rrfb" + std::to_string(i), cfg, rng);
}

Tensor RrfbChain::forward(const Tensor& x) const
{
    Tensor h = x;
    for (const Rrfb& b : blocks)
        h = b.forward(h);
    return h;
}

void RrfbChain::visit(const ParameterVisitor& fn)
{
    for (Rrfb& b : blocks)
        b.visit(fn);
}

namespace {
const PponConfig& validated(const PponConfig& cfg)
{
    cfg.validate();
    return cfg;
}
} // namespace

PponNet::PponNet(const PponConfig& cfg, std::uint64_t seed)
    : PponNet(cfg, seed, InitStreams{Rng(mix_seed(seed, 1)), Rng(mix_seed(seed, 2)), Rng(mix_seed(seed, 3))})
{
}

PponNet::PponNet(const PponConfig& cfg, std::uint64_t seed, InitStreams&& s)
    : cfg_(validated(cfg)),
      seed_(seed),
      cfem("co.cfem", cfg_, s.co),
      crm("co.crm", cfg_.channels, cfg_.scale, cfg_.rrfb.hffb.lrelu_slope, s.co),
      sfem("so.sfem", cfg_.n_rrfb_so, cfg_.rrfb, s.so),
      srm("so.srm", cfg_.channels, cfg_.scale, cfg_.rrfb.hffb.lrelu_slope, s.so),
      pfem("po.pfem", cfg_.n_rrfb_po, cfg_.rrfb, s.po),
      prm("po.prm", cfg_.channels, cfg_.scale, cfg_.rrfb.hffb.lrelu_slope, s.po)
{
}

ContentOutputs PponNet::forward_content(const Tensor& lr) const
{
    if (lr.shape().c != 3)
        throw ShapeError("PPON: input must be RGB (C=3), got C=" + std::to_string(lr.shape().c));
    Tensor f_c = cfem.forward(lr);
    Tensor sr_c = crm.forward(f_c);
    return {f_c, sr_c};
}

StructureOutputs PponNet::forward_structure(const ContentOutputs& content) const
{
    Tensor f_s = sfem.forward(content.f_c);
    Tensor sr_s = add(srm.forward(f_s), content.sr_c);
    return {f_s, sr_s};
}

PerceptualOutputs PponNet::forward_perceptual(const StructureOutputs& structure, float alpha) const
{
    if (!(alpha >= 0.0f && alpha <= 1.0f))
        throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    Tensor f_p = pfem.forward(structure.f_s);
    Tensor residual = prm.forward(f_p);
    Tensor sr_p = add(alpha == 1.0f ? residual : scalar_mul(residual, alpha), structure.sr_s);
    return {f_p, sr_p};
}

PponOutputs PponNet::infer(const Tensor& lr, float alpha) const
{
    if (!(alpha >= 0.0f && alpha <= 1.0f))
        throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    NoGradGuard guard;
    ContentOutputs c = forward_content(lr);
    StructureOutputs s = forward_structure(c);
    PerceptualOutputs p = forward_perceptual(s, alpha);
    return {c.sr_c, s.sr_s, p.sr_p, c.f_c, s.f_s, p.f_p};
}

void PponNet::visit(const ParameterVisitor& fn)
{
    visit_branch(Branch::Content, fn);
    visit_branch(Branch::Structure, fn);
    visit_branch(Branch::Perception, fn);
}

void PponNet::visit_branch(Branch b, const ParameterVisitor& fn)
{
    switch (b) {
    case Branch::Content:
        cfem.visit(fn);
        crm.visit(fn);
        break;
    case Branch::Structure:
        sfem.visit(fn);
        srm.visit(fn);
        break;
    case Branch::Perception:
        pfem.visit(fn);
        prm.visit(fn);
        break;
    }
}

std::vector<Parameter*> PponNet::parameters()
{
    std::vector<Parameter*> out;
    visit([&](Parameter& p) { out.push_back(&p); });
    return out;
}

std::vector<Parameter*> PponNet::parameters(Branch b)
{
    std::vector<Parameter*> out;
    visit_branch(b, [&](Parameter& p) { out.push_back(&p); });
    return out;
}

void PponNet::freeze_all_except(Branch trainable)
{
    for (Branch b : {Branch::Content, Branch::Structure, Branch::Perception})
        visit_branch(b, [&](Parameter& p) { p.set_frozen(b != trainable); });
}

void PponNet::set_all_frozen(bool on)
{
    visit([&](Parameter& p) { p.set_frozen(on); });
}

} // namespace ppon
