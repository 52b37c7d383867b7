#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppon/nn_blocks.hpp"

namespace ppon {

enum class Branch { Content, Structure, Perception };

/// Parameter-name prefix of a branch ("co.", "so.", "po.").
const char* branch_prefix(Branch b);

struct PponConfig {
    int n_rrfb_co = 24;
    int n_rrfb_so = 2;
    int n_rrfb_po = 2;
    int channels = 64;
    int scale = 4;
    RrfbConfig rrfb;
    bool test_profile = false;

    static PponConfig full();
    /// Desk-scale profile: 2/1/1 RRFBs, 16 channels, K=4 (8-channel branches).
    static PponConfig test();

    void validate() const;
    nlohmann::json to_json() const;
    static PponConfig from_json(const nlohmann::json& j);
    friend bool operator==(const PponConfig&, const PponConfig&) = default;
};

struct ContentOutputs {
    Tensor f_c;
    Tensor sr_c;
};

struct StructureOutputs {
    Tensor f_s;
    Tensor sr_s;
};

struct PerceptualOutputs {
    Tensor f_p;
    Tensor sr_p;
};

struct PponOutputs {
    Tensor sr_c, sr_s, sr_p;
    Tensor f_c, f_s, f_p;
};

/// Content feature extractor: head conv, RRFB chain, tail conv, long skip from
/// the head output.
class ContentTrunk {
public:
    ContentTrunk(const std::string& name, const PponConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& lr) const;
    void visit(const ParameterVisitor& fn);

    Conv head;
    std::vector<Rrfb> blocks;
    Conv tail;
};

/// Plain RRFB chain (structure / perception feature extractors).
class RrfbChain {
public:
    RrfbChain(const std::string& name, int count, const RrfbConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void visit(const ParameterVisitor& fn);

    std::vector<Rrfb> blocks;
};

/// Three-branch progressive generator. Feature extractors only ever consume
/// the previous branch's features; images flow forward through the residual
/// additions alone.
class PponNet {
    // Declared first: members below are initialised from these.
    PponConfig cfg_;
    std::uint64_t seed_;

    struct InitStreams {
        Rng co, so, po;
    };
    PponNet(const PponConfig& cfg, std::uint64_t seed, InitStreams&& streams);

public:
    /// Each branch draws its initial weights from its own stream derived from
    /// `seed`, so branch initialisations are independent of one another.
    explicit PponNet(const PponConfig& cfg, std::uint64_t seed = 0);
    PponNet(PponNet&&) = default;
    PponNet& operator=(PponNet&&) = default;
    PponNet(const PponNet&) = delete;
    PponNet& operator=(const PponNet&) = delete;

    ContentOutputs forward_content(const Tensor& lr) const;
    StructureOutputs forward_structure(const ContentOutputs& content) const;
    /// alpha must lie in [0, 1].
    PerceptualOutputs forward_perceptual(const StructureOutputs& structure, float alpha) const;
    /// Single pass producing all three images; no graph is recorded.
    PponOutputs infer(const Tensor& lr, float alpha) const;

    void visit(const ParameterVisitor& fn);
    void visit_branch(Branch b, const ParameterVisitor& fn);
    std::vector<Parameter*> parameters();
    std::vector<Parameter*> parameters(Branch b);
    /// Freezes every parameter outside `trainable`.
    void freeze_all_except(Branch trainable);
    void set_all_frozen(bool on);

    const PponConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    /// Stages completed so far, in order ("content", "structure", "perception").
    std::vector<std::string> provenance;

    // COBranch
    ContentTrunk cfem;
    UpsampleHead crm;
    // SOBranch
    RrfbChain sfem;
    UpsampleHead srm;
    // POBranch
    RrfbChain pfem;
    UpsampleHead prm;
};

} // namespace ppon
