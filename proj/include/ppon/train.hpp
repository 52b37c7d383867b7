#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppon/data.hpp"
#include "ppon/losses.hpp"
#include "ppon/ppon_net.hpp"

namespace ppon {

enum class Stage { Content, Structure, Perception };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);
Branch stage_branch(Stage s);
/// Stages whose checkpoints must already be in the model's provenance.
std::vector<Stage> stage_prerequisites(Stage s);

struct StageSchedule {
    Stage stage = Stage::Content;
    float initial_lr = 2e-4f;
    float decay_factor = 0.5f;
    std::int64_t decay_interval_iters = 138000;
    std::int64_t max_iters = 276000;
    int batch_size = 25;
    bool adversarial = false;

    /// Full-scale schedule: 2e-4 halved every 1.38e5 iterations for Content;
    /// 1e-4 halved every 3.45e4 iterations for Structure and Perception.
    static StageSchedule standard(Stage s);
    /// Desk-scale runs: five times the published learning rate, decay interval
    /// rescaled to half of `max_iters`.
    static StageSchedule desk(Stage s, std::int64_t max_iters, int batch_size);

    /// Parameter-name predicate for the trainable scope.
    bool in_scope(const std::string& param_name) const;
    nlohmann::json to_json() const;
};

/// initial_lr * decay_factor ^ floor(iter / decay_interval_iters).
double lr_at(const StageSchedule& s, std::int64_t iter);

struct IterationRecord {
    std::int64_t iter = 0;
    double lr = 0.0;
    std::map<std::string, double> losses;  // content / ms_l1 / ms_ssim / vgg / g_adv / d_adv / total
    double wall_ms = 0.0;
};

/// Append-only log of one stage run.
struct RunRecord {
    std::string stage;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::vector<IterationRecord> iterations;
    std::optional<std::string> abort_reason;

    void append(const IterationRecord& r);
    /// Line-delimited JSON: a header line, then one line per iteration.
    void write_jsonl(const std::string& path) const;
    double final_loss(const std::string& key) const;
    /// Mean of `key` over the last `window` iterations.
    double moving_average(const std::string& key, std::size_t window) const;
};

struct TrainOptions {
    float lambda = 1e3f;  // MS-SSIM weight in the structure loss
    float eta = 5e-3f;    // adversarial weight in the perception loss
    std::optional<MsWeights> ms_weights;  // chosen from the patch size when unset
    AdamOptions adam{};
    std::uint64_t seed = 0;
    /// Perception stage only; defaults to the desk extractor / a desk
    /// discriminator sized to the HR patch.
    const FeatureExtractor* extractor = nullptr;
    std::optional<DiscriminatorConfig> discriminator;
    std::string out_checkpoint;    // written at the end when non-empty
    std::string log_path;          // RunRecord JSONL when non-empty
    /// Resumable snapshots (weights, Adam state, discriminator, next iteration)
    /// are written to `snapshot_path` every `snapshot_every` iterations.
    std::int64_t snapshot_every = 0;
    std::string snapshot_path;
    /// Snapshot to continue from; the run picks up at its recorded iteration.
    std::string resume_from;
    std::function<void(const IterationRecord&)> on_iteration;
};

class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Trains one stage. Parameters outside the stage's branch are frozen for the
/// whole run (no gradients are computed for them). Throws if prerequisites
/// are missing from `model.provenance`, or TrainingAborted on a non-finite loss.
RunRecord train_stage(PponNet& model, const StageSchedule& schedule, const PatchDataset& data,
                      const TrainOptions& opt);

} // namespace ppon
