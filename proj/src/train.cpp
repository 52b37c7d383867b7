#include "ppon/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>

#include "ppon/checkpoint.hpp"
#include "ppon/error.hpp"
#include "ppon/ops.hpp"

namespace ppon {

const char* stage_name(Stage s)
{
    switch (s) {
    case Stage::Content: return "content";
    case Stage::Structure: return "structure";
    case Stage::Perception: return "perception";
    }
    return "?";
}

Stage stage_from_name(const std::string& name)
{
    if (name == "content") return Stage::Content;
    if (name == "structure") return Stage::Structure;
    if (name == "perception") return Stage::Perception;
    throw ConfigError("unknown stage '" + name + "' (expected content, structure or perception)");
}

Branch stage_branch(Stage s)
{
    switch (s) {
    case Stage::Content: return Branch::Content;
    case Stage::Structure: return Branch::Structure;
    case Stage::Perception: return Branch::Perception;
    }
    return Branch::Content;
}

std::vector<Stage> stage_prerequisites(Stage s)
{
    switch (s) {
    case Stage::Content: return {};
    case Stage::Structure: return {Stage::Content};
    case Stage::Perception: return {Stage::Content, Stage::Structure};
    }
    return {};
}

StageSchedule StageSchedule::standard(Stage s)
{
    StageSchedule sc;
    sc.stage = s;
    sc.batch_size = 25;
    sc.adversarial = s == Stage::Perception;
    if (s == Stage::Content) {
        sc.initial_lr = 2e-4f;
        sc.decay_interval_iters = 138000;
    } else {
        sc.initial_lr = 1e-4f;
        sc.decay_interval_iters = 34500;
    }
    // The total budget is not published; four decay intervals.
    sc.max_iters = 4 * sc.decay_interval_iters;
    return sc;
}

StageSchedule StageSchedule::desk(Stage s, std::int64_t max_iters, int batch_size)
{
    StageSchedule sc = standard(s);
    // Short runs use a five times larger step than the published rates.
    sc.initial_lr *= 5.0f;
    sc.max_iters = max_iters;
    sc.batch_size = batch_size;
    sc.decay_interval_iters = std::max<std::int64_t>(1, max_iters / 2);
    return sc;
}

bool StageSchedule::in_scope(const std::string& param_name) const
{
    return param_name.rfind(branch_prefix(stage_branch(stage)), 0) == 0;
}

nlohmann::json StageSchedule::to_json() const
{
    return {
        {"stage", stage_name(stage)},
        {"initial_lr", initial_lr},
        {"decay_factor", decay_factor},
        {"decay_interval_iters", decay_interval_iters},
        {"max_iters", max_iters},
        {"batch_size", batch_size},
        {"adversarial", adversarial},
        {"trainable_scope", std::string(branch_prefix(stage_branch(stage))) + "*"},
    };
}

double lr_at(const StageSchedule& s, std::int64_t iter)
{
    if (iter < 0)
        throw ConfigError("lr_at: negative iteration");
    const std::int64_t k = iter / std::max<std::int64_t>(1, s.decay_interval_iters);
    return double(s.initial_lr) * std::pow(double(s.decay_factor), double(k));
}

void RunRecord::append(const IterationRecord& r) { iterations.push_back(r); }

void RunRecord::write_jsonl(const std::string& path) const
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write run log " + path);
    nlohmann::json head = {{"type", "run"}, {"stage", stage}, {"seed", seed}, {"config", config}};
    if (abort_reason)
        head["abort_reason"] = *abort_reason;
    out << head.dump() << '\n';
    for (const auto& r : iterations) {
        nlohmann::json j = {{"iter", r.iter}, {"lr", r.lr}, {"wall_ms", r.wall_ms}};
        for (const auto& [k, v] : r.losses)
            j[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v));
        out << j.dump() << '\n';
    }
}

double RunRecord::final_loss(const std::string& key) const
{
    if (iterations.empty())
        throw ConfigError("run record is empty");
    return iterations.back().losses.at(key);
}

double RunRecord::moving_average(const std::string& key, std::size_t window) const
{
    if (iterations.empty() || window == 0)
        throw ConfigError("run record is empty");
    const std::size_t n = std::min(window, iterations.size());
    double s = 0.0;
    for (std::size_t i = iterations.size() - n; i < iterations.size(); ++i)
        s += iterations[i].losses.at(key);
    return s / double(n);
}

namespace {

void check_prerequisites(const PponNet& model, Stage stage)
{
    for (Stage need : stage_prerequisites(stage)) {
        const auto& prov = model.provenance;
        if (std::find(prov.begin(), prov.end(), stage_name(need)) == prov.end())
            throw ConfigError(std::string("the ") + stage_name(stage) + " stage needs a trained " +
                              stage_name(need) + " branch; load its checkpoint first");
    }
}

std::vector<Parameter*> scoped_parameters(PponNet& model, const StageSchedule& s)
{
    std::vector<Parameter*> out;
    for (Parameter* p : model.parameters())
        if (s.in_scope(p->name))
            out.push_back(p);
    return out;
}

double value_of(const Tensor& t) { return double(t.item()); }

} // namespace

RunRecord train_stage(PponNet& model, const StageSchedule& schedule, const PatchDataset& data,
                      const TrainOptions& opt)
{
    check_prerequisites(model, schedule.stage);
    if (schedule.batch_size < 1 || schedule.max_iters < 0)
        throw ConfigError("schedule needs batch_size >= 1 and max_iters >= 0");

    const bool adversarial = schedule.stage == Stage::Perception;
    const MsWeights ms = opt.ms_weights ? *opt.ms_weights : MsWeights::for_size(data.hr_patch());

    std::unique_ptr<FeatureExtractor> own_extractor;
    const FeatureExtractor* extractor = opt.extractor;
    std::unique_ptr<Discriminator> disc;
    if (adversarial) {
        if (!extractor) {
            own_extractor = std::make_unique<FeatureExtractor>(FeatureExtractor::desk());
            extractor = own_extractor.get();
        }
        const DiscriminatorConfig dcfg =
            opt.discriminator ? *opt.discriminator : DiscriminatorConfig::desk(data.hr_patch());
        disc = std::make_unique<Discriminator>(dcfg, mix_seed(opt.seed, 0xd15c));
    }

    // Frozen for the whole run: these parameters never require grad.
    model.set_all_frozen(true);
    std::vector<Parameter*> trainable = scoped_parameters(model, schedule);
    for (Parameter* p : trainable)
        p->set_frozen(false);
    std::vector<Parameter*> disc_params = disc ? disc->parameters() : std::vector<Parameter*>{};

    std::int64_t start = 0;
    if (!opt.resume_from.empty()) {
        const CheckpointInfo info = load_checkpoint(
            opt.resume_from, model, {.load_optimizer = true, .discriminator = disc.get()});
        if (info.train_state.is_null() || info.train_state.value("stage", "") != stage_name(schedule.stage))
            throw CheckpointError(opt.resume_from + ": not a mid-stage snapshot of the " +
                                  stage_name(schedule.stage) + " stage");
        start = info.train_state.at("next_iter").get<std::int64_t>();
    }

    RunRecord record;
    record.stage = stage_name(schedule.stage);
    record.seed = opt.seed;
    record.config = {
        {"model", model.config().to_json()},
        {"schedule", schedule.to_json()},
        {"lambda", opt.lambda},
        {"eta", opt.eta},
        {"ms_scales", ms.m_scales},
        {"hr_patch", data.hr_patch()},
        {"adam", {{"beta1", opt.adam.beta1}, {"beta2", opt.adam.beta2}, {"eps", opt.adam.eps}}},
        {"resumed_at", start},
    };
    if (adversarial) {
        record.config["discriminator"] = disc->config().to_json();
        record.config["discriminator_input"] = "[0,1] RGB, unnormalised";
        record.config["extractor"] = extractor->describe();
        record.config["po_init"] = "fresh seeded init";
    }

    auto snapshot = [&](std::int64_t next_iter) {
        SaveOptions so;
        so.include_optimizer = true;
        so.discriminator = disc.get();
        so.train_state = {{"stage", stage_name(schedule.stage)}, {"next_iter", next_iter}};
        save_checkpoint(opt.snapshot_path, model, so);
    };

    auto abort = [&](std::int64_t iter, const std::string& what, const IterationRecord& rec) {
        record.append(rec);
        record.abort_reason = "non-finite " + what + " at iteration " + std::to_string(iter);
        if (!opt.log_path.empty())
            record.write_jsonl(opt.log_path);
        throw TrainingAborted(*record.abort_reason);
    };

    for (std::int64_t iter = start; iter < schedule.max_iters; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();
        IterationRecord rec;
        rec.iter = iter;
        rec.lr = lr_at(schedule, iter);
        AdamOptions adam = opt.adam;
        adam.lr = float(rec.lr);
        const Batch b = data.batch(std::uint64_t(iter), schedule.batch_size);

        switch (schedule.stage) {
        case Stage::Content: {
            const ContentOutputs co = model.forward_content(b.lr);
            const Tensor loss = content_loss(co.sr_c, b.hr);
            rec.losses["content"] = rec.losses["total"] = value_of(loss);
            if (!std::isfinite(rec.losses["total"]))
                abort(iter, "content loss", rec);
            backward(loss);
            adam_step(trainable, adam);
            break;
        }
        case Stage::Structure: {
            ContentOutputs co;
            {
                NoGradGuard ng;
                co = model.forward_content(b.lr);
            }
            const StructureOutputs so = model.forward_structure(co);
            const StructureLossTerms l = structure_loss(so.sr_s, b.hr, ms, opt.lambda);
            rec.losses["ms_l1"] = value_of(l.ms_l1);
            rec.losses["ms_ssim"] = value_of(l.ms_ssim);
            rec.losses["total"] = value_of(l.total);
            if (!std::isfinite(rec.losses["total"]))
                abort(iter, "structure loss", rec);
            backward(l.total);
            adam_step(trainable, adam);
            break;
        }
        case Stage::Perception: {
            StructureOutputs so;
            {
                NoGradGuard ng;
                so = model.forward_structure(model.forward_content(b.lr));
            }
            // Training always runs the undiscounted branch (alpha = 1).
            const PerceptualOutputs po = model.forward_perceptual(so, 1.0f);

            // Discriminator first, on detached fakes.
            disc->set_frozen(false);
            const Tensor d_loss = ragan_d_loss(disc->forward(b.hr), disc->forward(po.sr_p.detach()));
            rec.losses["d_adv"] = value_of(d_loss);
            if (!std::isfinite(rec.losses["d_adv"]))
                abort(iter, "discriminator loss", rec);
            backward(d_loss);
            adam_step(disc_params, adam);

            // Generator step with the discriminator locked.
            disc->set_frozen(true);
            const Tensor c_real = disc->forward(b.hr);
            const Tensor c_fake = disc->forward(po.sr_p);
            const PerceptionLossTerms l = perception_total(po.sr_p, b.hr, c_real, c_fake, *extractor, opt.eta);
            rec.losses["vgg"] = value_of(l.perceptual);
            rec.losses["g_adv"] = value_of(l.adversarial);
            rec.losses["total"] = value_of(l.total);
            if (!std::isfinite(rec.losses["total"]))
                abort(iter, "perception loss", rec);
            backward(l.total);
            adam_step(trainable, adam);
            break;
        }
        }

        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        record.append(rec);
        if (opt.on_iteration)
            opt.on_iteration(rec);
        if (opt.snapshot_every > 0 && !opt.snapshot_path.empty() && (iter + 1) % opt.snapshot_every == 0)
            snapshot(iter + 1);
    }

    if (disc)
        disc->set_frozen(false);
    model.set_all_frozen(false);
    const std::string done = stage_name(schedule.stage);
    if (model.provenance.empty() || model.provenance.back() != done)
        model.provenance.push_back(done);

    if (!opt.out_checkpoint.empty()) {
        SaveOptions so;
        so.discriminator = disc.get();
        so.metadata = {{"last_stage", done}, {"iterations", schedule.max_iters}};
        if (adversarial)
            so.metadata["po_init"] = "fresh seeded init";
        save_checkpoint(opt.out_checkpoint, model, so);
    }
    if (!opt.log_path.empty())
        record.write_jsonl(opt.log_path);
    return record;
}

} // namespace ppon
