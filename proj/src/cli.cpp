#include "ppon/cli.hpp"

#include <cblas.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ppon/checkpoint.hpp"
#include "ppon/data.hpp"
#include "ppon/error.hpp"
#include "ppon/eval.hpp"
#include "ppon/train.hpp"

namespace fs = std::filesystem;

namespace ppon::cli {

namespace {

// Raised for problems the caller can fix by changing the invocation.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> read_config_flags(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file " + path);
    std::vector<std::string> flags;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        std::replace(key.begin(), key.end(), '_', '-');
        flags.push_back("--" + key + "=" + value);
    }
    return flags;
}

PponConfig profile_config(const std::string& profile)
{
    return profile == "full" ? PponConfig::full() : PponConfig::test();
}

const char* previous_stage(Stage s)
{
    return s == Stage::Perception ? "structure" : "content";
}

std::vector<float> parse_alphas(const std::string& text)
{
    std::vector<float> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty())
            continue;
        float a = 0.0f;
        try {
            std::size_t used = 0;
            a = std::stof(item, &used);
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("alpha '" + item + "' is not a number");
        }
        if (!(a >= 0.0f && a <= 1.0f))
            throw UsageError("alpha " + item + " is outside [0, 1]");
        out.push_back(a);
    }
    if (out.empty())
        throw UsageError("no alpha values given");
    return out;
}

void apply_thread_env()
{
    if (const char* v = std::getenv(kThreadsEnv)) {
        const int n = std::atoi(v);
        if (n >= 1)
            openblas_set_num_threads(n);
    }
}

// ---------------------------------------------------------------------------

struct FixtureArgs {
    std::string out;
    int count = 8;
    int size = 256;
    std::uint64_t seed = 7;
};

int cmd_fixture(const FixtureArgs& a, std::ostream& out)
{
    fs::create_directories(a.out);
    std::vector<std::string> names;
    for (int k = 0; k < a.count; ++k) {
        const std::string name = "fixture_" + std::to_string(k) + ".png";
        save_image((fs::path(a.out) / name).string(), synthetic_image(k, a.size, a.seed));
        names.push_back(name);
    }
    const std::string manifest = (fs::path(a.out) / "train.txt").string();
    write_manifest(manifest, names);
    out << "wrote " << a.count << " images and " << manifest << "\n";
    return kOk;
}

struct DegradeArgs {
    std::string manifest, out;
    float sigma = 0.0f;
    std::uint64_t noise_seed = 0;
};

int cmd_degrade(const DegradeArgs& a, std::ostream& out)
{
    const DatasetManifest m = load_manifest(a.manifest);
    const Degradation d{4, a.sigma, a.noise_seed};
    for (std::size_t i = 0; i < m.files.size(); ++i) {
        const PairSource src = load_pair_source(m, i, d);
        const fs::path dst = fs::path(a.out) / m.files[i];
        fs::create_directories(dst.parent_path());
        save_image(dst.string(), src.lr);
    }
    nlohmann::json info = {{"manifest", a.manifest}, {"degradation", d.describe()},
                           {"scale", d.scale}, {"awgn_sigma", d.awgn_sigma}, {"noise_seed", d.noise_seed},
                           {"files", m.files.size()}};
    std::ofstream(fs::path(a.out) / "degradation.json") << info.dump(2) << "\n";
    out << "degraded " << m.files.size() << " images (" << d.describe() << ") into " << a.out << "\n";
    return kOk;
}

struct TrainArgs {
    std::string stage, profile = "test", manifest, out, init, lr_dir, extractor, resume;
    std::optional<std::int64_t> iters;
    std::optional<int> batch, patch;
    std::optional<float> lr;
    std::uint64_t seed = 0;
    float lambda = 1e3f, eta = 5e-3f, sigma = 0.0f;
    std::uint64_t noise_seed = 0;
    bool augment = true;
    std::int64_t snapshot_every = 0;
};

std::int64_t default_iters(Stage s, bool test_profile)
{
    if (!test_profile)
        return StageSchedule::standard(s).max_iters;
    return s == Stage::Content ? 4000 : 1000;
}

std::string config_snapshot(const TrainArgs& a, const StageSchedule& sc, int patch, const std::string& init)
{
    std::ostringstream os;
    os << "stage=" << a.stage << "\nprofile=" << a.profile << "\nmanifest=" << a.manifest << "\nout=" << a.out
       << "\niters=" << sc.max_iters << "\nbatch=" << sc.batch_size << "\npatch=" << patch
       << "\nlr=" << sc.initial_lr << "\nseed=" << a.seed << "\nlambda=" << a.lambda << "\neta=" << a.eta
       << "\nsigma=" << a.sigma << "\nnoise_seed=" << a.noise_seed << "\naugment=" << (a.augment ? "true" : "false")
       << "\nsnapshot_every=" << a.snapshot_every << "\n";
    if (!init.empty())
        os << "init=" << init << "\n";
    if (!a.lr_dir.empty())
        os << "lr_dir=" << a.lr_dir << "\n";
    if (!a.extractor.empty())
        os << "extractor=" << a.extractor << "\n";
    return os.str();
}

int cmd_train(const TrainArgs& a, std::ostream& out)
{
    const Stage stage = stage_from_name(a.stage);
    const PponConfig cfg = profile_config(a.profile);
    const bool test = a.profile == "test";

    std::string init;
    std::optional<PponNet> model;
    if (stage == Stage::Content) {
        model.emplace(cfg, a.seed);
    } else {
        init = a.init.empty() ? (fs::path(a.out) / (std::string(previous_stage(stage)) + ".ckpt")).string() : a.init;
        if (!fs::exists(init))
            throw UsageError(std::string("the ") + a.stage + " stage needs the " + previous_stage(stage) +
                             " checkpoint " + init + ", which does not exist");
        model.emplace(load_model(init));
        if (!(model->config() == cfg))
            throw UsageError(init + " was trained with a different profile than '" + a.profile + "'");
    }

    DatasetManifest m = load_manifest(a.manifest);
    if (!a.lr_dir.empty())
        m.lr_dir = a.lr_dir;
    const Degradation d{4, a.sigma, a.noise_seed};
    const int patch = a.patch.value_or(test ? 96 : 192);
    PatchDataset data(load_pair_sources(m, d), patch, a.augment, mix_seed(a.seed, 1 + int(stage)));

    const std::int64_t iters = a.iters.value_or(default_iters(stage, test));
    const int batch = a.batch.value_or(test ? 4 : 25);
    StageSchedule sc = test ? StageSchedule::desk(stage, iters, batch) : StageSchedule::standard(stage);
    sc.max_iters = iters;
    sc.batch_size = batch;
    if (a.lr)
        sc.initial_lr = *a.lr;

    std::optional<FeatureExtractor> extractor;
    if (!a.extractor.empty())
        extractor.emplace(FeatureExtractor::load(a.extractor));

    fs::create_directories(a.out);
    const fs::path base = fs::path(a.out) / a.stage;
    TrainOptions opt;
    opt.lambda = a.lambda;
    opt.eta = a.eta;
    opt.seed = a.seed;
    opt.extractor = extractor ? &*extractor : nullptr;
    opt.out_checkpoint = base.string() + ".ckpt";
    opt.log_path = base.string() + ".jsonl";
    opt.snapshot_every = a.snapshot_every;
    opt.snapshot_path = base.string() + ".snapshot";
    opt.resume_from = a.resume;
    std::ofstream(base.string() + ".config") << config_snapshot(a, sc, patch, init);

    const RunRecord rec = train_stage(*model, sc, data, opt);
    out << a.stage << " stage: " << rec.iterations.size() << " iterations";
    if (!rec.iterations.empty()) {
        out << ", final";
        for (const auto& [k, v] : rec.iterations.back().losses)
            out << " " << k << "=" << v;
        out << ", mean total over last 100 = " << rec.moving_average("total", 100);
    }
    out << "\ncheckpoint: " << opt.out_checkpoint << "\nlog: " << opt.log_path << "\n";
    return kOk;
}

struct SrArgs {
    std::string checkpoint, out, emit = "all";
    std::vector<std::string> inputs;
    float alpha = 1.0f;
};

int cmd_sr(const SrArgs& a, std::ostream& out)
{
    const PponNet model = load_model(a.checkpoint);
    fs::create_directories(a.out);
    for (const auto& input : a.inputs) {
        const Tensor lr = load_image(input);
        const PponOutputs o = model.infer(lr, a.alpha);
        const std::string stem = fs::path(input).stem().string();
        auto write = [&](const char* suffix, const Tensor& img) {
            const std::string path = (fs::path(a.out) / (stem + suffix + ".png")).string();
            save_image(path, img);
            out << path << "\n";
        };
        if (a.emit == "c" || a.emit == "all")
            write("_c", o.sr_c);
        if (a.emit == "s" || a.emit == "all")
            write("_s", o.sr_s);
        if (a.emit == "p" || a.emit == "all")
            write("_p", o.sr_p);
    }
    return kOk;
}

struct EvalArgs {
    std::string checkpoint, manifest, out, lr_dir, sr_dir, alphas = "1";
    int shave = 4;
    float sigma = 0.0f;
    std::uint64_t noise_seed = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out)
{
    DatasetManifest m = load_manifest(a.manifest);
    if (!a.lr_dir.empty())
        m.lr_dir = a.lr_dir;
    EvalReport report;
    if (!a.sr_dir.empty()) {
        if (!a.checkpoint.empty())
            throw UsageError("--sr-dir and --checkpoint are mutually exclusive");
        report = evaluate_directory(a.sr_dir, m, a.shave);
    } else {
        EvalOptions eo;
        eo.alphas = parse_alphas(a.alphas);
        eo.degradation = {4, a.sigma, a.noise_seed};
        eo.border_shave = a.shave;
        std::optional<PponNet> model;
        if (!a.checkpoint.empty())
            model.emplace(load_model(a.checkpoint));
        report = evaluate_dataset(model ? &*model : nullptr, m, eo);
        if (model)
            report.config["checkpoint"] = a.checkpoint;
    }
    fs::create_directories(a.out);
    report.write_jsonl((fs::path(a.out) / "report.jsonl").string());
    const std::string table = report.table();
    std::ofstream(fs::path(a.out) / "report.txt") << table;
    out << table;
    for (const auto& f : report.failures)
        out << "failed: " << f.image << ": " << f.error << "\n";
    return report.failures.empty() ? kOk : kRuntimeError;
}

int cmd_params(const std::string& profile, std::ostream& out)
{
    Rng rng(0);
    Hffb full_hffb("hffb", HffbConfig{}, rng);
    PponNet net(profile_config(profile), 0);
    out << "hffb (K=8, 32 branch channels, 64 io channels): " << count_parameters(full_hffb) << "\n";
    for (Branch b : {Branch::Content, Branch::Structure, Branch::Perception}) {
        std::size_t n = 0;
        net.visit_branch(b, [&](Parameter& p) { n += p.value.numel(); });
        out << branch_prefix(b) << " " << n << "\n";
    }
    out << profile << " total: " << count_parameters(net) << "\n";
    return kOk;
}

int cmd_info(const std::string& checkpoint, std::ostream& out)
{
    const CheckpointInfo info = read_checkpoint_info(checkpoint);
    out << info.header.dump(2) << "\n";
    return kOk;
}

} // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args)
{
    std::vector<std::string> rest, flags;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& s = args[i];
        if (s == "--config") {
            if (i + 1 >= args.size())
                throw ConfigError("--config needs a file name");
            const auto f = read_config_flags(args[++i]);
            flags.insert(flags.end(), f.begin(), f.end());
        } else if (s.rfind("--config=", 0) == 0) {
            const auto f = read_config_flags(s.substr(9));
            flags.insert(flags.end(), f.begin(), f.end());
        } else {
            rest.push_back(s);
        }
    }
    if (flags.empty())
        return rest;
    // Keep the subcommand name first; flags from the file precede command-line
    // flags so the latter win.
    std::vector<std::string> out;
    std::size_t first = 0;
    if (!rest.empty() && rest[0].rfind("-", 0) != 0) {
        out.push_back(rest[0]);
        first = 1;
    }
    out.insert(out.end(), flags.begin(), flags.end());
    out.insert(out.end(), rest.begin() + std::ptrdiff_t(first), rest.end());
    return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err)
{
    apply_thread_env();

    CLI::App app{"Progressive perception-oriented 4x super-resolution", "ppon"};
    app.require_subcommand(1);
    // Config-file values come first on the expanded command line; the last one wins.
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_help_all_flag("--help-all", "Help for every subcommand");
    app.footer(std::string("Environment: ") + kThreadsEnv + " sets the BLAS thread count.\n"
               "Exit codes: 0 success, 1 runtime failure, 2 usage error.");
    std::string config_doc;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_doc,
                        "key=value file; keys are flag names without dashes, flags on the command line win");
    };

    FixtureArgs fa;
    auto* fixture = app.add_subcommand("fixture", "Write the synthetic test-card images and a manifest");
    add_config(fixture);
    fixture->add_option("--out", fa.out, "Output directory")->required();
    fixture->add_option("--count", fa.count, "Number of images")->capture_default_str()->check(CLI::PositiveNumber);
    fixture->add_option("--size", fa.size, "Image side in pixels")->capture_default_str()->check(CLI::Range(16, 4096));
    fixture->add_option("--seed", fa.seed, "Generator seed")->capture_default_str();

    DegradeArgs da;
    auto* degrade = app.add_subcommand("degrade", "Write bicubic x1/4 (optionally noisy) LR copies of a manifest");
    add_config(degrade);
    degrade->add_option("--manifest", da.manifest, "HR manifest")->required()->check(CLI::ExistingFile);
    degrade->add_option("--out", da.out, "Output directory for the LR tree")->required();
    degrade->add_option("--sigma", da.sigma, "AWGN level on the 0-255 scale")->capture_default_str()->check(CLI::NonNegativeNumber);
    degrade->add_option("--noise-seed", da.noise_seed, "Noise seed")->capture_default_str();

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train one stage (content, structure or perception)");
    add_config(train);
    train->add_option("--stage", ta.stage, "Stage to train")->required()->check(CLI::IsMember({"content", "structure", "perception"}));
    train->add_option("--profile", ta.profile, "Model size")->capture_default_str()->check(CLI::IsMember({"test", "full"}));
    train->add_option("--manifest", ta.manifest, "Training manifest")->required()->check(CLI::ExistingFile);
    train->add_option("--out", ta.out, "Output directory (checkpoint, log, config snapshot)")->required();
    train->add_option("--init", ta.init, "Checkpoint of the previous stage (default: <out>/<previous stage>.ckpt)");
    train->add_option("--lr-dir", ta.lr_dir, "Pre-degraded LR images with the manifest's relative names");
    train->add_option("--iters", ta.iters, "Iteration budget (test profile: 4000 content, 1000 otherwise)")->check(CLI::NonNegativeNumber);
    train->add_option("--batch", ta.batch, "Mini-batch size (test 4, full 25)")->check(CLI::PositiveNumber);
    train->add_option("--patch", ta.patch, "HR patch side (test 96, full 192)")->check(CLI::PositiveNumber);
    train->add_option("--lr", ta.lr, "Initial learning rate override")->check(CLI::PositiveNumber);
    train->add_option("--seed", ta.seed, "Run seed (model init, patches, discriminator)")->capture_default_str();
    train->add_option("--lambda", ta.lambda, "MS-SSIM weight of the structure loss")->capture_default_str()->check(CLI::NonNegativeNumber);
    train->add_option("--eta", ta.eta, "Adversarial weight of the perception loss")->capture_default_str()->check(CLI::NonNegativeNumber);
    train->add_option("--sigma", ta.sigma, "AWGN level on the LR images (0-255 scale)")->capture_default_str()->check(CLI::NonNegativeNumber);
    train->add_option("--noise-seed", ta.noise_seed, "Noise seed")->capture_default_str();
    train->add_option("--augment", ta.augment, "Random flips and rotations")->capture_default_str();
    train->add_option("--extractor", ta.extractor, "Feature extractor weights (default: built-in desk extractor)");
    train->add_option("--snapshot-every", ta.snapshot_every, "Write a resumable <stage>.snapshot every N iterations")->capture_default_str()->check(CLI::NonNegativeNumber);
    train->add_option("--resume", ta.resume, "Continue from a snapshot");

    SrArgs sa;
    auto* sr = app.add_subcommand("sr", "Super-resolve PNG images");
    add_config(sr);
    sr->add_option("--checkpoint", sa.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    sr->add_option("--input", sa.inputs, "Input PNG(s)")->required()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->check(CLI::ExistingFile);
    sr->add_option("--out", sa.out, "Output directory")->required();
    sr->add_option("--alpha", sa.alpha, "Perceptual blend factor in [0, 1]")->capture_default_str()->check(CLI::Range(0.0f, 1.0f));
    sr->add_option("--emit", sa.emit, "Outputs to write: c, s, p or all")->capture_default_str()->check(CLI::IsMember({"c", "s", "p", "all"}));

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "PSNR / SSIM / MS-SSIM on the Y channel");
    add_config(eval);
    eval->add_option("--manifest", ea.manifest, "HR manifest")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", ea.out, "Report directory")->required();
    eval->add_option("--checkpoint", ea.checkpoint, "Model checkpoint (omit for the bicubic baseline only)");
    eval->add_option("--sr-dir", ea.sr_dir, "Score existing images with the manifest's names instead");
    eval->add_option("--lr-dir", ea.lr_dir, "Pre-degraded LR images instead of degrading on the fly");
    eval->add_option("--alphas", ea.alphas, "Comma-separated alpha values for sr_p")->capture_default_str();
    eval->add_option("--shave", ea.shave, "Border pixels ignored by the metrics")->capture_default_str()->check(CLI::NonNegativeNumber);
    eval->add_option("--sigma", ea.sigma, "AWGN level on the LR images (0-255 scale)")->capture_default_str()->check(CLI::NonNegativeNumber);
    eval->add_option("--noise-seed", ea.noise_seed, "Noise seed")->capture_default_str();

    std::string profile = "full";
    auto* params = app.add_subcommand("params", "Print parameter counts");
    params->add_option("--profile", profile, "Model size")->capture_default_str()->check(CLI::IsMember({"test", "full"}));

    std::string info_path;
    auto* info = app.add_subcommand("info", "Print a checkpoint header");
    info->add_option("--checkpoint", info_path, "Checkpoint")->required()->check(CLI::ExistingFile);

    try {
        std::vector<std::string> args = expand_config(raw_args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        auto* target = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        out << target->help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        if (!app.get_subcommands().empty())
            err << "see '" << app.get_subcommands().front()->get_name() << " --help'\n";
        return kUsageError;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    }

    try {
        if (*fixture) return cmd_fixture(fa, out);
        if (*degrade) return cmd_degrade(da, out);
        if (*train) return cmd_train(ta, out);
        if (*sr) return cmd_sr(sa, out);
        if (*eval) return cmd_eval(ea, out);
        if (*params) return cmd_params(profile, out);
        if (*info) return cmd_info(info_path, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}

int run(int argc, char** argv)
{
    return run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}

} // namespace ppon::cli
