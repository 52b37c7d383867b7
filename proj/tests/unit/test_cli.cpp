#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ppon/checkpoint.hpp"
#include "ppon/cli.hpp"
#include "ppon/data.hpp"
#include "ppon/error.hpp"
#include "ppon/eval.hpp"

using namespace ppon;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(const std::vector<std::string>& args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string bytes_of(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Scratch directory removed at scope exit.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("ppon_cli_" + name))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

} // namespace

TEST_CASE("cli: exit codes for usage errors and runtime failures")
{
    CHECK(run_cli({}).code == cli::kUsageError);
    CHECK(run_cli({"bogus"}).code == cli::kUsageError);
    CHECK(run_cli({"params", "--profile", "huge"}).code == cli::kUsageError);
    const Result missing = run_cli({"sr", "--out", "x"});
    CHECK(missing.code == cli::kUsageError);
    CHECK(missing.err.find("error:") != std::string::npos);

    TempDir t("codes");
    const std::string junk = t / "junk.ckpt";
    std::ofstream(junk) << "not a checkpoint";
    CHECK(run_cli({"info", "--checkpoint", junk}).code == cli::kRuntimeError);

    const Result help = run_cli({"train", "--help"});
    CHECK(help.code == cli::kOk);
    CHECK(help.out.find("--stage") != std::string::npos);
}

TEST_CASE("cli: params reports the closed-form totals")
{
    const Result r = run_cli({"params", "--profile", "test"});
    REQUIRE(r.code == cli::kOk);
    CHECK(r.out.find("121769") != std::string::npos);
    CHECK(r.out.find("164160") != std::string::npos);
}

TEST_CASE("cli: config files expand to flags that the command line overrides")
{
    TempDir t("config");
    const std::string cfg = t / "run.cfg";
    std::ofstream(cfg) << "# comment\nprofile = full\n\nnoise_seed=\"3\"\n";
    const auto args = cli::expand_config({"params", "--config", cfg, "--profile", "test"});
    CHECK(args == std::vector<std::string>{"params", "--profile=full", "--noise-seed=3", "--profile", "test"});

    std::ofstream(cfg) << "profile=test\n";
    CHECK(run_cli({"params", "--config", cfg}).code == cli::kOk);
    CHECK(run_cli({"params", "--config", cfg, "--profile", "full"}).out.find("full total") != std::string::npos);

    std::ofstream(cfg) << "colour=blue\n";
    CHECK(run_cli({"params", "--config", cfg}).code == cli::kUsageError);
    std::ofstream(cfg) << "no equals sign\n";
    CHECK_THROWS_AS(cli::expand_config({"params", "--config", cfg}), ConfigError);
    CHECK(run_cli({"params", "--config", cfg}).code == cli::kUsageError);
    CHECK(run_cli({"params", "--config", t / "absent.cfg"}).code == cli::kUsageError);
}

TEST_CASE("cli: fixture and degrade are deterministic")
{
    TempDir t("degrade");
    REQUIRE(run_cli({"fixture", "--out", t / "hr", "--count", "2", "--size", "64"}).code == cli::kOk);
    const std::string manifest = t / "hr/train.txt";
    REQUIRE(fs::exists(manifest));
    for (const char* dir : {"lr1", "lr2"})
        REQUIRE(run_cli({"degrade", "--manifest", manifest, "--out", t / dir, "--sigma", "10", "--noise-seed", "5"})
                    .code == cli::kOk);
    for (const char* f : {"fixture_0.png", "fixture_1.png"}) {
        CHECK(bytes_of(t.path / "lr1" / f) == bytes_of(t.path / "lr2" / f));
        CHECK(load_image((t.path / "lr1" / f).string()).shape() == Shape{1, 3, 16, 16});
    }
    CHECK(fs::exists(t.path / "lr1/degradation.json"));
}

TEST_CASE("cli: sr writes 4x outputs and p at alpha 0 matches s byte for byte")
{
    TempDir t("sr");
    PponNet net(PponConfig::test(), 61);
    net.provenance = {"content", "structure", "perception"};
    const std::string ckpt = t / "model.ckpt";
    save_checkpoint(ckpt, net);
    const std::string input = t / "img.png";
    save_image(input, synthetic_image(2, 48, 3));

    REQUIRE(run_cli({"sr", "--checkpoint", ckpt, "--input", input, "--out", t / "out", "--alpha", "0"}).code ==
            cli::kOk);
    const fs::path s = t.path / "out/img_s.png", p = t.path / "out/img_p.png";
    REQUIRE(fs::exists(s));
    REQUIRE(fs::exists(p));
    CHECK(bytes_of(s) == bytes_of(p));
    CHECK(load_image(s.string()).shape() == Shape{1, 3, 192, 192});

    REQUIRE(run_cli({"sr", "--checkpoint", ckpt, "--input", input, "--out", t / "only", "--emit", "c"}).code ==
            cli::kOk);
    CHECK(fs::exists(t.path / "only/img_c.png"));
    CHECK_FALSE(fs::exists(t.path / "only/img_p.png"));
    CHECK(run_cli({"sr", "--checkpoint", ckpt, "--input", input, "--out", t / "x", "--alpha", "1.5"}).code ==
          cli::kUsageError);
}

TEST_CASE("cli: eval of the ground truth against itself scores SSIM 1")
{
    TempDir t("eval");
    REQUIRE(run_cli({"fixture", "--out", t / "hr", "--count", "2", "--size", "64"}).code == cli::kOk);
    const std::string manifest = t / "hr/train.txt";
    const Result r = run_cli({"eval", "--manifest", manifest, "--sr-dir", t / "hr", "--out", t / "rep"});
    REQUIRE(r.code == cli::kOk);
    const EvalReport rep = EvalReport::read_jsonl(t / "rep/report.jsonl");
    REQUIRE(rep.rows.size() == 2);
    for (const auto& row : rep.rows) {
        CHECK(row.m.ssim_y == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(std::isinf(row.m.psnr_y));
    }

    const Result b = run_cli({"eval", "--manifest", manifest, "--out", t / "bic"});
    CHECK(b.code == cli::kOk);
    CHECK(b.out.find("bicubic") != std::string::npos);
    CHECK(run_cli({"eval", "--manifest", manifest, "--out", t / "bad", "--alphas", "0,2"}).code == cli::kUsageError);
}

TEST_CASE("cli: a later stage without its previous checkpoint is a usage error")
{
    TempDir t("stage");
    REQUIRE(run_cli({"fixture", "--out", t / "hr", "--count", "1", "--size", "64"}).code == cli::kOk);
    const Result r = run_cli({"train", "--stage", "structure", "--manifest", t / "hr/train.txt", "--out", t / "run"});
    CHECK(r.code == cli::kUsageError);
    CHECK(r.err.find("content") != std::string::npos);
}

TEST_CASE("cli: a short content run writes its checkpoint, log and config")
{
    TempDir t("train");
    REQUIRE(run_cli({"fixture", "--out", t / "hr", "--count", "2", "--size", "64"}).code == cli::kOk);
    const Result r = run_cli({"train", "--stage", "content", "--manifest", t / "hr/train.txt", "--out", t / "run",
                              "--iters", "2", "--batch", "1", "--patch", "48"});
    REQUIRE(r.code == cli::kOk);
    for (const char* f : {"content.ckpt", "content.jsonl", "content.config"})
        CHECK(fs::exists(t.path / "run" / f));
    CHECK(read_checkpoint_info(t / "run/content.ckpt").provenance == std::vector<std::string>{"content"});
    CHECK(run_cli({"info", "--checkpoint", t / "run/content.ckpt"}).out.find("provenance") != std::string::npos);
}
