#include "ppon/eval.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "ppon/error.hpp"
#include "ppon/losses.hpp"
#include "ppon/ops.hpp"

namespace fs = std::filesystem;

namespace ppon {

Tensor rgb_to_y(const Tensor& img)
{
    const Shape s = img.shape();
    if (s.c != 3)
        throw ShapeError("rgb_to_y expects 3 channels, got " + s.str());
    const std::size_t plane = s.plane();
    std::vector<float> out(std::size_t(s.n) * plane);
    const auto d = img.data();
    for (int n = 0; n < s.n; ++n) {
        const float* r = d.data() + std::size_t(n) * 3 * plane;
        const float* g = r + plane;
        const float* b = g + plane;
        float* y = out.data() + std::size_t(n) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            y[i] = float((65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0) / 255.0);
    }
    return Tensor({s.n, 1, s.h, s.w}, std::move(out));
}

Tensor shave_border(const Tensor& img, int border)
{
    if (border < 0)
        throw ConfigError("border shave must be non-negative");
    const Shape s = img.shape();
    if (s.h <= 2 * border || s.w <= 2 * border)
        throw ShapeError("shaving " + std::to_string(border) + " px leaves nothing of a " + s.str() + " image");
    if (border == 0)
        return img;
    return crop(img, border, border, s.h - 2 * border, s.w - 2 * border);
}

double psnr(const Tensor& x, const Tensor& y, int border_shave)
{
    check_same_shape(x, y, "psnr");
    const Tensor a = shave_border(x, border_shave);
    const Tensor b = shave_border(y, border_shave);
    const auto da = a.data(), db = b.data();
    double se = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double d = double(da[i]) - double(db[i]);
        se += d * d;
    }
    if (se == 0.0)
        return kPsnrIdentical;
    return 10.0 * std::log10(double(da.size()) / se);
}

ImageMetrics image_metrics(const Tensor& sr, const Tensor& hr, int border_shave)
{
    check_same_shape(sr, hr, "image_metrics");
    NoGradGuard ng;
    const Tensor ys = shave_border(rgb_to_y(sr), border_shave);
    const Tensor yh = shave_border(rgb_to_y(hr), border_shave);
    ImageMetrics m;
    m.psnr_y = psnr(ys, yh, 0);
    m.ssim_y = ssim(ys, yh).ssim.item();
    const int side = std::min(ys.shape().h, ys.shape().w);
    m.ms_ssim_y = ms_ssim(ys, yh, MsWeights::for_size(side)).item();
    return m;
}

std::vector<EvalAggregate> EvalReport::aggregates() const
{
    std::vector<EvalAggregate> out;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const EvalAggregate& a) { return a.output == r.output; });
        if (it == out.end()) {
            out.push_back({r.output, 0, {}});
            it = out.end() - 1;
        }
        it->count += 1;
        it->mean.psnr_y += r.m.psnr_y;
        it->mean.ssim_y += r.m.ssim_y;
        it->mean.ms_ssim_y += r.m.ms_ssim_y;
    }
    for (auto& a : out) {
        a.mean.psnr_y /= a.count;
        a.mean.ssim_y /= a.count;
        a.mean.ms_ssim_y /= a.count;
    }
    return out;
}

std::optional<EvalAggregate> EvalReport::aggregate(const std::string& output) const
{
    for (auto& a : aggregates())
        if (a.output == output)
            return a;
    return std::nullopt;
}

namespace {

nlohmann::json number(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (std::isnan(v))
        return "nan";
    return v;
}

double number_from(const nlohmann::json& j)
{
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        throw IoError("unexpected metric value '" + s + "'");
    }
    return j.get<double>();
}

nlohmann::json metrics_json(const ImageMetrics& m)
{
    return {{"psnr_y", number(m.psnr_y)}, {"ssim_y", number(m.ssim_y)}, {"ms_ssim_y", number(m.ms_ssim_y)}};
}

std::string fmt(double v, int prec)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

} // namespace

void EvalReport::write_jsonl(const std::string& path) const
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write report " + path);
    out << nlohmann::json{{"type", "config"}, {"config", config}}.dump() << '\n';
    for (const auto& r : rows) {
        nlohmann::json j = metrics_json(r.m);
        j["type"] = "row";
        j["image"] = r.image;
        j["output"] = r.output;
        out << j.dump() << '\n';
    }
    for (const auto& f : failures)
        out << nlohmann::json{{"type", "failure"}, {"image", f.image}, {"error", f.error}}.dump() << '\n';
    for (const auto& a : aggregates()) {
        nlohmann::json j = metrics_json(a.mean);
        j["type"] = "mean";
        j["output"] = a.output;
        j["count"] = a.count;
        out << j.dump() << '\n';
    }
}

EvalReport EvalReport::read_jsonl(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open report " + path);
    EvalReport r;
    std::string line;
    try {
        while (std::getline(in, line)) {
            if (line.empty())
                continue;
            const auto j = nlohmann::json::parse(line);
            const std::string type = j.at("type");
            if (type == "config") {
                r.config = j.at("config");
            } else if (type == "row") {
                r.rows.push_back({j.at("image"), j.at("output"),
                                  {number_from(j.at("psnr_y")), number_from(j.at("ssim_y")),
                                   number_from(j.at("ms_ssim_y"))}});
            } else if (type == "failure") {
                r.failures.push_back({j.at("image"), j.at("error")});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": malformed report line: " + e.what());
    }
    return r;
}

std::string EvalReport::table() const
{
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-14s %6s %9s %8s %10s\n", "output", "images", "PSNR-Y", "SSIM-Y", "MS-SSIM-Y");
    os << buf;
    for (const auto& a : aggregates()) {
        std::snprintf(buf, sizeof buf, "%-14s %6d %9s %8s %10s\n", a.output.c_str(), a.count,
                      fmt(a.mean.psnr_y, 2).c_str(), fmt(a.mean.ssim_y, 4).c_str(),
                      fmt(a.mean.ms_ssim_y, 4).c_str());
        os << buf;
    }
    if (!failures.empty())
        os << failures.size() << " image(s) failed\n";
    return os.str();
}

std::string sr_p_label(float alpha)
{
    std::ostringstream os;
    os << "sr_p@" << alpha;
    return os.str();
}

namespace {

nlohmann::json options_json(const EvalOptions& opt)
{
    return {
        {"alphas", opt.alphas},
        {"degradation", opt.degradation.describe()},
        {"border_shave", opt.border_shave},
        {"bicubic_baseline", opt.bicubic_baseline},
        {"color_space", "BT.601 luma"},
    };
}

void evaluate_one(const PponNet* model, const PairSource& p, const EvalOptions& opt, EvalReport& report)
{
    const Shape hs = p.hr.shape();
    std::vector<EvalRow> rows;
    if (opt.bicubic_baseline)
        rows.push_back({p.name, "bicubic", image_metrics(bicubic_resize(p.lr, hs.h, hs.w), p.hr, opt.border_shave)});
    if (!model) {
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
        return;
    }
    const float first_alpha = opt.alphas.empty() ? 1.0f : opt.alphas.front();
    PponOutputs o = model->infer(p.lr, first_alpha);
    rows.push_back({p.name, "sr_c", image_metrics(o.sr_c, p.hr, opt.border_shave)});
    rows.push_back({p.name, "sr_s", image_metrics(o.sr_s, p.hr, opt.border_shave)});
    for (std::size_t i = 0; i < opt.alphas.size(); ++i) {
        const float a = opt.alphas[i];
        Tensor sr_p = o.sr_p;
        if (i > 0) {
            NoGradGuard ng;
            sr_p = model->forward_perceptual({o.f_s, o.sr_s}, a).sr_p;
        }
        rows.push_back({p.name, sr_p_label(a), image_metrics(sr_p, p.hr, opt.border_shave)});
    }
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
}

} // namespace

EvalReport evaluate_pairs(const PponNet* model, const std::vector<PairSource>& pairs, const EvalOptions& opt)
{
    EvalReport report;
    report.config = options_json(opt);
    if (model) {
        report.config["model"] = model->config().to_json();
        report.config["provenance"] = model->provenance;
    }
    for (const auto& p : pairs) {
        try {
            evaluate_one(model, p, opt, report);
        } catch (const std::exception& e) {
            report.failures.push_back({p.name, e.what()});
        }
    }
    return report;
}

EvalReport evaluate_dataset(const PponNet* model, const DatasetManifest& manifest, const EvalOptions& opt)
{
    EvalReport report;
    report.config = options_json(opt);
    if (model) {
        report.config["model"] = model->config().to_json();
        report.config["provenance"] = model->provenance;
    }
    report.config["manifest_root"] = manifest.root;
    report.config["split"] = manifest.split;
    for (std::size_t i = 0; i < manifest.files.size(); ++i) {
        try {
            evaluate_one(model, load_pair_source(manifest, i, opt.degradation), opt, report);
        } catch (const std::exception& e) {
            report.failures.push_back({manifest.files[i], e.what()});
        }
    }
    return report;
}

EvalReport evaluate_directory(const std::string& sr_dir, const DatasetManifest& manifest, int border_shave)
{
    EvalReport report;
    report.config = {{"sr_dir", sr_dir}, {"manifest_root", manifest.root}, {"border_shave", border_shave},
                     {"color_space", "BT.601 luma"}};
    for (std::size_t i = 0; i < manifest.files.size(); ++i) {
        try {
            const Tensor hr = load_image(manifest.hr_path(i));
            const Tensor sr = load_image((fs::path(sr_dir) / manifest.files[i]).string());
            report.rows.push_back({manifest.files[i], "sr", image_metrics(sr, hr, border_shave)});
        } catch (const std::exception& e) {
            report.failures.push_back({manifest.files[i], e.what()});
        }
    }
    return report;
}

} // namespace ppon
