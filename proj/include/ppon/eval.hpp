#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppon/data.hpp"
#include "ppon/ppon_net.hpp"

namespace ppon {

/// BT.601 studio-swing luma: (65.481 R + 128.553 G + 24.966 B + 16) / 255.
Tensor rgb_to_y(const Tensor& img);

/// Drops `border` pixels from every side.
Tensor shave_border(const Tensor& img, int border);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) over the shaved region; +inf for identical inputs.
double psnr(const Tensor& x, const Tensor& y, int border_shave = 0);

struct ImageMetrics {
    double psnr_y = 0.0;
    double ssim_y = 0.0;
    double ms_ssim_y = 0.0;
};

/// PSNR / SSIM / MS-SSIM on the luma channel after shaving both images alike.
/// MS-SSIM uses five scales when the shaved image allows it, otherwise three.
ImageMetrics image_metrics(const Tensor& sr, const Tensor& hr, int border_shave);

struct EvalRow {
    std::string image;
    std::string output;  // "bicubic", "sr_c", "sr_s", "sr_p@<alpha>", "sr"
    ImageMetrics m;
};

struct EvalFailure {
    std::string image;
    std::string error;
};

struct EvalAggregate {
    std::string output;
    int count = 0;
    ImageMetrics mean;
};

struct EvalReport {
    nlohmann::json config = nlohmann::json::object();
    std::vector<EvalRow> rows;
    std::vector<EvalFailure> failures;

    /// Arithmetic means per output label, in first-appearance order.
    std::vector<EvalAggregate> aggregates() const;
    std::optional<EvalAggregate> aggregate(const std::string& output) const;

    /// One JSON object per line: config, rows, failures, then means. Infinite
    /// PSNR values are written as the string "inf".
    void write_jsonl(const std::string& path) const;
    static EvalReport read_jsonl(const std::string& path);
    /// Fixed-width table of the means, one line per output.
    std::string table() const;
};

std::string sr_p_label(float alpha);

struct EvalOptions {
    std::vector<float> alphas{1.0f};
    Degradation degradation{};
    int border_shave = 4;
    bool bicubic_baseline = true;
};

/// Evaluates pre-built (LR, HR) pairs: bicubic baseline, sr_c, sr_s and sr_p
/// at every alpha. A null model yields the bicubic rows only. Failing images
/// are recorded and skipped.
EvalReport evaluate_pairs(const PponNet* model, const std::vector<PairSource>& pairs, const EvalOptions& opt);

/// Loads each manifest image, degrades it (or reads the manifest's LR file)
/// and evaluates it as evaluate_pairs does.
EvalReport evaluate_dataset(const PponNet* model, const DatasetManifest& manifest, const EvalOptions& opt);

/// Compares `sr_dir/<name>` against each manifest HR image (output label "sr").
EvalReport evaluate_directory(const std::string& sr_dir, const DatasetManifest& manifest, int border_shave);

} // namespace ppon
