#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ppon/optim.hpp"
#include "ppon/tensor.hpp"

namespace ppon {

/// 8-bit RGB PNG -> [1,3,H,W] tensor in [0,1]. Grey, palette, alpha and 16-bit
/// inputs are converted to 8-bit RGB.
Tensor load_image(const std::string& path);
/// Clamps to [0,1] and stores round(x * 255). Expects [1,3,H,W].
void save_image(const std::string& path, const Tensor& image);

std::uint8_t to_byte(float v);

/// Separable cubic convolution (Keys, a = -0.5). On downscaling the kernel is
/// widened by the scale factor (antialiasing); borders replicate.
Tensor bicubic_resize(const Tensor& img, int out_h, int out_w);

/// Adds i.i.d. Gaussian noise with std sigma_255/255 and clamps to [0,1].
Tensor add_awgn(const Tensor& img, float sigma_255, std::uint64_t seed);

struct Degradation {
    int scale = 4;
    float awgn_sigma = 0.0f;  // on the 0-255 scale, applied to the LR image
    std::uint64_t noise_seed = 0;

    std::string describe() const;
};

/// Crops H and W down to multiples of `scale`.
Tensor modcrop(const Tensor& img, int scale);
/// Bicubic x1/scale of the full image, then optional AWGN.
Tensor degrade(const Tensor& hr, const Degradation& d);

struct Augmentation {
    bool hflip = false;
    int rot90 = 0;  // counter-clockwise quarter turns, 0..3
};

Tensor hflip(const Tensor& img);
/// Rotates by 90 degrees counter-clockwise `times` times.
Tensor rot90(const Tensor& img, int times);

struct ImagePair {
    Tensor lr;
    Tensor hr;
    Degradation degradation;
    Augmentation augmentation;
    std::string source;
    int lr_top = 0, lr_left = 0;  // crop origin in the LR image
};

/// A full HR image with its full-size degraded LR counterpart.
struct PairSource {
    std::string name;
    Tensor hr;
    Tensor lr;
    Degradation degradation;

    static PairSource from_hr(std::string name, const Tensor& hr, const Degradation& d);
};

/// Aligned random crop; the HR origin is the LR origin times the scale.
ImagePair sample_patch_pair(const PairSource& src, int hr_patch, Rng& rng);
ImagePair augment(const ImagePair& pair, Rng& rng);
ImagePair apply_augmentation(const ImagePair& pair, Augmentation a);

struct DatasetManifest {
    std::string root;
    std::vector<std::string> files;
    std::optional<std::string> lr_dir;  // pre-degraded LR images with the same relative names
    std::string split = "train";

    std::string hr_path(std::size_t i) const;
    std::optional<std::string> lr_path(std::size_t i) const;
};

/// Plain text, one relative path per line; blank lines and '#' comments skipped.
/// Paths are relative to the manifest's directory.
DatasetManifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<std::string>& files);

/// Loads every manifest entry as a PairSource. Pre-degraded LR images are used
/// when the manifest names an LR directory.
std::vector<PairSource> load_pair_sources(const DatasetManifest& m, const Degradation& d);
/// Entry `i` alone; its noise seed is mixed with the index.
PairSource load_pair_source(const DatasetManifest& m, std::size_t i, const Degradation& d);

struct Batch {
    Tensor lr;
    Tensor hr;
};

/// Deterministic patch stream: sample i depends only on (seed, i).
class PatchDataset {
public:
    PatchDataset(std::vector<PairSource> sources, int hr_patch, bool augment, std::uint64_t seed);

    ImagePair sample(std::uint64_t index) const;
    /// Samples [iter * batch, (iter + 1) * batch) stacked along N.
    Batch batch(std::uint64_t iter, int batch_size) const;
    const std::vector<PairSource>& sources() const { return sources_; }
    int hr_patch() const { return hr_patch_; }

private:
    std::vector<PairSource> sources_;
    int hr_patch_;
    bool augment_;
    std::uint64_t seed_;
};

/// Stacks [1,C,H,W] tensors along N.
Tensor stack_batch(const std::vector<Tensor>& items);
/// Image n of a batch as a [1,C,H,W] tensor.
Tensor batch_item(const Tensor& batch, int n);

/// Deterministic synthetic test card: gradients, checkerboards, Gaussian blobs
/// and glyph-like strokes. `kind` cycles through eight variants.
Tensor synthetic_image(int kind, int size, std::uint64_t seed);

} // namespace ppon
