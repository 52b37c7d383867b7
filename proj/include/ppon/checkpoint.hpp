#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppon/ppon_net.hpp"

namespace ppon {

// Container layout (all integers little-endian):
//   8 bytes   magic "PPONCKPT"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON; header["tensors"] lists {name, shape} in blob order
//   blobs     raw float32 data for each listed tensor, back to back
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedBlob {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Container {
    nlohmann::json header = nlohmann::json::object();
    std::vector<NamedBlob> blobs;

    const NamedBlob* find(const std::string& name) const;
};

/// Writes to a temporary sibling and renames it into place.
void write_container(const std::string& path, const Container& c);
/// Validates magic, version, header and exact blob sizes before returning.
Container read_container(const std::string& path);

class Discriminator;

struct SaveOptions {
    /// Branches whose parameters are written; all three by default.
    std::vector<Branch> branches{Branch::Content, Branch::Structure, Branch::Perception};
    bool include_optimizer = false;
    Discriminator* discriminator = nullptr;
    nlohmann::json train_state;  // null when absent
    nlohmann::json metadata;     // merged into header["metadata"]
};

struct LoadOptions {
    /// Accept a checkpoint holding a subset of the model's parameters (e.g. a
    /// content-only export); the rest keep their current values.
    bool allow_partial = false;
    bool load_optimizer = false;
    Discriminator* discriminator = nullptr;
};

struct CheckpointInfo {
    nlohmann::json header;
    PponConfig config;
    std::uint64_t seed = 0;
    std::vector<std::string> provenance;
    nlohmann::json train_state;
};

void save_checkpoint(const std::string& path, PponNet& model, const SaveOptions& opt = {});

/// All-or-nothing: nothing in `model` changes unless the whole file validates.
CheckpointInfo load_checkpoint(const std::string& path, PponNet& model, const LoadOptions& opt = {});

/// Header-only peek (config, seed, provenance).
CheckpointInfo read_checkpoint_info(const std::string& path);

/// Builds a model from the checkpoint's config and seed, then loads it.
PponNet load_model(const std::string& path);

/// FNV-1a over the raw bytes of the given parameters, in order.
std::uint64_t parameter_hash(const std::vector<Parameter*>& params);

} // namespace ppon
