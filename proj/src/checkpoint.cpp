#include "ppon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ppon/error.hpp"
#include "ppon/losses.hpp"

namespace ppon {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'P', 'O', 'N', 'C', 'K', 'P', 'T'};

nlohmann::json shape_json(const Shape& s) { return nlohmann::json::array({s.n, s.c, s.h, s.w}); }

Shape shape_from_json(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 4)
        throw CheckpointError("tensor shape must be a 4-element array");
    Shape s{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
        throw CheckpointError("tensor shape " + s.str() + " has a non-positive dimension");
    return s;
}

} // namespace

const NamedBlob* Container::find(const std::string& name) const
{
    for (const auto& b : blobs)
        if (b.name == name)
            return &b;
    return nullptr;
}

void write_container(const std::string& path, const Container& c)
{
    nlohmann::json header = c.header;
    header["tensors"] = nlohmann::json::array();
    for (const auto& b : c.blobs) {
        if (b.data.size() != b.shape.numel())
            throw CheckpointError("blob '" + b.name + "' size does not match its shape");
        header["tensors"].push_back({{"name", b.name}, {"shape", shape_json(b.shape)}});
    }
    const std::string text = header.dump();

    const std::filesystem::path target(path);
    if (target.has_parent_path())
        std::filesystem::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open " + tmp + " for writing");
        const std::uint32_t version = kContainerVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), std::streamsize(text.size()));
        for (const auto& b : c.blobs)
            out.write(reinterpret_cast<const char*>(b.data.data()),
                      std::streamsize(b.data.size() * sizeof(float)));
        if (!out)
            throw IoError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, target);
}

Container read_container(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open checkpoint " + path);
    const auto file_size = std::filesystem::file_size(path);
    auto fail = [&](const std::string& why) { return CheckpointError(path + ": " + why); };

    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw fail("bad magic, not a checkpoint container");
    if (!in.read(reinterpret_cast<char*>(&version), sizeof version))
        throw fail("truncated before version field");
    if (version != kContainerVersion)
        throw fail("unsupported format version " + std::to_string(version) + " (expected " +
                   std::to_string(kContainerVersion) + ")");
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len))
        throw fail("truncated before header length");
    const std::uint64_t prefix = sizeof kMagic + sizeof version + sizeof len;
    if (len > file_size - prefix)
        throw fail("header length " + std::to_string(len) + " exceeds file size");
    std::string text(len, '\0');
    if (!in.read(text.data(), std::streamsize(len)))
        throw fail("truncated header");

    Container c;
    try {
        c.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("malformed header JSON: ") + e.what());
    }
    if (!c.header.is_object() || !c.header.contains("tensors") || !c.header["tensors"].is_array())
        throw fail("header lacks a tensor list");

    std::uint64_t expected = prefix + len;
    try {
        for (const auto& t : c.header["tensors"]) {
            NamedBlob b;
            b.name = t.at("name").get<std::string>();
            b.shape = shape_from_json(t.at("shape"));
            expected += b.shape.numel() * sizeof(float);
            c.blobs.push_back(std::move(b));
        }
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("malformed tensor entry: ") + e.what());
    }
    if (expected != file_size)
        throw fail("file size " + std::to_string(file_size) + " does not match the " +
                   std::to_string(expected) + " bytes the header describes");
    for (auto& b : c.blobs) {
        b.data.resize(b.shape.numel());
        if (!in.read(reinterpret_cast<char*>(b.data.data()), std::streamsize(b.data.size() * sizeof(float))))
            throw fail("truncated blob '" + b.name + "'");
    }
    c.header.erase("tensors");
    return c;
}

namespace {

NamedBlob blob_of(const std::string& name, const Tensor& t)
{
    return {name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

void append_param(Container& c, Parameter& p, bool with_optimizer, const std::string& prefix,
                  nlohmann::json& steps)
{
    c.blobs.push_back(blob_of(prefix + p.name, p.value));
    if (with_optimizer) {
        c.blobs.push_back({"adam.m/" + prefix + p.name, p.value.shape(), p.adam_m});
        c.blobs.push_back({"adam.v/" + prefix + p.name, p.value.shape(), p.adam_v});
        steps[prefix + p.name] = p.step_count;
    }
}

// Staged assignment: every check runs before the first write.
struct PendingParam {
    Parameter* target;
    const NamedBlob* value;
    const NamedBlob* m = nullptr;
    const NamedBlob* v = nullptr;
    std::int64_t steps = 0;
};

void stage_params(const Container& c, const std::vector<Parameter*>& params, const std::string& prefix,
                  bool allow_missing, bool with_optimizer, const nlohmann::json& steps,
                  const std::string& path, std::vector<PendingParam>& pending)
{
    for (Parameter* p : params) {
        const std::string key = prefix + p->name;
        const NamedBlob* b = c.find(key);
        if (!b) {
            if (allow_missing)
                continue;
            throw CheckpointError(path + ": missing parameter '" + key + "'");
        }
        if (!(b->shape == p->value.shape()))
            throw CheckpointError(path + ": parameter '" + key + "' has shape " + b->shape.str() +
                                  ", model expects " + p->value.shape().str());
        PendingParam pp{p, b};
        if (with_optimizer) {
            pp.m = c.find("adam.m/" + key);
            pp.v = c.find("adam.v/" + key);
            if (!pp.m || !pp.v || !steps.contains(key))
                throw CheckpointError(path + ": optimizer state for '" + key + "' is missing");
            pp.steps = steps.at(key).get<std::int64_t>();
        }
        pending.push_back(pp);
    }
}

CheckpointInfo info_from_header(const nlohmann::json& h, const std::string& path)
{
    CheckpointInfo info;
    info.header = h;
    try {
        if (h.at("kind").get<std::string>() != "ppon")
            throw CheckpointError(path + ": container kind is '" + h.at("kind").get<std::string>() +
                                  "', not a PPON model");
        info.config = PponConfig::from_json(h.at("config"));
        info.seed = h.at("seed").get<std::uint64_t>();
        info.provenance = h.at("provenance").get<std::vector<std::string>>();
        info.train_state = h.value("train_state", nlohmann::json());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path + ": malformed checkpoint header: " + e.what());
    }
    return info;
}

} // namespace

void save_checkpoint(const std::string& path, PponNet& model, const SaveOptions& opt)
{
    Container c;
    nlohmann::json meta = {
        {"init", "kaiming_uniform_fan_in(lrelu 0.2), zero biases, reconstruction output conv x0.1"},
        {"bias", "every convolution carries a bias"},
        {"cfem_trunk", "head conv3x3 -> RRFB chain -> tail conv3x3, long skip from head"},
        {"reconstruction", "conv->shuffle(2)->lrelu x2, conv to RGB"},
        {"endianness", "little"},
        {"dtype", "float32"},
    };
    if (opt.metadata.is_object())
        meta.update(opt.metadata);
    nlohmann::json branches = nlohmann::json::array();
    for (Branch b : opt.branches)
        branches.push_back(branch_prefix(b));
    c.header = {
        {"format_version", kContainerVersion},
        {"kind", "ppon"},
        {"config", model.config().to_json()},
        {"seed", model.seed()},
        {"provenance", model.provenance},
        {"branches", branches},
        {"metadata", meta},
    };
    nlohmann::json steps = nlohmann::json::object();
    for (Branch b : opt.branches)
        model.visit_branch(b, [&](Parameter& p) { append_param(c, p, opt.include_optimizer, "", steps); });
    if (opt.discriminator) {
        c.header["discriminator"] = opt.discriminator->config().to_json();
        opt.discriminator->visit(
            [&](Parameter& p) { append_param(c, p, opt.include_optimizer, "disc/", steps); });
    }
    if (opt.include_optimizer)
        c.header["adam_steps"] = steps;
    if (!opt.train_state.is_null())
        c.header["train_state"] = opt.train_state;
    write_container(path, c);
}

CheckpointInfo read_checkpoint_info(const std::string& path)
{
    return info_from_header(read_container(path).header, path);
}

CheckpointInfo load_checkpoint(const std::string& path, PponNet& model, const LoadOptions& opt)
{
    const Container c = read_container(path);
    CheckpointInfo info = info_from_header(c.header, path);
    if (!opt.allow_partial && !(info.config == model.config()))
        throw CheckpointError(path + ": checkpoint config " + info.config.to_json().dump() +
                              " does not match model config " + model.config().to_json().dump());

    const nlohmann::json steps = c.header.value("adam_steps", nlohmann::json::object());
    const bool with_opt = opt.load_optimizer;
    std::vector<PendingParam> pending;
    stage_params(c, model.parameters(), "", opt.allow_partial, with_opt, steps, path, pending);
    if (pending.empty())
        throw CheckpointError(path + ": no parameters match the model");

    if (opt.discriminator) {
        if (!c.header.contains("discriminator"))
            throw CheckpointError(path + ": checkpoint carries no discriminator");
        stage_params(c, opt.discriminator->parameters(), "disc/", false, with_opt, steps, path, pending);
    }
    // Every name in the file must land somewhere unless this is a partial load.
    if (!opt.allow_partial) {
        std::set<std::string> used;
        for (std::size_t i = 0; i < pending.size(); ++i)
            used.insert(pending[i].value->name);
        for (const auto& b : c.blobs) {
            if (b.name.rfind("adam.", 0) == 0 || (b.name.rfind("disc/", 0) == 0 && !opt.discriminator))
                continue;
            if (!used.count(b.name))
                throw CheckpointError(path + ": unexpected tensor '" + b.name + "'");
        }
    }

    for (const PendingParam& pp : pending) {
        auto dst = pp.target->value.mutable_data();
        std::copy(pp.value->data.begin(), pp.value->data.end(), dst.begin());
        pp.target->value.zero_grad();
        if (with_opt) {
            pp.target->adam_m = pp.m->data;
            pp.target->adam_v = pp.v->data;
            pp.target->step_count = pp.steps;
        } else {
            pp.target->reset_optimizer_state();
        }
    }
    model.provenance = info.provenance;
    return info;
}

PponNet load_model(const std::string& path)
{
    CheckpointInfo info = read_checkpoint_info(path);
    PponNet model(info.config, info.seed);
    load_checkpoint(path, model, {.allow_partial = true});
    return model;
}

std::uint64_t parameter_hash(const std::vector<Parameter*>& params)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Parameter* p : params) {
        const auto d = p->value.data();
        const auto* bytes = reinterpret_cast<const unsigned char*>(d.data());
        for (std::size_t i = 0; i < d.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

} // namespace ppon
