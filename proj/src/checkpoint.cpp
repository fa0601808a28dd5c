#include "dcfuse/checkpoint.hpp"

#include "dcfuse/digest.hpp"
#include "dcfuse/error.hpp"

#include <fstream>
#include <sstream>

namespace dcfuse {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const FusionNetConfig& c)
{
    return {{"shallow1", c.shallow1},
            {"features", c.features},
            {"expansion", c.expansion},
            {"se_reduction", c.se_reduction},
            {"spatial_kernel", c.spatial_kernel},
            {"recon_hidden", c.recon_hidden},
            {"negative_slope", c.negative_slope},
            {"rule", fusion::to_string(c.rule)},
            {"window", c.window}};
}

FusionNetConfig fusion_config_from_json(const json& j)
{
    FusionNetConfig c;
    try {
        c.shallow1 = j.value("shallow1", c.shallow1);
        c.features = j.value("features", c.features);
        c.expansion = j.value("expansion", c.expansion);
        c.se_reduction = j.value("se_reduction", c.se_reduction);
        c.spatial_kernel = j.value("spatial_kernel", c.spatial_kernel);
        c.recon_hidden = j.value("recon_hidden", c.recon_hidden);
        c.negative_slope = j.value("negative_slope", c.negative_slope);
        if (j.contains("rule")) c.rule = fusion::parse_fusion_rule(j.at("rule").get<std::string>());
        c.window = j.value("window", c.window);
    } catch (const json::exception& e) {
        throw Error("config", std::string("bad fusion network config: ") + e.what());
    }
    return c;
}

ordered_json to_json(const FocusDetectorConfig& c)
{
    return {{"base", c.base}, {"depth", c.depth}, {"negative_slope", c.negative_slope}};
}

FocusDetectorConfig detector_config_from_json(const json& j)
{
    FocusDetectorConfig c;
    try {
        c.base = j.value("base", c.base);
        c.depth = j.value("depth", c.depth);
        c.negative_slope = j.value("negative_slope", c.negative_slope);
    } catch (const json::exception& e) {
        throw Error("config", std::string("bad detector config: ") + e.what());
    }
    return c;
}

namespace {

std::string serialize(torch::nn::Module& m)
{
    torch::serialize::OutputArchive archive;
    m.save(archive);
    std::ostringstream os;
    archive.save_to(os);
    return os.str();
}

void write(const std::filesystem::path& path, const CheckpointHeader& h, const std::string& payload)
{
    ordered_json j;
    j["kind"] = h.kind;
    j["architecture"] = h.architecture;
    j["arch_hash"] = h.arch_hash;
    j["config"] = h.config;
    j["seed"] = h.seed;
    j["payload_sha256"] = h.payload_sha256;
    j["parameter_sha256"] = h.parameter_sha256;
    j["extra"] = h.extra;

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("io", "cannot write checkpoint " + path.string());
    os << kCheckpointMagic << '\n' << j.dump() << '\n';
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) throw Error("io", "short write on checkpoint " + path.string());
}

CheckpointHeader header_for(std::string kind, std::string architecture, ordered_json config, std::uint64_t seed,
                            const std::string& payload, std::string param_sha, const ordered_json& extra)
{
    CheckpointHeader h;
    h.kind = std::move(kind);
    h.arch_hash = sha256_hex(architecture);
    h.architecture = std::move(architecture);
    h.config = std::move(config);
    h.seed = seed;
    h.payload_sha256 = sha256_hex(payload);
    h.parameter_sha256 = std::move(param_sha);
    h.extra = extra;
    return h;
}

struct Loaded {
    CheckpointHeader header;
    std::string payload;
};

Loaded load(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("io", "cannot open checkpoint " + path.string());
    std::string magic, line;
    if (!std::getline(is, magic) || magic != kCheckpointMagic)
        throw Error("format", path.string() + " is not a dcfuse checkpoint");
    if (!std::getline(is, line)) throw Error("format", path.string() + ": missing header");
    Loaded out;
    out.payload.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());

    auto& h = out.header;
    try {
        const auto j = json::parse(line);
        h.kind = j.at("kind").get<std::string>();
        h.architecture = j.at("architecture").get<std::string>();
        h.arch_hash = j.at("arch_hash").get<std::string>();
        h.config = j.at("config");
        h.seed = j.at("seed").get<std::uint64_t>();
        h.payload_sha256 = j.at("payload_sha256").get<std::string>();
        h.parameter_sha256 = j.value("parameter_sha256", "");
        h.extra = j.value("extra", json::object());
    } catch (const json::exception& e) {
        throw Error("format", path.string() + ": bad header: " + e.what());
    }
    if (sha256_hex(h.architecture) != h.arch_hash)
        throw Error("checksum", path.string() + ": header architecture does not match its hash");
    if (sha256_hex(out.payload) != h.payload_sha256)
        throw Error("checksum", path.string() + ": payload checksum mismatch (corrupt or modified archive)");
    return out;
}

void expect(const CheckpointHeader& h, const std::string& kind, const std::string& architecture,
            const std::filesystem::path& path)
{
    if (h.kind != kind)
        throw Error("architecture", path.string() + " holds a " + h.kind + " model, expected " + kind);
    if (h.arch_hash != sha256_hex(architecture))
        throw Error("architecture", path.string() + ": architecture hash mismatch (" + h.architecture + ")");
}

void load_payload(torch::nn::Module& m, const std::string& payload, const std::filesystem::path& path)
{
    try {
        torch::serialize::InputArchive archive;
        archive.load_from(payload.data(), payload.size());
        m.load(archive);
    } catch (const c10::Error& e) {
        throw Error("format", path.string() + ": cannot decode parameters: " + e.what_without_backtrace());
    }
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, FusionNet& model, std::uint64_t seed, const ordered_json& extra)
{
    const auto& cfg = model->config();
    const auto payload = serialize(*model);
    write(path, header_for("fusion", cfg.architecture(), to_json(cfg), seed, payload, parameter_checksum(*model), extra),
          payload);
}

void save_checkpoint(const std::filesystem::path& path, FocusDetector& det, std::uint64_t seed, const ordered_json& extra)
{
    const auto& cfg = det->config();
    const auto payload = serialize(*det);
    write(path, header_for("detector", cfg.architecture(), to_json(cfg), seed, payload, parameter_checksum(*det), extra),
          payload);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path)
{
    return load(path).header;
}

FusionNet restore_fusion(const std::filesystem::path& path, CheckpointHeader* header)
{
    auto loaded = load(path);
    if (loaded.header.kind != "fusion")
        throw Error("architecture", path.string() + " holds a " + loaded.header.kind + " model, expected fusion");
    const auto cfg = fusion_config_from_json(loaded.header.config);
    expect(loaded.header, "fusion", cfg.architecture(), path);
    FusionNet model(cfg);
    load_payload(*model, loaded.payload, path);
    model->eval();
    if (header) *header = std::move(loaded.header);
    return model;
}

FocusDetector restore_detector(const std::filesystem::path& path, CheckpointHeader* header)
{
    auto loaded = load(path);
    if (loaded.header.kind != "detector")
        throw Error("architecture", path.string() + " holds a " + loaded.header.kind + " model, expected detector");
    const auto cfg = detector_config_from_json(loaded.header.config);
    expect(loaded.header, "detector", cfg.architecture(), path);
    FocusDetector det(cfg);
    load_payload(*det, loaded.payload, path);
    det->eval();
    if (header) *header = std::move(loaded.header);
    return det;
}

} // namespace dcfuse
