#pragma once

#include "dcfuse/focusdet.hpp"
#include "dcfuse/fusenet.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>

namespace dcfuse {

// On-disk layout: one magic line, one line of JSON header, then the raw
// parameter archive. The header records what the archive holds so a
// mismatched restore fails before any tensor is touched.
inline constexpr const char* kCheckpointMagic = "DCFUSE-CKPT 1";

struct CheckpointHeader {
    std::string kind;         // "fusion" or "detector"
    std::string architecture; // FusionNetConfig/FocusDetectorConfig::architecture()
    std::string arch_hash;    // sha256 of architecture
    nlohmann::ordered_json config;
    std::uint64_t seed = 0;
    std::string payload_sha256;
    std::string parameter_sha256; // parameter_checksum of the module
    nlohmann::ordered_json extra;  // free-form provenance (backbone name, epoch, ...)
};

nlohmann::ordered_json to_json(const FusionNetConfig& cfg);
FusionNetConfig fusion_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const FocusDetectorConfig& cfg);
FocusDetectorConfig detector_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, FusionNet& model, std::uint64_t seed,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());
void save_checkpoint(const std::filesystem::path& path, FocusDetector& det, std::uint64_t seed,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());

// Reads and checks magic, header and payload checksum. Errors: "io", "format",
// "checksum".
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Errors as above plus "architecture" when the archive holds another kind of
// model or a different layout.
FusionNet restore_fusion(const std::filesystem::path& path, CheckpointHeader* header = nullptr);
FocusDetector restore_detector(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

} // namespace dcfuse
