#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dcfuse {

struct ManifestEntry {
    std::string id;
    std::string path_s1;
    std::string path_s2;
    std::string path_gt;
    std::string path_fpm;
    int height = 0;
    int width = 0;
    std::uint64_t seed = 0;
    double sigma = 0.0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// One JSON object per line. Paths are stored relative to the manifest file.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Parses and validates: ids unique, referenced files exist. With
// `check_rasters`, every file is also decoded and its size compared against the
// declared height/width.
DatasetManifest read_manifest(const std::filesystem::path& path, bool check_rasters = false);

} // namespace dcfuse
