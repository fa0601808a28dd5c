#include "dcfuse/manifest.hpp"

#include "dcfuse/error.hpp"
#include "dcfuse/imagio.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace dcfuse {

using nlohmann::json;

namespace {

json to_json(const ManifestEntry& e)
{
    // ordered_json keeps the key order stable for byte-identical manifests
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["path_S1"] = e.path_s1;
    j["path_S2"] = e.path_s2;
    j["path_GT"] = e.path_gt;
    j["path_FPM"] = e.path_fpm;
    j["height"] = e.height;
    j["width"] = e.width;
    j["seed"] = e.seed;
    j["sigma"] = e.sigma;
    return j;
}

ManifestEntry from_json(const json& j)
{
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.path_s1 = j.at("path_S1").get<std::string>();
    e.path_s2 = j.at("path_S2").get<std::string>();
    e.path_gt = j.at("path_GT").get<std::string>();
    e.path_fpm = j.at("path_FPM").get<std::string>();
    e.height = j.at("height").get<int>();
    e.width = j.at("width").get<int>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.sigma = j.value("sigma", 0.0);
    return e;
}

} // namespace

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("io", "cannot write manifest: " + path.string());
    for (const auto& e : manifest.entries)
        os << nlohmann::ordered_json(to_json(e)).dump() << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path, bool check_rasters)
{
    std::ifstream is(path);
    if (!is) throw Error("io", "cannot read manifest: " + path.string());

    DatasetManifest m;
    m.root = path.parent_path();
    std::set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        ManifestEntry e;
        try {
            e = from_json(json::parse(line));
        } catch (const json::exception& ex) {
            throw Error("manifest", path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        if (!ids.insert(e.id).second)
            throw Error("manifest", "duplicate sample id '" + e.id + "' in " + path.string());
        for (const auto* rel : {&e.path_s1, &e.path_s2, &e.path_gt, &e.path_fpm}) {
            const auto full = m.resolve(*rel);
            if (!std::filesystem::is_regular_file(full))
                throw Error("manifest", "sample '" + e.id + "' references missing file " + full.string());
            if (check_rasters) {
                const auto img = load_image(full);
                if (img.height() != e.height || img.width() != e.width)
                    throw Error("manifest", "sample '" + e.id + "': " + full.string() +
                                                " does not match declared size");
            }
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

} // namespace dcfuse
