#include "dcfuse/imagio.hpp"
#include "dcfuse/metrics.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>

using namespace dcfuse;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::path(DCFUSE_TEST_DATA_DIR) / "golden";

nlohmann::json golden()
{
    std::ifstream is(kDir / "golden.json");
    REQUIRE(is.good());
    return nlohmann::json::parse(is);
}

} // namespace

TEST_CASE("metric suite matches the committed reference values")
{
    const auto g = golden();
    const double tol = g.at("tolerance").get<double>();
    REQUIRE(g.at("cases").size() == 3);
    for (const auto& c : g.at("cases")) {
        const auto name = c.at("name").get<std::string>();
        const auto& files = c.at("files");
        const auto gt = load_image(kDir / files.at("gt").get<std::string>());
        const auto s1 = load_image(kDir / files.at("s1").get<std::string>());
        const auto s2 = load_image(kDir / files.at("s2").get<std::string>());
        const auto f = load_image(kDir / files.at("fused").get<std::string>());
        const auto& v = c.at("values");
        CAPTURE(name);
        auto near = [&](double got, const std::string& key) {
            const double want = v.at(key).get<double>();
            CAPTURE(key);
            CAPTURE(got);
            CAPTURE(want);
            CHECK(std::abs(got - want) <= tol);
        };
        near(metrics::mse(f, gt), "mse");
        near(metrics::psnr(f, gt), "psnr");
        near(metrics::ssim(f, gt), "ssim");
        near(metrics::sd(f), "sd");
        near(metrics::q_e(f, s1, s2), "q_e");
        near(metrics::q_cv(f, s1, s2), "q_cv");
        near(metrics::q_p(f, s1, s2), "q_p");
    }
}
