#include "dcfuse/checkpoint.hpp"
#include "dcfuse/commands.hpp"
#include "dcfuse/error.hpp"
#include "dcfuse/experiment.hpp"
#include "dcfuse/metrics.hpp"
#include "dcfuse/trainer.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace dcfuse;
namespace fs = std::filesystem;

namespace {

const fs::path kDemo = fs::path(DCFUSE_ASSET_DIR) / "demo";

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "dcfuse");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& p)
{
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("fuse on the demo pair keeps the image size")
{
    testutil::TempDir dir("cli_fuse");
    const auto out = dir.path() / "fused.png";
    const auto r = cli({"fuse", "--model", (kDemo / "fusion.ckpt").string(), "--s1", (kDemo / "s1.png").string(), "--s2",
                        (kDemo / "s2.png").string(), "--out", out.string()});
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    const auto fused = load_image(out);
    const auto s1 = load_image(kDemo / "s1.png");
    CHECK(fused.height() == s1.height());
    CHECK(fused.width() == s1.width());
}

TEST_CASE("evaluate with fused = gt gives a zero mse row")
{
    testutil::TempDir dir("cli_eval");
    const auto report = dir.path() / "report.json";
    const auto r = cli({"evaluate", "--fused", (kDemo / "gt.png").string(), "--s1", (kDemo / "s1.png").string(), "--s2",
                        (kDemo / "s2.png").string(), "--gt", (kDemo / "gt.png").string(), "--out", report.string()});
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    const auto j = read_json(report);
    REQUIRE(j.at("methods").size() == 1);
    const auto& s = j.at("methods")[0].at("summary");
    CHECK(s.at("mse").at("mean").get<double>() == 0.0);
    CHECK(s.at("psnr").at("mean").get<double>() == metrics::kPsnrCap);
    CHECK(s.at("ssim").at("mean").get<double>() == doctest::Approx(1.0));
    CHECK(j.at("scale").at("peak").get<double>() == 255.0);
    CHECK(j.contains("metadata"));
    CHECK(fs::exists(dir.path() / "report.txt"));
}

TEST_CASE("usage errors exit with 2 and one json line")
{
    const auto r = cli({"fuse", "--model", (kDemo / "fusion.ckpt").string(), "--s1", (kDemo / "s1.png").string(),
                        "--out", "x.png"});
    CHECK(r.code == kExitUsage);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    const auto j = nlohmann::json::parse(r.err);
    CHECK(j.at("error").at("code") == "usage");

    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"nonsense"}).code == kExitUsage);
    CHECK(cli({"evaluate", "--fused", "a", "--out", "r.json"}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("runtime failures exit with 1")
{
    testutil::TempDir dir("cli_fail");
    const auto r = cli({"fuse", "--model", (dir.path() / "none.ckpt").string(), "--s1", "a.png", "--s2", "b.png",
                        "--out", (dir.path() / "o.png").string()});
    CHECK(r.code == kExitFailure);
    CHECK(nlohmann::json::parse(r.err).at("error").at("code") == "io");

    const auto ab = cli({"ablate", "--data", (dir.path() / "m.jsonl").string(), "--checkpoints",
                         dir.path().string(), "--out", (dir.path() / "abl").string()});
    CHECK(ab.code == kExitFailure);
    CHECK(nlohmann::json::parse(ab.err).at("error").at("code") == "checkpoint");
}

TEST_CASE("evaluate ranks several methods and report re-renders the table")
{
    testutil::TempDir dir("cli_rank");
    const auto report = dir.path() / "r.json";
    const auto r = cli({"evaluate", "--fused", (kDemo / "gt.png").string(), "--fused", (kDemo / "s1.png").string(),
                        "--fused", (kDemo / "s2.png").string(), "--method", "gt", "--method", "s1", "--method", "s2",
                        "--s1", (kDemo / "s1.png").string(), "--s2", (kDemo / "s2.png").string(), "--gt",
                        (kDemo / "gt.png").string(), "--metrics", "q_e,q_cv,psnr,ssim", "--out", report.string()});
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    const auto j = read_json(report);
    double total = 0.0;
    for (const auto& m : j.at("methods")) total += m.at("borda").at("total").get<double>();
    CHECK(total == doctest::Approx(4.0 * 3 * 4 / 2));
    CHECK(j.at("methods")[0].at("summary").at("psnr").at("rank") == 1);

    const auto text = dir.path() / "t.txt";
    const auto rr = cli({"report", "--in", report.string(), "--out", text.string()});
    REQUIRE(rr.code == kExitOk);
    CHECK(slurp(text) == slurp(dir.path() / "r.txt"));
    CHECK(slurp(text).find("±") != std::string::npos);
}

TEST_CASE("output root applies to relative paths")
{
    testutil::TempDir dir("cli_root");
    setenv(kOutputRootEnv, dir.path().c_str(), 1);
    const auto r = cli({"phantom", "--out", "src", "--count", "1", "--size", "32"});
    unsetenv(kOutputRootEnv);
    REQUIRE(r.code == kExitOk);
    CHECK(fs::exists(dir.path() / "src" / "phantom_000.png"));
    CHECK(output_path("/abs/x") == fs::path("/abs/x"));
}

TEST_CASE("synth and evaluate are byte-reproducible outside metadata")
{
    testutil::TempDir dir("cli_det");
    const auto src = dir.path() / "src";
    REQUIRE(cli({"phantom", "--out", src.string(), "--count", "2", "--size", "96", "--seed", "4"}).code == 0);
    for (const char* name : {"a", "b"})
        REQUIRE(cli({"synth", "--src", src.string(), "--out", (dir.path() / name).string(), "--tile", "64", "--crop",
                     "32", "--count", "3", "--seed", "9"})
                    .code == 0);
    CHECK(slurp(dir.path() / "a" / "manifest.jsonl") == slurp(dir.path() / "b" / "manifest.jsonl"));
    CHECK(slurp(dir.path() / "a" / "samples" / "s000002_s1.png") ==
          slurp(dir.path() / "b" / "samples" / "s000002_s1.png"));

    for (const char* name : {"r1.json", "r2.json"}) {
        const auto r = cli({"evaluate", "--fused", (kDemo / "s1.png").string(), "--s1", (kDemo / "s1.png").string(),
                            "--s2", (kDemo / "s2.png").string(), "--out", (dir.path() / name).string()});
        REQUIRE(r.code == 0);
    }
    auto a = read_json(dir.path() / "r1.json");
    auto b = read_json(dir.path() / "r2.json");
    a.erase("metadata");
    b.erase("metadata");
    CHECK(a.dump() == b.dump());
}

TEST_CASE("experiment config round trip and strict keys")
{
    ExperimentConfig cfg;
    cfg.dataset.manifest = "train/manifest.jsonl";
    cfg.dataset.synth.count = 200;
    cfg.detector.train.batch_size = 4;
    cfg.fusion.arch.rule = fusion::FusionRule::kCat;
    cfg.fusion.train.epochs = 20;
    cfg.eval.metrics = {"q_e", "ssim"};
    const auto j = to_json(cfg);
    const auto back = experiment_config_from_json(j);
    CHECK(to_json(back).dump() == j.dump());
    CHECK(back.fusion.arch.rule == fusion::FusionRule::kCat);

    auto bad = nlohmann::json::parse(j.dump());
    bad["fusion"]["extra"] = 1;
    CHECK_THROWS_AS(experiment_config_from_json(bad), Error);
    auto bad_metric = nlohmann::json::parse(j.dump());
    bad_metric["eval"]["metrics"] = {"q_zz"};
    CHECK_THROWS_AS(experiment_config_from_json(bad_metric), Error);

    testutil::TempDir dir("cfg");
    write_json(dir.path() / "exp.json", j);
    CHECK(load_train_section(dir.path() / "exp.json", "detector").batch_size == 4);
    CHECK(load_train_section(dir.path() / "exp.json", "fusion").epochs == 20);
    write_json(dir.path() / "train.json", to_json(TrainConfig{}));
    CHECK(load_train_section(dir.path() / "train.json", "fusion").epochs == 120);
}

TEST_CASE("metric catalog directions")
{
    CHECK(metric_info("q_cv").direction == metrics::Direction::kLowerBetter);
    CHECK(metric_info("mse").direction == metrics::Direction::kLowerBetter);
    CHECK(metric_info("q_e").direction == metrics::Direction::kHigherBetter);
    CHECK(default_metrics(false) == std::vector<std::string>{"q_e", "q_cv", "q_p", "sd"});
    CHECK(default_metrics(true).size() == 7);
    CHECK_THROWS_AS(metric_info("nope"), Error);
}

TEST_CASE("ablation report shape and trend flags")
{
    std::vector<ImageTriple> set;
    for (int i = 0; i < 2; ++i) {
        const auto gt = vessel_phantom(32, 32, 40 + i);
        const auto fpm = random_fpm(32, 32, 70 + i, 4.0);
        const auto s = synthesize_pair(gt, fpm, 3.0);
        set.push_back({"img" + std::to_string(i), s.s1, s.s2, s.gt});
    }
    std::map<std::string, FusionNet> models;
    for (const auto& v : ablation_variants()) {
        FusionNetConfig c;
        c.rule = v.rule;
        models.emplace(v.name, init_fusion_net(c, 3));
    }
    CHECK(ablation_variants().size() == 6);

    const auto rep = ablation_report(models, set, {"q_e", "q_cv", "q_p", "sd"});
    const auto& dfpp = rep.at("tables").at("dfpp").at("methods");
    const auto& rules = rep.at("tables").at("fusion_rules").at("methods");
    CHECK(dfpp.size() == 2);
    REQUIRE(rules.size() == 5);
    std::vector<std::string> names;
    double total = 0.0;
    for (const auto& m : rules) {
        names.push_back(m.at("method"));
        total += m.at("borda").at("total").get<double>();
    }
    std::sort(names.begin(), names.end());
    CHECK(names == std::vector<std::string>{"c_w_max", "cat", "channel_wise_sf", "max", "sf"});
    CHECK(total == doctest::Approx(60.0));

    // dc-eemf and no-dfpp share weights here, so they tie on every metric:
    // the dFPP trend cannot hold and must be flagged
    const auto& trends = rep.at("trends");
    REQUIRE(trends.size() == 2);
    CHECK(trends[0].at("id") == "dfpp");
    CHECK(trends[0].at("holds") == false);
    bool flagged = false;
    for (const auto& f : rep.at("flags")) flagged = flagged || f == "dfpp";
    CHECK(flagged);
    CHECK(render_report(rep).find("trend FLAGGED dfpp") != std::string::npos);

    models.erase("cat");
    CHECK_THROWS_AS(ablation_report(models, set, {"q_e"}), Error);
}

TEST_CASE("inference rule swap keeps the reconstructor width")
{
    auto m = init_fusion_net({}, 1);
    m->set_rule(fusion::FusionRule::kMax, 7);
    CHECK(m->config().window == 7);
    CHECK_THROWS_AS(m->set_rule(fusion::FusionRule::kCat, 11), Error);
    CHECK_THROWS_AS(m->set_rule(fusion::FusionRule::kSf, 4), Error);
}
