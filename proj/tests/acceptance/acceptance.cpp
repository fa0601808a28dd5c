// Acceptance run: one PASS/FAIL line per criterion A1..A8.
//
//   acceptance [--only A1,A6] [--work DIR]
//
// A3/A4/A5 train on a toy dataset and take most of the runtime.

#include "dcfuse/borda.hpp"
#include "dcfuse/commands.hpp"
#include "dcfuse/experiment.hpp"
#include "dcfuse/fusion_rules.hpp"
#include "dcfuse/losses.hpp"
#include "dcfuse/metrics.hpp"
#include "dcfuse/trainer.hpp"
#include "fusion_oracle.hpp"
#include "gradcheck.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

using namespace dcfuse;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Result {
    bool pass = false;
    std::string detail;
};

void report(const std::string& id, const Result& r, double secs)
{
    std::printf("%s %s  %s  [%.1fs]\n", id.c_str(), r.pass ? "PASS" : "FAIL", r.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---- A1 -----------------------------------------------------------------------

Result a1_fusion_kernels()
{
    const auto t0 = Clock::now();
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> ch(1, 8), side(1, 32), win(1, 6);
    double worst_sf = 0.0;
    int decision_mismatch = 0, fuse_mismatch = 0;
    for (int i = 0; i < 200; ++i) {
        const int c = ch(rng), h = side(rng), w = side(rng), window = 2 * win(rng) + 1;
        torch::manual_seed(i);
        const auto f1 = torch::randn({c, h, w});
        auto f2 = torch::randn({c, h, w});
        if (i % 10 == 0) f2 = f1.clone(); // all ties
        const auto sf1 = fusion::channel_sf(f1, window);
        const auto sf2 = fusion::channel_sf(f2, window);
        const auto o1 = oracle::channel_sf(oracle::from_tensor(f1), window);
        const auto o2 = oracle::channel_sf(oracle::from_tensor(f2), window);
        const auto got1 = oracle::from_tensor(sf1);
        const auto got2 = oracle::from_tensor(sf2);
        for (std::size_t k = 0; k < o1.v.size(); ++k) {
            worst_sf = std::max(worst_sf, std::abs(got1.v[k] - o1.v[k]));
            worst_sf = std::max(worst_sf, std::abs(got2.v[k] - o2.v[k]));
        }
        // decision and fusion are compared exactly, on the same SF inputs
        const auto d = fusion::decision_tensor(sf1, sf2);
        const auto od = oracle::decision(got1, got2);
        const auto dv = oracle::from_tensor(d.to(torch::kFloat64));
        for (std::size_t k = 0; k < od.size(); ++k)
            if ((dv.v[k] != 0.0) != od[k]) ++decision_mismatch;
        const auto fused = oracle::from_tensor(fusion::fuse_features(f1, f2, d));
        const auto of = oracle::fuse(oracle::from_tensor(f1), oracle::from_tensor(f2), od);
        for (std::size_t k = 0; k < of.v.size(); ++k)
            if (fused.v[k] != of.v[k]) ++fuse_mismatch;
    }
    const double secs = seconds_since(t0);
    Result r;
    r.pass = worst_sf <= 1e-6 && decision_mismatch == 0 && fuse_mismatch == 0 && secs < 60.0;
    r.detail = fmt("200 tensors; channel_sf max abs err %.2e (tol 1e-6), decision mismatches %d, fuse mismatches %d, "
                   "%.1fs (limit 60s)",
                   worst_sf, decision_mismatch, fuse_mismatch, secs);
    return r;
}

// ---- A2 -----------------------------------------------------------------------

Result a2_gradients()
{
    const auto t0 = Clock::now();
    torch::manual_seed(77);
    FocusDetector raw;
    raw->to(torch::kFloat64);
    const auto det = std::make_shared<const FrozenDetector>(raw);
    const losses::DetectorEncoderBackbone backbone(det);
    const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    const int n = 16;

    SampleBatch batch{torch::rand({1, 1, n, n}, opts), torch::rand({1, 1, n, n}, opts),
                      torch::rand({1, 1, n, n}, opts), (torch::rand({1, 1, n, n}, opts) > 0.5).to(torch::kFloat64)};
    const auto gt = torch::rand({1, 1, n, n}, opts);
    const auto x0 = torch::rand({1, 1, n, n}, opts);
    const auto w = losses::ffl_weight(x0, gt);

    struct Case {
        const char* name;
        std::function<torch::Tensor(const torch::Tensor&)> fn;
    };
    const std::vector<Case> cases = {
        {"dfpp", [&](const torch::Tensor& x) { return losses::dfpp_loss(*det, x, batch); }},
        {"perceptual", [&](const torch::Tensor& x) { return losses::perceptual_loss(x, gt, backbone); }},
        {"ssim", [&](const torch::Tensor& x) { return losses::ssim_loss(x, gt); }},
        {"ffl", [&](const torch::Tensor& x) { return losses::ffl_loss(x, gt, w); }},
    };
    Result r;
    r.pass = true;
    unsigned seed = 1;
    for (const auto& c : cases) {
        const auto g = oracle::gradcheck(c.fn, x0, 50, seed++);
        r.pass = r.pass && g.coordinates == 50 && g.max_rel_error < 1e-2;
        r.detail += fmt("%s %.1e, ", c.name, g.max_rel_error);
    }
    const double secs = seconds_since(t0);
    r.pass = r.pass && secs < 120.0;
    r.detail = "max rel err at 50 coords on 16x16 (tol 1e-2): " + r.detail + fmt("%.1fs (limit 120s)", secs);
    return r;
}

// ---- toy data shared by A3/A4/A5 ------------------------------------------------

struct Toy {
    TrainingData data;
    std::vector<MultiFocusSample> test;
    std::vector<std::string> test_ids;
    std::optional<FocusDetector> detector;
    std::optional<FusionNet> fusion;
    double detector_seconds = 0.0;
};

std::vector<MultiFocusSample> toy_samples(const std::vector<GrayImage>& sources, std::uint64_t seed, int count,
                                          const std::string& prefix, std::vector<std::string>& ids)
{
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.count = count;
    cfg.id_prefix = prefix;
    std::vector<MultiFocusSample> out;
    for (int i = 0; i < count; ++i) {
        out.push_back(make_sample(sources, cfg, static_cast<std::uint64_t>(i)));
        ids.push_back(prefix + fmt("%06d", i));
    }
    return out;
}

Toy make_toy()
{
    // training and held-out samples come from different phantom images
    std::vector<GrayImage> train_src, test_src;
    for (int i = 0; i < 8; ++i) train_src.push_back(vessel_phantom(256, 256, 100 + i));
    for (int i = 0; i < 4; ++i) test_src.push_back(vessel_phantom(256, 256, 500 + i));
    Toy toy;
    std::vector<std::string> ids;
    auto samples = toy_samples(train_src, 7, 200, "s", ids);
    toy.data = make_training_data(std::move(samples), std::move(ids));
    toy.test = toy_samples(test_src, 99, 20, "t", toy.test_ids);
    return toy;
}

TrainConfig toy_detector_config()
{
    TrainConfig c;
    c.epochs = 20;
    c.batch_size = 4;
    c.seed = 1;
    return c;
}

TrainConfig toy_fusion_config()
{
    TrainConfig c;
    c.epochs = 20;
    c.batch_size = 16;
    c.seed = 2;
    return c;
}

void train_toy_detector(Toy& toy)
{
    if (toy.detector) return;
    const auto t0 = Clock::now();
    auto det = init_detector({}, 1);
    TrainHooks hooks;
    hooks.on_epoch = [](const EpochRecord& r) {
        std::printf("   detector epoch %2d loss %.4f val_miou %.4f (%.0fs)\n", r.epoch, r.train.total,
                    r.validation_miou.value_or(-1), r.wall_seconds);
        std::fflush(stdout);
    };
    train_detector(det, toy.data, toy_detector_config(), hooks);
    toy.detector = det;
    toy.detector_seconds = seconds_since(t0);
}

std::vector<std::size_t> all_indices(std::size_t n)
{
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

Result a4_detector(Toy& toy)
{
    train_toy_detector(toy);
    const double m = evaluate_miou(*toy.detector, toy.test, all_indices(toy.test.size()), 16);
    Result r;
    r.pass = m >= 0.90;
    r.detail = fmt("held-out MIoU %.4f over %zu pairs (target >= 0.90); 200 samples, %d epochs, batch %d, %.0fs", m,
                   toy.test.size(), toy_detector_config().epochs, toy_detector_config().batch_size,
                   toy.detector_seconds);
    return r;
}

FusionNet train_toy_fusion(Toy& toy, fusion::FusionRule rule, bool use_dfpp, const TrainConfig& base,
                           const char* label)
{
    auto frozen = std::make_shared<const FrozenDetector>(*toy.detector);
    auto backbone = std::make_shared<const losses::DetectorEncoderBackbone>(frozen);
    FusionNetConfig arch;
    arch.rule = rule;
    auto net = init_fusion_net(arch, base.seed);
    auto cfg = base;
    cfg.use_dfpp = use_dfpp;
    TrainHooks hooks;
    hooks.on_epoch = [label](const EpochRecord& r) {
        std::printf("   %s epoch %2d total %.3f val %.3f (%.0fs)\n", label, r.epoch, r.train.total,
                    r.validation ? r.validation->total : -1.0, r.wall_seconds);
        std::fflush(stdout);
    };
    train_fusion(net, frozen, backbone, toy.data, cfg, hooks);
    return net;
}

Result a3_end_to_end(Toy& toy)
{
    train_toy_detector(toy);
    const auto t0 = Clock::now();
    toy.fusion = train_toy_fusion(toy, fusion::FusionRule::kChannelWiseSf, true, toy_fusion_config(), "fusion");
    int ok = 0;
    double worst_gain = 1e9;
    for (const auto& s : toy.test) {
        const auto f = fuse(*toy.fusion, s.s1, s.s2);
        const double gain = metrics::psnr(f, s.gt) - std::max(metrics::psnr(s.s1, s.gt), metrics::psnr(s.s2, s.gt));
        const bool ssim_ok = metrics::ssim(f, s.gt) > std::max(metrics::ssim(s.s1, s.gt), metrics::ssim(s.s2, s.gt));
        worst_gain = std::min(worst_gain, gain);
        if (gain >= 2.0 && ssim_ok) ++ok;
    }
    const double secs = seconds_since(t0);
    Result r;
    const int need = static_cast<int>(std::ceil(0.9 * static_cast<double>(toy.test.size())));
    r.pass = ok >= need && secs < 1800.0;
    r.detail = fmt("%d/%zu held-out samples meet PSNR >= best source + 2 dB and SSIM > best source (need %d); "
                   "smallest PSNR gain %.2f dB; 200 samples, 20 epochs, batch 16, %.0fs (limit 1800s)",
                   ok, toy.test.size(), need, worst_gain, secs);
    return r;
}

// ---- A5 -------------------------------------------------------------------------

Result a5_ablation(Toy& toy, const fs::path& work)
{
    train_toy_detector(toy);
    const auto t0 = Clock::now();
    if (!toy.fusion)
        toy.fusion = train_toy_fusion(toy, fusion::FusionRule::kChannelWiseSf, true, toy_fusion_config(), "fusion");

    // every variant trains exactly like the A3 model apart from the ablated part
    std::map<std::string, FusionNet> models;
    models.emplace("dc-eemf", *toy.fusion);
    for (const auto& v : ablation_variants()) {
        if (v.name == "dc-eemf") continue;
        models.emplace(v.name, train_toy_fusion(toy, v.rule, v.use_dfpp, toy_fusion_config(), v.name.c_str()));
    }
    const auto set = triples_from_samples(toy.test, toy.test_ids);
    const std::vector<std::string> metric_names{"q_e", "q_cv", "q_p", "sd"};
    const auto rep = ablation_report(models, set, metric_names);
    write_json(work / "ablation.json", rep);
    std::printf("%s", render_report(rep).c_str());

    bool dfpp_holds = false, consistent = true;
    std::set<std::string> flags;
    for (const auto& f : rep.at("flags")) flags.insert(f.get<std::string>());
    for (const auto& t : rep.at("trends")) {
        const bool holds = t.at("holds").get<bool>();
        consistent = consistent && holds == !flags.count(t.at("id").get<std::string>());
        if (t.at("id") == "dfpp") dfpp_holds = holds;
    }
    std::string rule_trend;
    for (const auto& t : rep.at("trends"))
        if (t.at("id") == "fusion_rule")
            rule_trend = (t.at("holds").get<bool>() ? "holds: " : "flagged: ") + t.at("observed").get<std::string>();

    // the flagging mechanism must fire on a trend that cannot hold: identical
    // with/without-dFPP models tie on every metric
    std::map<std::string, FusionNet> tied;
    for (const auto& v : ablation_variants()) tied.emplace(v.name, v.name == "no-dfpp" ? *toy.fusion : models.at(v.name));
    const std::vector<ImageTriple> few(set.begin(), set.begin() + 2);
    const auto tied_rep = ablation_report(tied, few, metric_names);
    bool mechanism = false;
    for (const auto& f : tied_rep.at("flags")) mechanism = mechanism || f == "dfpp";

    double rule_total = 0.0;
    for (const auto& m : rep.at("tables").at("fusion_rules").at("methods"))
        rule_total += m.at("borda").at("total").get<double>();

    const auto& dfpp_trend = rep.at("trends")[0];
    Result r;
    r.pass = dfpp_holds && consistent && mechanism && std::abs(rule_total - 60.0) < 1e-9;
    r.detail = fmt("dFPP trend %s (%s); rule trend %s; flags consistent %s; forced failure flagged %s; "
                   "rule Borda sum %g (expect 60); %.0fs",
                   dfpp_holds ? "holds" : "FAILS", dfpp_trend.at("observed").get<std::string>().c_str(),
                   rule_trend.c_str(), consistent ? "yes" : "no", mechanism ? "yes" : "no", rule_total,
                   seconds_since(t0));
    return r;
}

// ---- A6 -------------------------------------------------------------------------

Result a6_metrics()
{
    const fs::path dir = fs::path(DCFUSE_TEST_DATA_DIR) / "golden";
    std::ifstream in(dir / "golden.json");
    Result r;
    if (!in) {
        r.detail = "golden.json missing";
        return r;
    }
    const auto golden = nlohmann::json::parse(in);
    const double tol = golden.at("tolerance").get<double>();
    double worst = 0.0;
    int checked = 0;
    std::string worst_name;
    for (const auto& c : golden.at("cases")) {
        const auto& files = c.at("files");
        const ImageTriple t{c.at("name"), load_image(dir / files.at("s1").get<std::string>()),
                            load_image(dir / files.at("s2").get<std::string>()),
                            load_image(dir / files.at("gt").get<std::string>())};
        const auto fused = load_image(dir / files.at("fused").get<std::string>());
        for (const auto& [name, value] : c.at("values").items()) {
            const double err = std::abs(compute_metric(name, fused, t) - value.get<double>());
            if (err > worst) {
                worst = err;
                worst_name = c.at("name").get<std::string>() + "/" + name;
            }
            ++checked;
        }
    }

    // Table-IV-shaped mock: 14 methods, 4 metrics
    std::mt19937 rng(14);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::string> methods;
    for (int i = 0; i < 14; ++i) methods.push_back("m" + std::to_string(i));
    std::vector<metrics::MetricColumn> cols;
    for (const char* name : {"q_e", "q_cv", "q_p", "sd"}) {
        metrics::MetricColumn c{name, metric_info(name).direction, {}};
        for (int i = 0; i < 14; ++i) c.values.push_back(u(rng));
        cols.push_back(c);
    }
    cols[3].values[5] = cols[3].values[6]; // one tie
    const auto rep = metrics::borda(methods, cols);
    double sum = 0.0;
    for (double b : rep.borda) sum += b;
    bool winner14 = true;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        double top = 0.0;
        for (std::size_t m = 0; m < methods.size(); ++m)
            if (rep.ranks[k][m] == 1) top = rep.points[k][m];
        winner14 = winner14 && top == 14.0;
    }
    r.pass = checked == 21 && worst <= tol && sum == 4.0 * 14 * 15 / 2 && winner14;
    r.detail = fmt("%d golden values, max abs err %.2e at %s (tol %.0e); 14-method Borda sum %g (expect 420), "
                   "winner gets 14 points %s",
                   checked, worst, worst_name.c_str(), tol, sum, winner14 ? "yes" : "no");
    return r;
}

// ---- A7 -------------------------------------------------------------------------

int run(const std::vector<std::string>& args)
{
    std::vector<std::string> full{"dcfuse"};
    full.insert(full.end(), args.begin(), args.end());
    std::ostringstream out, err;
    const int code = run_cli(full, out, err);
    if (code != 0) std::printf("   command failed (%d): %s", code, err.str().c_str());
    return code;
}

std::string comparable(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (p.extension() != ".json") return bytes;
    auto j = nlohmann::ordered_json::parse(bytes);
    j.erase("metadata");
    return j.dump();
}

Result a7_determinism(const fs::path& work)
{
    const auto t0 = Clock::now();
    bool ok = true;
    for (const char* tag : {"run1", "run2"}) {
        const auto d = work / "determinism" / tag;
        fs::remove_all(d);
        const auto p = [&](const char* rel) { return (d / rel).string(); };
        ok = ok && run({"phantom", "--out", p("src"), "--count", "2", "--size", "128", "--seed", "5"}) == 0;
        ok = ok && run({"synth", "--src", p("src"), "--out", p("train"), "--count", "16", "--seed", "1"}) == 0;
        ok = ok && run({"synth", "--src", p("src"), "--out", p("test"), "--count", "3", "--seed", "2", "--prefix", "t"}) == 0;
        ok = ok && run({"train-detector", "--data", p("train/manifest.jsonl"), "--out", p("det.ckpt"), "--epochs", "2",
                        "--batch-size", "4", "--seed", "3"}) == 0;
        ok = ok && run({"train-fusion", "--data", p("train/manifest.jsonl"), "--detector", p("det.ckpt"), "--out",
                        p("fusion.ckpt"), "--epochs", "2", "--seed", "4"}) == 0;
        ok = ok && run({"fuse", "--model", p("fusion.ckpt"), "--data", p("test/manifest.jsonl"), "--out", p("fused")}) == 0;
        ok = ok && run({"evaluate", "--fused", p("fused"), "--data", p("test/manifest.jsonl"), "--out",
                        p("eval/report.json")}) == 0;
        ok = ok && run({"ablate", "--train-all", "--train-data", p("train/manifest.jsonl"), "--detector", p("det.ckpt"),
                        "--data", p("test/manifest.jsonl"), "--out", p("ablation"), "--epochs", "1", "--seed", "4"}) == 0;
        ok = ok && run({"report", "--in", p("ablation/ablation.json"), "--out", p("ablation/table.txt")}) == 0;
    }
    Result r;
    if (!ok) {
        r.detail = "a command failed";
        return r;
    }
    const auto a = work / "determinism" / "run1";
    const auto b = work / "determinism" / "run2";
    std::set<fs::path> files_a, files_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) files_a.insert(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) files_b.insert(fs::relative(e.path(), b));
    int differ = 0;
    std::string first;
    for (const auto& f : files_a) {
        if (!files_b.count(f) || comparable(a / f) != comparable(b / f)) {
            if (!differ) first = f.string();
            ++differ;
        }
    }
    r.pass = files_a == files_b && differ == 0 && !files_a.empty();
    r.detail = fmt("%zu files from phantom/synth/train-detector/train-fusion/fuse/evaluate/ablate/report, %d differ%s "
                   "(json compared without metadata); %.0fs",
                   files_a.size(), differ, first.empty() ? "" : (" first: " + first).c_str(), seconds_since(t0));
    return r;
}

// ---- A8 -------------------------------------------------------------------------

Result a8_inference(Toy* toy)
{
    torch::set_num_threads(1);
    FusionNet net = toy && toy->fusion ? *toy->fusion : init_fusion_net({}, 0);
    const auto gt = vessel_phantom(128, 128, 31);
    const auto s = synthesize_pair(gt, random_fpm(128, 128, 32, 8.0), 3.0);
    double worst = 0.0, first = 0.0;
    for (int i = 0; i < 5; ++i) {
        const auto t0 = Clock::now();
        const auto f = fuse(net, s.s1, s.s2);
        const double secs = seconds_since(t0);
        if (i == 0) first = secs;
        worst = std::max(worst, secs);
        if (f.height() != 128 || f.width() != 128) worst = 1e9;
    }
    const auto summary = net->summary();
    std::printf("   model summary:\n");
    std::istringstream lines(summary);
    for (std::string line; std::getline(lines, line);) std::printf("     %s\n", line.c_str());
    const double dev = static_cast<double>(net->parameter_count() - kReferenceParameterCount) / kReferenceParameterCount;
    const bool within = std::abs(dev) <= 0.25;
    const bool noted = summary.find("deviates") != std::string::npos;
    Result r;
    r.pass = worst < 1.0 && (within || noted);
    r.detail = fmt("128x128 fuse, 1 thread: first %.3fs, slowest of 5 %.3fs (limit 1s); %lld parameters, %+.1f%% vs "
                   "0.24M, %s",
                   first, worst, static_cast<long long>(net->parameter_count()), dev * 100.0,
                   within ? "within 25%" : (noted ? "deviation printed in summary" : "deviation NOT reported"));
    return r;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"acceptance criteria A1..A8"};
    std::vector<std::string> only;
    std::string work_arg;
    app.add_option("--only", only, "Subset, e.g. A1,A6")->delimiter(',');
    app.add_option("--work", work_arg, "Scratch directory (default: system temp)");
    CLI11_PARSE(app, argc, argv);

    torch::set_num_threads(1);
    const fs::path work = work_arg.empty() ? fs::temp_directory_path() / "dcfuse_acceptance" : fs::path(work_arg);
    fs::create_directories(work);
    auto wanted = [&](const std::string& id) {
        return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
    };

    std::optional<Toy> toy;
    auto need_toy = [&]() -> Toy& {
        if (!toy) toy = make_toy();
        return *toy;
    };

    int failed = 0, ran = 0;
    auto step = [&](const std::string& id, auto&& fn) {
        if (!wanted(id)) return;
        const auto t0 = Clock::now();
        Result r;
        try {
            r = fn();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        report(id, r, seconds_since(t0));
        ++ran;
        if (!r.pass) ++failed;
    };

    step("A1", [] { return a1_fusion_kernels(); });
    step("A2", [] { return a2_gradients(); });
    step("A6", [] { return a6_metrics(); });
    step("A7", [&] { return a7_determinism(work); });
    step("A4", [&] { return a4_detector(need_toy()); });
    step("A3", [&] { return a3_end_to_end(need_toy()); });
    step("A8", [&] { return a8_inference(toy ? &*toy : nullptr); });
    step("A5", [&] { return a5_ablation(need_toy(), work); });

    std::printf("%d/%d criteria passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}
