#include "dcfuse/experiment.hpp"

#include "dcfuse/checkpoint.hpp"
#include "dcfuse/error.hpp"
#include "dcfuse/metrics.hpp"

#include <opencv2/core/version.hpp>
#include <torch/version.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>
#include <unistd.h>

namespace dcfuse {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object()) throw Error("config", where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw Error("config", "unknown key '" + k + "' in " + where);
}

json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("config", path.string() + ": " + e.what());
    }
}

} // namespace

ordered_json to_json(const SynthConfig& c)
{
    return {{"tile", c.tile},
            {"crop", c.crop},
            {"count", c.count},
            {"seed", c.seed},
            {"sigma_min", c.sigma_min},
            {"sigma_max", c.sigma_max},
            {"smoothness", c.smoothness},
            {"flip_probability", c.flip_probability},
            {"id_prefix", c.id_prefix}};
}

SynthConfig synth_config_from_json(const json& j)
{
    check_keys(j, {"tile", "crop", "count", "seed", "sigma_min", "sigma_max", "smoothness", "flip_probability",
                   "id_prefix"},
               "synth config");
    SynthConfig c;
    try {
        c.tile = j.value("tile", c.tile);
        c.crop = j.value("crop", c.crop);
        c.count = j.value("count", c.count);
        c.seed = j.value("seed", c.seed);
        c.sigma_min = j.value("sigma_min", c.sigma_min);
        c.sigma_max = j.value("sigma_max", c.sigma_max);
        c.smoothness = j.value("smoothness", c.smoothness);
        c.flip_probability = j.value("flip_probability", c.flip_probability);
        c.id_prefix = j.value("id_prefix", c.id_prefix);
    } catch (const json::exception& e) {
        throw Error("config", std::string("bad synth config: ") + e.what());
    }
    return c;
}

ordered_json to_json(const ExperimentConfig& c)
{
    ordered_json fusion = {{"arch", to_json(c.fusion.arch)}, {"train", to_json(c.fusion.train)}};
    fusion["vgg19_weights"] = c.fusion.vgg19_weights;
    return {{"dataset",
             {{"manifest", c.dataset.manifest},
              {"eval_manifest", c.dataset.eval_manifest},
              {"synth", to_json(c.dataset.synth)}}},
            {"detector", {{"arch", to_json(c.detector.arch)}, {"train", to_json(c.detector.train)}}},
            {"fusion", fusion},
            {"eval", {{"metrics", c.eval.metrics}}}};
}

ExperimentConfig experiment_config_from_json(const json& j)
{
    check_keys(j, {"dataset", "detector", "fusion", "eval"}, "experiment config");
    ExperimentConfig c;
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            check_keys(d, {"manifest", "eval_manifest", "synth"}, "dataset section");
            c.dataset.manifest = d.value("manifest", "");
            c.dataset.eval_manifest = d.value("eval_manifest", "");
            if (d.contains("synth")) c.dataset.synth = synth_config_from_json(d.at("synth"));
        }
        if (j.contains("detector")) {
            const auto& d = j.at("detector");
            check_keys(d, {"arch", "train"}, "detector section");
            if (d.contains("arch")) c.detector.arch = detector_config_from_json(d.at("arch"));
            if (d.contains("train")) c.detector.train = train_config_from_json(d.at("train"));
        }
        if (j.contains("fusion")) {
            const auto& f = j.at("fusion");
            check_keys(f, {"arch", "train", "vgg19_weights"}, "fusion section");
            if (f.contains("arch")) c.fusion.arch = fusion_config_from_json(f.at("arch"));
            if (f.contains("train")) c.fusion.train = train_config_from_json(f.at("train"));
            c.fusion.vgg19_weights = f.value("vgg19_weights", "");
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            check_keys(e, {"metrics"}, "eval section");
            if (e.contains("metrics")) c.eval.metrics = e.at("metrics").get<std::vector<std::string>>();
        }
    } catch (const json::exception& e) {
        throw Error("config", std::string("bad experiment config: ") + e.what());
    }
    for (const auto& m : c.eval.metrics) metric_info(m);
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path)
{
    return experiment_config_from_json(read_json_file(path));
}

TrainConfig load_train_section(const std::filesystem::path& path, const std::string& section)
{
    const auto j = read_json_file(path);
    if (j.is_object() && (j.contains("detector") || j.contains("fusion") || j.contains("dataset"))) {
        const auto cfg = experiment_config_from_json(j);
        return section == "detector" ? cfg.detector.train : cfg.fusion.train;
    }
    return train_config_from_json(j);
}

// ---- metrics --------------------------------------------------------------

const std::vector<MetricInfo>& metric_catalog()
{
    using metrics::Direction;
    static const std::vector<MetricInfo> all = {
        {"q_e", Direction::kHigherBetter, false},  {"q_cv", Direction::kLowerBetter, false},
        {"q_p", Direction::kHigherBetter, false},  {"sd", Direction::kHigherBetter, false},
        {"psnr", Direction::kHigherBetter, true},  {"mse", Direction::kLowerBetter, true},
        {"ssim", Direction::kHigherBetter, true},
    };
    return all;
}

const MetricInfo& metric_info(const std::string& name)
{
    for (const auto& m : metric_catalog())
        if (m.name == name) return m;
    throw Error("metric", "unknown metric: " + name);
}

std::vector<std::string> default_metrics(bool with_gt)
{
    std::vector<std::string> out;
    for (const auto& m : metric_catalog())
        if (with_gt || !m.needs_gt) out.push_back(m.name);
    return out;
}

double compute_metric(const std::string& name, const GrayImage& fused, const ImageTriple& t)
{
    const auto& info = metric_info(name);
    if (info.needs_gt && !t.gt) throw Error("metric", name + " needs a ground-truth image for " + t.name);
    if (name == "q_e") return metrics::q_e(fused, t.s1, t.s2);
    if (name == "q_cv") return metrics::q_cv(fused, t.s1, t.s2);
    if (name == "q_p") return metrics::q_p(fused, t.s1, t.s2);
    if (name == "sd") return metrics::sd(fused);
    if (name == "psnr") return metrics::psnr(fused, *t.gt);
    if (name == "mse") return metrics::mse(fused, *t.gt);
    return metrics::ssim(fused, *t.gt);
}

MethodScores score_method(const std::string& method, const std::vector<GrayImage>& fused,
                          const std::vector<ImageTriple>& set, const std::vector<std::string>& metric_names)
{
    require(fused.size() == set.size(), "shape", method + ": fused image count does not match the set");
    for (const auto& m : metric_names) metric_info(m);
    MethodScores out;
    out.method = method;
    out.values.assign(metric_names.size(), std::vector<double>(set.size(), 0.0));

    // each image is scored by exactly one worker; slots are disjoint
    const std::size_t n = set.size();
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), n));
    std::vector<std::exception_ptr> errors(workers);
    auto job = [&](std::size_t w) {
        try {
            for (std::size_t i = w; i < n; i += workers)
                for (std::size_t m = 0; m < metric_names.size(); ++m)
                    out.values[m][i] = compute_metric(metric_names[m], fused[i], set[i]);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (workers == 1) {
        job(0);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(job, w);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

double mean_of(const std::vector<double>& v)
{
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v)
{
    if (v.empty()) return 0.0;
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size()));
}

metrics::MetricReport rank_methods(const Evaluation& ev)
{
    std::vector<std::string> names;
    for (const auto& m : ev.methods) names.push_back(m.method);
    std::vector<metrics::MetricColumn> cols;
    for (std::size_t k = 0; k < ev.metrics.size(); ++k) {
        metrics::MetricColumn c;
        c.name = ev.metrics[k];
        c.direction = metric_info(c.name).direction;
        for (const auto& m : ev.methods) c.values.push_back(mean_of(m.values[k]));
        cols.push_back(std::move(c));
    }
    return metrics::borda(std::move(names), std::move(cols));
}

ordered_json evaluation_report(const Evaluation& ev, const std::string& title)
{
    ordered_json metrics_meta = ordered_json::array();
    for (const auto& name : ev.metrics) {
        const auto& info = metric_info(name);
        metrics_meta.push_back(
            {{"name", name}, {"direction", info.direction == metrics::Direction::kHigherBetter ? "higher" : "lower"}});
    }

    std::optional<metrics::MetricReport> ranked;
    if (ev.methods.size() >= 2) ranked = rank_methods(ev);

    ordered_json methods = ordered_json::array();
    for (std::size_t i = 0; i < ev.methods.size(); ++i) {
        const auto& m = ev.methods[i];
        ordered_json summary = ordered_json::object();
        ordered_json per_image = ordered_json::array();
        for (std::size_t k = 0; k < ev.metrics.size(); ++k) {
            ordered_json s = {{"mean", mean_of(m.values[k])}, {"sd", sd_of(m.values[k])}};
            if (ranked) {
                s["rank"] = ranked->ranks[k][i];
                s["points"] = ranked->points[k][i];
            }
            summary[ev.metrics[k]] = s;
        }
        for (std::size_t img = 0; img < ev.images.size(); ++img) {
            ordered_json row = {{"image", ev.images[img]}};
            for (std::size_t k = 0; k < ev.metrics.size(); ++k) row[ev.metrics[k]] = m.values[k][img];
            per_image.push_back(row);
        }
        ordered_json entry = {{"method", m.method}, {"summary", summary}};
        if (ranked) entry["borda"] = {{"total", ranked->borda[i]}, {"rank", ranked->borda_rank[i]}};
        entry["images"] = per_image;
        methods.push_back(entry);
    }

    return {{"title", title},
            {"scale", {{"peak", metrics::kReportPeak}, {"applies_to", {"mse", "psnr", "sd", "q_cv"}}}},
            {"metrics", metrics_meta},
            {"image_count", ev.images.size()},
            {"methods", methods}};
}

namespace {

int decimals(double magnitude)
{
    const double a = std::abs(magnitude);
    return a >= 1000.0 ? 1 : a >= 10.0 ? 2 : 4;
}

std::string fmt(double v, int places)
{
    if (std::abs(v) < 0.5 * std::pow(10.0, -places)) v = 0.0; // no "-0.0000"
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", places, v);
    return buf;
}

std::size_t columns(const std::string& s)
{
    // ± is two bytes but one column
    std::size_t cols = 0;
    for (unsigned char ch : s)
        if ((ch & 0xC0) != 0x80) ++cols;
    return cols;
}

std::string pad(const std::string& s, std::size_t w)
{
    const auto cols = columns(s);
    return s + std::string(w > cols ? w - cols : 0, ' ');
}

std::string render_table(const json& table)
{
    std::vector<std::string> header{"method"};
    std::vector<std::string> names;
    for (const auto& m : table.at("metrics")) names.push_back(m.at("name").get<std::string>());
    for (const auto& n : names) header.push_back(n);
    const bool ranked = !table.at("methods").empty() && table.at("methods")[0].contains("borda");
    if (ranked) header.push_back("borda");

    std::vector<std::vector<std::string>> rows{header};
    for (const auto& m : table.at("methods")) {
        std::vector<std::string> row{m.at("method").get<std::string>()};
        for (const auto& n : names) {
            const auto& s = m.at("summary").at(n);
            const double mean = s.at("mean").get<double>();
            const int places = decimals(mean);
            std::string cell = fmt(mean, places) + "±" + fmt(s.at("sd").get<double>(), places);
            if (s.contains("rank")) cell += " (" + std::to_string(s.at("rank").get<int>()) + ")";
            row.push_back(cell);
        }
        if (ranked) {
            const auto& b = m.at("borda");
            char buf[64];
            std::snprintf(buf, sizeof buf, "(%d) %g", b.at("rank").get<int>(), b.at("total").get<double>());
            row.push_back(buf);
        }
        rows.push_back(std::move(row));
    }

    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], columns(r[c]));

    std::ostringstream os;
    if (table.contains("title")) os << table.at("title").get<std::string>() << "\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            os << (c ? "  " : "") << (c + 1 < rows[r].size() ? pad(rows[r][c], width[c]) : rows[r][c]);
        }
        os << "\n";
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w;
            os << std::string(total + 2 * (width.size() - 1), '-') << "\n";
        }
    }
    return os.str();
}

} // namespace

std::string render_report(const json& report)
{
    if (!report.is_object()) throw Error("format", "report must be a JSON object");
    try {
        if (report.contains("tables")) {
            std::string out;
            for (const auto& [key, table] : report.at("tables").items()) {
                if (!out.empty()) out += "\n";
                out += render_table(table);
            }
            if (report.contains("trends")) {
                out += "\n";
                for (const auto& t : report.at("trends")) {
                    out += (t.at("holds").get<bool>() ? "trend ok      " : "trend FLAGGED ") +
                           t.at("id").get<std::string>() + ": " + t.at("expected").get<std::string>() + " (" +
                           t.at("observed").get<std::string>() + ")\n";
                }
            }
            return out;
        }
        return render_table(report);
    } catch (const json::exception& e) {
        throw Error("format", std::string("malformed report: ") + e.what());
    }
}

// ---- ablation ---------------------------------------------------------------

const std::vector<AblationVariant>& ablation_variants()
{
    using fusion::FusionRule;
    static const std::vector<AblationVariant> all = {
        {"dc-eemf", FusionRule::kChannelWiseSf, true}, {"no-dfpp", FusionRule::kChannelWiseSf, false},
        {"sf", FusionRule::kSf, true},                 {"c_w_max", FusionRule::kChannelWindowMax, true},
        {"max", FusionRule::kMax, true},               {"cat", FusionRule::kCat, true},
    };
    return all;
}

ordered_json ablation_report(std::map<std::string, FusionNet>& models, const std::vector<ImageTriple>& set,
                             const std::vector<std::string>& metric_names,
                             std::map<std::string, std::vector<GrayImage>>* fused_out)
{
    require(!set.empty(), "data", "ablation needs at least one evaluation image");
    for (const auto& v : ablation_variants())
        if (!models.count(v.name)) throw Error("checkpoint", "missing ablation variant: " + v.name);

    std::vector<std::string> images;
    for (const auto& t : set) images.push_back(t.name);

    std::map<std::string, MethodScores> scores;
    for (const auto& v : ablation_variants()) {
        auto& model = models.at(v.name);
        require(model->config().rule == v.rule, "architecture",
                "variant " + v.name + " was trained with rule " + fusion::to_string(model->config().rule));
        std::vector<GrayImage> fused;
        fused.reserve(set.size());
        for (const auto& t : set) fused.push_back(fuse(model, t.s1, t.s2));
        scores[v.name] = score_method(v.name, fused, set, metric_names);
        if (fused_out) (*fused_out)[v.name] = std::move(fused);
    }

    Evaluation dfpp{metric_names, images, {}};
    for (const char* name : {"no-dfpp", "dc-eemf"}) {
        auto s = scores.at(name);
        s.method = std::string(name) == "dc-eemf" ? "dc-eemf" : "w/o dfpp";
        dfpp.methods.push_back(std::move(s));
    }
    Evaluation rules{metric_names, images, {}};
    for (const char* name : {"sf", "c_w_max", "max", "cat", "dc-eemf"}) {
        auto s = scores.at(name);
        s.method = std::string(name) == "dc-eemf" ? "channel_wise_sf" : name;
        rules.methods.push_back(std::move(s));
    }

    // (i) dFPP on beats off on at least two metric means
    int won = 0;
    std::vector<std::string> won_names;
    for (std::size_t k = 0; k < metric_names.size(); ++k) {
        const double off = mean_of(dfpp.methods[0].values[k]);
        const double on = mean_of(dfpp.methods[1].values[k]);
        const bool higher = metric_info(metric_names[k]).direction == metrics::Direction::kHigherBetter;
        if (higher ? on > off : on < off) {
            ++won;
            won_names.push_back(metric_names[k]);
        }
    }
    std::string won_list;
    for (const auto& n : won_names) won_list += (won_list.empty() ? "" : ",") + n;

    // (ii) channel_wise_sf has the (possibly shared) highest Borda total
    const auto ranked = rank_methods(rules);
    const double top = *std::max_element(ranked.borda.begin(), ranked.borda.end());
    const double ours = ranked.borda.back();
    std::string leaders;
    for (std::size_t i = 0; i < ranked.methods.size(); ++i)
        if (ranked.borda[i] == top) leaders += (leaders.empty() ? "" : ",") + ranked.methods[i];

    char observed_rule[256];
    std::snprintf(observed_rule, sizeof observed_rule, "top total %g by %s; channel_wise_sf %g", top,
                  leaders.c_str(), ours);

    ordered_json trends = ordered_json::array();
    trends.push_back({{"id", "dfpp"},
                      {"expected", "with dFPP beats without on >= 2 metric means"},
                      {"observed", std::to_string(won) + " of " + std::to_string(metric_names.size()) +
                                       (won_list.empty() ? "" : " (" + won_list + ")")},
                      {"metrics_won", won},
                      {"holds", won >= 2}});
    trends.push_back({{"id", "fusion_rule"},
                      {"expected", "channel_wise_sf has the highest Borda total"},
                      {"observed", observed_rule},
                      {"holds", ours == top}});

    ordered_json flags = ordered_json::array();
    for (const auto& t : trends)
        if (!t.at("holds").get<bool>()) flags.push_back(t.at("id"));

    return {{"title", "ablation"},
            {"tables",
             {{"dfpp", evaluation_report(dfpp, "dFPP loss ablation")},
              {"fusion_rules", evaluation_report(rules, "fusion rule ablation")}}},
            {"trends", trends},
            {"flags", flags}};
}

// ---- misc -------------------------------------------------------------------

std::vector<ImageTriple> triples_from_samples(const std::vector<MultiFocusSample>& samples,
                                              const std::vector<std::string>& names)
{
    require(samples.size() == names.size(), "shape", "one name per sample");
    std::vector<ImageTriple> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        out.push_back({names[i], samples[i].s1, samples[i].s2, samples[i].gt});
    return out;
}

ordered_json run_metadata(const std::string& command)
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    char host[256] = {0};
    gethostname(host, sizeof host - 1);
    return {{"command", command},
            {"created", stamp},
            {"host", host},
            {"torch", TORCH_VERSION},
            {"opencv", CV_VERSION}};
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw Error("io", "cannot create directory for " + path.string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot write " + path.string());
    out << text;
    if (!out) throw Error("io", "write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const ordered_json& doc)
{
    write_text(path, doc.dump(2) + "\n");
}

} // namespace dcfuse
