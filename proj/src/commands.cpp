#include "dcfuse/commands.hpp"

#include "dcfuse/checkpoint.hpp"
#include "dcfuse/error.hpp"
#include "dcfuse/experiment.hpp"
#include "dcfuse/manifest.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace dcfuse {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

fs::path output_path(const fs::path& p)
{
    const char* root = std::getenv(kOutputRootEnv);
    if (p.is_relative() && root && *root) return fs::path(root) / p;
    return p;
}

namespace {

std::string joined_args(const std::vector<std::string>& args)
{
    std::string s;
    for (std::size_t i = 1; i < args.size(); ++i) s += (i > 1 ? " " : "") + args[i];
    return s;
}

// Writes `body` plus a metadata block as a report. Only the metadata differs
// between identical runs.
void write_report(const fs::path& path, ordered_json body, const std::string& command)
{
    body["metadata"] = run_metadata(command);
    write_json(path, body);
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("io", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("format", path.string() + ": " + e.what());
    }
}

bool is_experiment_config(const json& j)
{
    return j.is_object() && (j.contains("detector") || j.contains("fusion") || j.contains("dataset"));
}

// Command-line overrides shared by both training commands.
struct TrainOverrides {
    std::optional<int> epochs, batch_size;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;

    void add_to(CLI::App* app)
    {
        app->add_option("--epochs", epochs, "Training epochs");
        app->add_option("--batch-size", batch_size, "Batch size");
        app->add_option("--seed", seed, "Random seed");
        app->add_option("--lr", lr, "Initial learning rate");
    }
    void apply(TrainConfig& c) const
    {
        if (epochs) c.epochs = *epochs;
        if (batch_size) c.batch_size = *batch_size;
        if (seed) c.seed = *seed;
        if (lr) c.lr = *lr;
    }
};

fs::path sibling(const fs::path& p, const std::string& suffix)
{
    return p.parent_path() / (p.stem().string() + suffix);
}

// ---- synth / phantom --------------------------------------------------------

struct SynthArgs {
    std::string src, out, config;
    std::optional<int> tile, crop, count;
    std::optional<std::uint64_t> seed;
    std::optional<double> sigma_min, sigma_max, smoothness, flip;
    std::optional<std::string> prefix;
};

int cmd_synth(const SynthArgs& a, std::ostream& out)
{
    SynthConfig cfg;
    if (!a.config.empty()) {
        const auto j = read_json(a.config);
        cfg = is_experiment_config(j) ? experiment_config_from_json(j).dataset.synth : synth_config_from_json(j);
    }
    if (a.tile) cfg.tile = *a.tile;
    if (a.crop) cfg.crop = *a.crop;
    if (a.count) cfg.count = *a.count;
    if (a.seed) cfg.seed = *a.seed;
    if (a.sigma_min) cfg.sigma_min = *a.sigma_min;
    if (a.sigma_max) cfg.sigma_max = *a.sigma_max;
    if (a.smoothness) cfg.smoothness = *a.smoothness;
    if (a.flip) cfg.flip_probability = *a.flip;
    if (a.prefix) cfg.id_prefix = *a.prefix;

    const auto dir = output_path(a.out);
    const auto manifest = build_dataset(a.src, dir, cfg);
    write_json(dir / "synth.json", to_json(cfg));
    out << "wrote " << manifest.entries.size() << " samples to " << (dir / "manifest.jsonl").string() << "\n";
    return kExitOk;
}

int cmd_phantom(const std::string& out_dir, int count, int size, std::uint64_t seed, std::ostream& out)
{
    require(count >= 1, "param", "--count must be at least 1");
    require(size >= 16, "param", "--size must be at least 16");
    const auto dir = output_path(out_dir);
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "phantom_%03d.png", i);
        save_image(vessel_phantom(size, size, sample_seed(seed, static_cast<std::uint64_t>(i))), dir / name);
    }
    out << "wrote " << count << " phantom images to " << dir.string() << "\n";
    return kExitOk;
}

// ---- training -----------------------------------------------------------------

struct TrainDetectorArgs {
    std::string data, out, config, checkpoint_dir;
    TrainOverrides over;
};

int cmd_train_detector(const TrainDetectorArgs& a, std::ostream& out, const std::string& command)
{
    FocusDetectorConfig arch;
    TrainConfig cfg;
    if (!a.config.empty()) {
        const auto j = read_json(a.config);
        if (is_experiment_config(j)) {
            const auto e = experiment_config_from_json(j);
            arch = e.detector.arch;
            cfg = e.detector.train;
        } else {
            cfg = train_config_from_json(j);
        }
    }
    a.over.apply(cfg);
    const auto data = load_training_data(read_manifest(a.data));

    const auto ckpt = output_path(a.out);
    TrainHooks hooks;
    if (!a.checkpoint_dir.empty()) hooks.checkpoint_dir = output_path(a.checkpoint_dir);
    hooks.on_epoch = [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.train.total;
        if (r.validation_miou) out << " val_miou " << *r.validation_miou;
        out << "\n" << std::flush;
    };
    auto det = init_detector(arch, cfg.seed);
    out << "detector parameters: " << det->parameter_count() << "\n";
    const auto log = train_detector(det, data, cfg, hooks);
    save_checkpoint(ckpt, det, cfg.seed,
                    {{"epochs", cfg.epochs}, {"best_epoch", log.best_epoch}, {"train", to_json(cfg)}});

    auto doc = log.to_json();
    doc["config"] = to_json(cfg);
    auto timing = doc["metadata"]["timing"];
    doc.erase("metadata");
    auto meta = run_metadata(command);
    meta["timing"] = timing;
    doc["metadata"] = meta;
    write_json(sibling(ckpt, ".log.json"), doc);
    out << "wrote " << ckpt.string() << "\n";
    return kExitOk;
}

struct TrainFusionArgs {
    std::string data, detector, out, config, checkpoint_dir, vgg19, rule;
    std::optional<int> window;
    bool no_dfpp = false;
    TrainOverrides over;
};

std::shared_ptr<const losses::FeatureBackbone> make_backbone(const std::string& vgg19,
                                                             std::shared_ptr<const FrozenDetector> det)
{
    if (!vgg19.empty()) {
        auto vgg = std::make_shared<losses::Vgg19Backbone>();
        vgg->load(vgg19);
        return vgg;
    }
    return std::make_shared<losses::DetectorEncoderBackbone>(std::move(det));
}

// Trains one fusion model and writes its checkpoint and log.
FusionNet train_fusion_to(const FusionNetConfig& arch, const TrainConfig& cfg, const TrainingData& data,
                          const fs::path& detector_ckpt, const std::string& vgg19, const fs::path& ckpt,
                          const fs::path& checkpoint_dir, std::ostream& out, const std::string& command)
{
    auto frozen = std::make_shared<const FrozenDetector>(restore_detector(detector_ckpt));
    const auto backbone = make_backbone(vgg19, frozen);

    TrainHooks hooks;
    hooks.checkpoint_dir = checkpoint_dir;
    hooks.nan_dump_dir = ckpt.parent_path() / (ckpt.stem().string() + "_nan");
    hooks.on_epoch = [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << " lr " << r.lr << " total " << r.train.total << " dfpp " << r.train.dfpp
            << " per " << r.train.perceptual << " ssim " << r.train.ssim << " ffl " << r.train.ffl;
        if (r.validation) out << " val " << r.validation->total;
        out << "\n" << std::flush;
    };
    auto model = init_fusion_net(arch, cfg.seed);
    out << model->summary() << "\n";
    const auto log = train_fusion(model, frozen, backbone, data, cfg, hooks);
    save_checkpoint(ckpt, model, cfg.seed,
                    {{"backbone", backbone->name()},
                     {"use_dfpp", cfg.use_dfpp},
                     {"detector_parameter_sha256", frozen->checksum()},
                     {"epochs", cfg.epochs},
                     {"best_epoch", log.best_epoch},
                     {"train", to_json(cfg)}});

    auto doc = log.to_json();
    doc["config"] = to_json(cfg);
    doc["backbone"] = backbone->name();
    auto timing = doc["metadata"]["timing"];
    doc.erase("metadata");
    auto meta = run_metadata(command);
    meta["timing"] = timing;
    doc["metadata"] = meta;
    write_json(sibling(ckpt, ".log.json"), doc);
    out << "wrote " << ckpt.string() << "\n";
    return model;
}

void load_fusion_config(const std::string& path, FusionNetConfig& arch, TrainConfig& cfg, std::string& vgg19)
{
    if (path.empty()) return;
    const auto j = read_json(path);
    if (is_experiment_config(j)) {
        const auto e = experiment_config_from_json(j);
        arch = e.fusion.arch;
        cfg = e.fusion.train;
        if (vgg19.empty()) vgg19 = e.fusion.vgg19_weights;
    } else {
        cfg = train_config_from_json(j);
    }
}

int cmd_train_fusion(const TrainFusionArgs& a, std::ostream& out, const std::string& command)
{
    FusionNetConfig arch;
    TrainConfig cfg;
    std::string vgg19 = a.vgg19;
    load_fusion_config(a.config, arch, cfg, vgg19);
    a.over.apply(cfg);
    if (!a.rule.empty()) arch.rule = fusion::parse_fusion_rule(a.rule);
    if (a.window) arch.window = *a.window;
    if (a.no_dfpp) cfg.use_dfpp = false;

    const auto data = load_training_data(read_manifest(a.data));
    train_fusion_to(arch, cfg, data, a.detector, vgg19, output_path(a.out),
                    a.checkpoint_dir.empty() ? fs::path{} : output_path(a.checkpoint_dir), out, command);
    return kExitOk;
}

// ---- fuse -----------------------------------------------------------------------

struct FuseArgs {
    std::string model, s1, s2, data, out, rule;
    std::optional<int> window;
    int bits = 8;
    bool summary = false;
};

BitDepth bit_depth(int bits)
{
    if (bits == 8) return BitDepth::k8;
    if (bits == 16) return BitDepth::k16;
    throw UsageError("--bits must be 8 or 16");
}

int cmd_fuse(const FuseArgs& a, std::ostream& out)
{
    auto model = restore_fusion(a.model);
    if (!a.rule.empty() || a.window)
        model->set_rule(a.rule.empty() ? model->config().rule : fusion::parse_fusion_rule(a.rule),
                        a.window.value_or(model->config().window));
    if (a.summary) out << model->summary() << "\n";
    const auto depth = bit_depth(a.bits);
    const auto dst = output_path(a.out);

    if (!a.data.empty()) {
        const auto manifest = read_manifest(a.data);
        for (const auto& e : manifest.entries) {
            const auto fused = fuse(model, load_image(manifest.resolve(e.path_s1)), load_image(manifest.resolve(e.path_s2)));
            save_image(fused, dst / (e.id + ".png"), depth);
        }
        out << "fused " << manifest.entries.size() << " samples into " << dst.string() << "\n";
        return kExitOk;
    }
    if (a.s1.empty() || a.s2.empty()) throw UsageError("fuse needs --s1 and --s2, or --data");

    if (fs::is_directory(a.s1)) {
        require(fs::is_directory(a.s2), "io", "--s1 is a directory but --s2 is not");
        int n = 0;
        for (const auto& p1 : list_images(a.s1)) {
            const auto p2 = fs::path(a.s2) / p1.filename();
            require(fs::is_regular_file(p2), "io", "no matching source in --s2 for " + p1.filename().string());
            const auto fused = fuse(model, load_image(p1), load_image(p2));
            save_image(fused, dst / (p1.stem().string() + ".png"), depth);
            ++n;
        }
        out << "fused " << n << " pairs into " << dst.string() << "\n";
        return kExitOk;
    }
    const auto fused = fuse(model, load_image(a.s1), load_image(a.s2));
    save_image(fused, dst, depth);
    out << "wrote " << dst.string() << " (" << fused.width() << "x" << fused.height() << ")\n";
    return kExitOk;
}

// ---- evaluate ---------------------------------------------------------------------

struct EvaluateArgs {
    std::vector<std::string> fused, methods, metrics;
    std::string s1, s2, gt, data, out, table, title = "evaluation";
};

// Pairs each fused image with its sources. Directories are matched by file
// name; plain files form a one-image set.
std::vector<ImageTriple> collect_set(const fs::path& fused_dir, const EvaluateArgs& a,
                                     std::vector<GrayImage>& fused)
{
    std::vector<ImageTriple> set;
    fused.clear();
    if (!a.data.empty()) {
        // fused images are <dir>/<id>.png, sources come from the manifest
        const auto manifest = read_manifest(a.data);
        for (const auto& e : manifest.entries) {
            set.push_back({e.id, load_image(manifest.resolve(e.path_s1)), load_image(manifest.resolve(e.path_s2)),
                           load_image(manifest.resolve(e.path_gt))});
            fused.push_back(load_image(fused_dir / (e.id + ".png")));
        }
        require(!set.empty(), "data", "manifest has no entries");
        return set;
    }
    const bool has_gt = !a.gt.empty();
    if (!fs::is_directory(fused_dir)) {
        // named after the source so several single-file methods line up
        set.push_back({fs::path(a.s1).filename().string(), load_image(a.s1), load_image(a.s2),
                       has_gt ? std::optional<GrayImage>(load_image(a.gt)) : std::nullopt});
        fused.push_back(load_image(fused_dir));
        return set;
    }
    for (const auto& p : list_images(fused_dir)) {
        const auto name = p.filename();
        auto find = [&](const std::string& dir, const char* what) {
            fs::path q = fs::path(dir) / name;
            if (!fs::is_regular_file(q)) {
                // the fused image may have been written as png from another format
                for (const auto& c : list_images(dir))
                    if (c.stem() == name.stem()) q = c;
            }
            require(fs::is_regular_file(q), "io", std::string("no ") + what + " image for " + name.string());
            return q;
        };
        set.push_back({name.string(), load_image(find(a.s1, "--s1")), load_image(find(a.s2, "--s2")),
                       has_gt ? std::optional<GrayImage>(load_image(find(a.gt, "--gt"))) : std::nullopt});
        fused.push_back(load_image(p));
    }
    require(!set.empty(), "data", "no images in " + fused_dir.string());
    return set;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, const std::string& command)
{
    if (!a.methods.empty() && a.methods.size() != a.fused.size())
        throw UsageError("--method must be given once per --fused");
    if (a.data.empty() && (a.s1.empty() || a.s2.empty())) throw UsageError("evaluate needs --s1 and --s2, or --data");
    const bool has_gt = !a.gt.empty() || !a.data.empty();
    const auto metric_names = a.metrics.empty() ? default_metrics(has_gt) : a.metrics;
    for (const auto& m : metric_names) {
        if (metric_info(m).needs_gt && !has_gt) throw UsageError("metric " + m + " needs --gt");
    }

    Evaluation ev;
    ev.metrics = metric_names;
    for (std::size_t i = 0; i < a.fused.size(); ++i) {
        std::vector<GrayImage> fused;
        const auto set = collect_set(a.fused[i], a, fused);
        std::vector<std::string> names;
        for (const auto& t : set) names.push_back(t.name);
        if (i == 0)
            ev.images = names;
        else
            require(names == ev.images, "data", "--fused sets cover different images");
        std::string method = a.methods.empty() ? fs::path(a.fused[i]).filename().string() : a.methods[i];
        if (method.empty()) method = "fused" + std::to_string(i + 1);
        ev.methods.push_back(score_method(method, fused, set, metric_names));
    }

    const auto report = evaluation_report(ev, a.title);
    const auto dst = output_path(a.out);
    write_report(dst, report, command);
    const auto text = render_report(report);
    write_text(a.table.empty() ? sibling(dst, ".txt") : output_path(a.table), text);
    out << text;
    return kExitOk;
}

// ---- ablate -------------------------------------------------------------------------

struct AblateArgs {
    std::string data, out, checkpoints, train_data, detector, config, vgg19;
    std::vector<std::string> metrics;
    bool train_all = false;
    TrainOverrides over;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out, const std::string& command)
{
    const auto dir = output_path(a.out);
    std::vector<std::string> metric_names{"q_e", "q_cv", "q_p", "sd"};
    FusionNetConfig arch;
    TrainConfig cfg;
    std::string vgg19 = a.vgg19;
    if (!a.config.empty()) {
        load_fusion_config(a.config, arch, cfg, vgg19);
        const auto j = read_json(a.config);
        if (is_experiment_config(j)) metric_names = experiment_config_from_json(j).eval.metrics;
    }
    if (!a.metrics.empty()) metric_names = a.metrics;
    for (const auto& m : metric_names) metric_info(m);

    std::map<std::string, FusionNet> models;
    if (a.train_all) {
        if (a.train_data.empty() || a.detector.empty())
            throw UsageError("--train-all needs --train-data and --detector");
        a.over.apply(cfg);
        const auto data = load_training_data(read_manifest(a.train_data));
        for (const auto& v : ablation_variants()) {
            out << "training variant " << v.name << "\n";
            auto varch = arch;
            varch.rule = v.rule;
            auto vcfg = cfg;
            vcfg.use_dfpp = v.use_dfpp;
            models.emplace(v.name, train_fusion_to(varch, vcfg, data, a.detector, vgg19,
                                                   dir / "checkpoints" / (v.name + ".ckpt"), {}, out, command));
        }
    } else {
        if (a.checkpoints.empty()) throw UsageError("need --checkpoints DIR or --train-all");
        for (const auto& v : ablation_variants()) {
            const auto p = fs::path(a.checkpoints) / (v.name + ".ckpt");
            if (!fs::is_regular_file(p)) throw Error("checkpoint", "missing variant checkpoint: " + p.string());
            models.emplace(v.name, restore_fusion(p));
        }
    }

    const auto manifest = read_manifest(a.data);
    std::vector<std::string> names;
    for (const auto& e : manifest.entries) names.push_back(e.id);
    const auto set = triples_from_samples(load_samples(manifest), names);

    std::map<std::string, std::vector<GrayImage>> fused;
    const auto report = ablation_report(models, set, metric_names, &fused);
    for (const auto& [variant, imgs] : fused)
        for (std::size_t i = 0; i < imgs.size(); ++i)
            save_image(imgs[i], dir / "fused" / variant / (set[i].name + ".png"));

    write_report(dir / "ablation.json", report, command);
    const auto text = render_report(report);
    write_text(dir / "ablation.txt", text);
    out << text;
    return kExitOk;
}

// ---- report -----------------------------------------------------------------------------

int cmd_report(const std::string& in, const std::string& dst, std::ostream& out)
{
    const auto text = render_report(read_json(in));
    if (!dst.empty()) write_text(output_path(dst), text);
    out << text;
    return kExitOk;
}

std::string error_line(const std::string& code, const std::string& message)
{
    return json{{"error", {{"code", code}, {"message", message}}}}.dump() + "\n";
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"dcfuse: multi-focus image fusion toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");
    int threads = 1;
    app.add_option("--threads", threads, "Intra-op threads for tensor math")->check(CLI::PositiveNumber);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Build a synthetic multi-focus dataset");
    c_synth->add_option("--src", synth.src, "Directory of all-in-focus source images")->required();
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--config", synth.config, "Synth or experiment config (JSON)");
    c_synth->add_option("--tile", synth.tile, "Tile size");
    c_synth->add_option("--crop", synth.crop, "Training crop size");
    c_synth->add_option("--count", synth.count, "Number of samples");
    c_synth->add_option("--seed", synth.seed, "Random seed");
    c_synth->add_option("--sigma-min", synth.sigma_min, "Smallest defocus sigma");
    c_synth->add_option("--sigma-max", synth.sigma_max, "Largest defocus sigma");
    c_synth->add_option("--smoothness", synth.smoothness, "Focus map smoothing sigma");
    c_synth->add_option("--flip-prob", synth.flip, "Flip probability per axis");
    c_synth->add_option("--prefix", synth.prefix, "Sample id prefix");

    std::string ph_out;
    int ph_count = 8, ph_size = 256;
    std::uint64_t ph_seed = 0;
    auto* c_phantom = app.add_subcommand("phantom", "Write procedural vessel images to use as sources");
    c_phantom->add_option("--out", ph_out, "Output directory")->required();
    c_phantom->add_option("--count", ph_count, "Number of images");
    c_phantom->add_option("--size", ph_size, "Edge length in pixels");
    c_phantom->add_option("--seed", ph_seed, "Random seed");

    TrainDetectorArgs td;
    auto* c_td = app.add_subcommand("train-detector", "Train the focus-property detector");
    c_td->add_option("--data", td.data, "Training manifest")->required();
    c_td->add_option("--out", td.out, "Checkpoint to write")->required();
    c_td->add_option("--config", td.config, "Train or experiment config (JSON)");
    c_td->add_option("--checkpoint-dir", td.checkpoint_dir, "Directory for best/periodic checkpoints");
    td.over.add_to(c_td);

    TrainFusionArgs tf;
    auto* c_tf = app.add_subcommand("train-fusion", "Train the fusion network");
    c_tf->add_option("--data", tf.data, "Training manifest")->required();
    c_tf->add_option("--detector", tf.detector, "Frozen detector checkpoint")->required();
    c_tf->add_option("--out", tf.out, "Checkpoint to write")->required();
    c_tf->add_option("--config", tf.config, "Train or experiment config (JSON)");
    c_tf->add_option("--checkpoint-dir", tf.checkpoint_dir, "Directory for best/periodic checkpoints");
    c_tf->add_option("--vgg19", tf.vgg19, "VGG19 feature weights for the perceptual loss");
    c_tf->add_option("--rule", tf.rule, "Fusion rule: channel_wise_sf, sf, c_w_max, max, cat");
    c_tf->add_option("--window", tf.window, "Fusion window (odd)");
    c_tf->add_flag("--no-dfpp", tf.no_dfpp, "Drop the detector term from the loss");
    tf.over.add_to(c_tf);

    FuseArgs fa;
    auto* c_fuse = app.add_subcommand("fuse", "Fuse a registered source pair (or two directories)");
    c_fuse->add_option("--model", fa.model, "Fusion checkpoint")->required();
    auto* fuse_s1 = c_fuse->add_option("--s1", fa.s1, "First source image or directory");
    auto* fuse_s2 = c_fuse->add_option("--s2", fa.s2, "Second source image or directory");
    c_fuse->add_option("--data", fa.data, "Manifest; fuses every sample to <out>/<id>.png")
        ->excludes(fuse_s1)
        ->excludes(fuse_s2);
    c_fuse->add_option("--out", fa.out, "Output image or directory")->required();
    c_fuse->add_option("--rule", fa.rule, "Override the fusion rule at inference");
    c_fuse->add_option("--window", fa.window, "Override the fusion window");
    c_fuse->add_option("--bits", fa.bits, "Output bit depth (8 or 16)");
    c_fuse->add_flag("--summary", fa.summary, "Print the model summary");

    EvaluateArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "Score fused images with the metric suite");
    c_eval->add_option("--fused", ev.fused, "Fused image or directory (repeat for several methods)")->required();
    auto* ev_s1 = c_eval->add_option("--s1", ev.s1, "First sources");
    auto* ev_s2 = c_eval->add_option("--s2", ev.s2, "Second sources");
    auto* ev_gt = c_eval->add_option("--gt", ev.gt, "Ground truth (enables psnr, mse, ssim)");
    c_eval->add_option("--data", ev.data, "Manifest giving sources and ground truth; fused files are <id>.png")
        ->excludes(ev_s1)
        ->excludes(ev_s2)
        ->excludes(ev_gt);
    c_eval->add_option("--out", ev.out, "Report JSON")->required();
    c_eval->add_option("--table", ev.table, "Text table (default: next to the report)");
    c_eval->add_option("--method", ev.methods, "Method name per --fused");
    c_eval->add_option("--metrics", ev.metrics, "Metric subset")->delimiter(',');
    c_eval->add_option("--title", ev.title, "Report title");

    AblateArgs ab;
    auto* c_ab = app.add_subcommand("ablate", "dFPP on/off and fusion-rule ablations");
    c_ab->add_option("--data", ab.data, "Evaluation manifest")->required();
    c_ab->add_option("--out", ab.out, "Output directory")->required();
    c_ab->add_option("--checkpoints", ab.checkpoints, "Directory holding <variant>.ckpt");
    c_ab->add_flag("--train-all", ab.train_all, "Train every variant first");
    c_ab->add_option("--train-data", ab.train_data, "Training manifest for --train-all");
    c_ab->add_option("--detector", ab.detector, "Detector checkpoint for --train-all");
    c_ab->add_option("--config", ab.config, "Train or experiment config (JSON)");
    c_ab->add_option("--vgg19", ab.vgg19, "VGG19 feature weights");
    c_ab->add_option("--metrics", ab.metrics, "Metric subset")->delimiter(',');
    ab.over.add_to(c_ab);

    std::string rep_in, rep_out;
    auto* c_rep = app.add_subcommand("report", "Render a JSON report as a text table");
    c_rep->add_option("--in", rep_in, "Report JSON")->required();
    c_rep->add_option("--out", rep_out, "Text file to write");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back(); // program name
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << error_line("usage", e.what());
        return kExitUsage;
    }

    const std::string command = joined_args(args);
    try {
        torch::set_num_threads(threads);
        if (c_synth->parsed()) return cmd_synth(synth, out);
        if (c_phantom->parsed()) return cmd_phantom(ph_out, ph_count, ph_size, ph_seed, out);
        if (c_td->parsed()) return cmd_train_detector(td, out, command);
        if (c_tf->parsed()) return cmd_train_fusion(tf, out, command);
        if (c_fuse->parsed()) return cmd_fuse(fa, out);
        if (c_eval->parsed()) return cmd_evaluate(ev, out, command);
        if (c_ab->parsed()) return cmd_ablate(ab, out, command);
        if (c_rep->parsed()) return cmd_report(rep_in, rep_out, out);
    } catch (const UsageError& e) {
        err << error_line(e.code(), e.what());
        return kExitUsage;
    } catch (const Error& e) {
        err << error_line(e.code(), e.what());
        return kExitFailure;
    } catch (const std::exception& e) {
        err << error_line("internal", e.what());
        return kExitFailure;
    }
    err << error_line("usage", "no subcommand");
    return kExitUsage;
}

} // namespace dcfuse
