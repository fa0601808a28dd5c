#include "dcfuse/trainer.hpp"

#include "dcfuse/checkpoint.hpp"
#include "dcfuse/digest.hpp"
#include "dcfuse/error.hpp"
#include "dcfuse/tensor_image.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace dcfuse {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const TrainConfig& c)
{
    return {{"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon},
            {"decay_rate", c.decay_rate},
            {"decay_every", c.decay_every},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"weights", {{"alpha1", c.weights.alpha1}, {"alpha2", c.weights.alpha2}, {"alpha3", c.weights.alpha3}}},
            {"use_dfpp", c.use_dfpp},
            {"checkpoint_every", c.checkpoint_every}};
}

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object()) throw Error("config", where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw Error("config", "unknown key '" + k + "' in " + where);
}

void validate(const TrainConfig& c)
{
    require(c.lr > 0 && std::isfinite(c.lr), "config", "lr must be positive");
    require(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1, "config", "betas must lie in [0,1)");
    require(c.epsilon > 0, "config", "epsilon must be positive");
    require(c.decay_rate > 0, "config", "decay_rate must be positive");
    require(c.decay_every > 0, "config", "decay_every must be positive");
    require(c.batch_size > 0, "config", "batch_size must be positive");
    require(c.epochs > 0, "config", "epochs must be positive");
    require(c.checkpoint_every >= 0, "config", "checkpoint_every must be non-negative");
    require(c.weights.alpha1 >= 0 && c.weights.alpha2 >= 0 && c.weights.alpha3 >= 0, "config",
            "loss weights must be non-negative");
}

} // namespace

TrainConfig train_config_from_json(const json& j)
{
    check_keys(j, {"lr", "beta1", "beta2", "epsilon", "decay_rate", "decay_every", "batch_size", "epochs", "seed",
                   "weights", "use_dfpp", "checkpoint_every"},
               "train config");
    TrainConfig c;
    try {
        c.lr = j.value("lr", c.lr);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.decay_rate = j.value("decay_rate", c.decay_rate);
        c.decay_every = j.value("decay_every", c.decay_every);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.use_dfpp = j.value("use_dfpp", c.use_dfpp);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            check_keys(w, {"alpha1", "alpha2", "alpha3"}, "weights");
            c.weights.alpha1 = w.value("alpha1", c.weights.alpha1);
            c.weights.alpha2 = w.value("alpha2", c.weights.alpha2);
            c.weights.alpha3 = w.value("alpha3", c.weights.alpha3);
        }
    } catch (const json::exception& e) {
        throw Error("config", std::string("bad train config: ") + e.what());
    }
    validate(c);
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw Error("io", "cannot open config " + path.string());
    try {
        return train_config_from_json(json::parse(is));
    } catch (const json::parse_error& e) {
        throw Error("config", path.string() + ": " + e.what());
    }
}

double learning_rate_at(const TrainConfig& cfg, int epoch)
{
    require(epoch >= 0, "param", "epoch must be non-negative");
    return cfg.lr * std::pow(cfg.decay_rate, epoch / cfg.decay_every);
}

void adam_step(std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& grads, AdamState& state,
               const TrainConfig& cfg, double lr)
{
    if (grads.size() != params.size()) throw Error("shape", "adam_step: parameter and gradient counts differ");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(torch::zeros_like(p));
            state.v.push_back(torch::zeros_like(p));
        }
    }
    if (state.m.size() != params.size()) throw Error("shape", "adam_step: state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].defined() && grads[i].sizes() != params[i].sizes())
            throw Error("shape", "adam_step: gradient " + std::to_string(i) + " has the wrong shape");
        if (state.m[i].sizes() != params[i].sizes())
            throw Error("shape", "adam_step: state " + std::to_string(i) + " has the wrong shape");
    }

    torch::NoGradGuard no_grad;
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double step_size = lr / bc1;
    const double bc2_sqrt = std::sqrt(bc2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        m.mul_(cfg.beta1);
        v.mul_(cfg.beta2);
        if (grads[i].defined()) {
            m.add_(grads[i], 1.0 - cfg.beta1);
            v.addcmul_(grads[i], grads[i], 1.0 - cfg.beta2);
        }
        const auto denom = (v.sqrt() / bc2_sqrt).add_(cfg.epsilon);
        params[i].addcdiv_(m, denom, -step_size);
    }
}

bool is_validation_id(const std::string& id)
{
    return stable_hash64(id) % 10 == 0;
}

TrainingData make_training_data(std::vector<MultiFocusSample> samples, std::vector<std::string> ids)
{
    require(!samples.empty(), "data", "training data is empty");
    require(samples.size() == ids.size(), "data", "sample and id counts differ");
    TrainingData d;
    d.samples = std::move(samples);
    d.ids = std::move(ids);
    for (std::size_t i = 0; i < d.ids.size(); ++i)
        (is_validation_id(d.ids[i]) ? d.validation : d.train).push_back(i);
    require(!d.train.empty(), "data", "every sample fell into the validation split");
    const auto& shape = d.samples.front().gt;
    for (const auto& s : d.samples)
        require(s.gt.same_shape(shape), "data", "training samples must share one size");
    return d;
}

TrainingData load_training_data(const DatasetManifest& manifest)
{
    require(!manifest.entries.empty(), "data", "manifest has no entries");
    std::vector<std::string> ids;
    for (const auto& e : manifest.entries) ids.push_back(e.id);
    return make_training_data(load_samples(manifest), std::move(ids));
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch)
{
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(sample_seed(seed ^ 0x5eed0fda7a0e4d1bULL, static_cast<std::uint64_t>(epoch)));
    // Fisher-Yates with explicit index draws keeps the order independent of
    // the standard library's shuffle implementation.
    for (std::size_t i = count; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

namespace {

ordered_json breakdown_json(const losses::LossBreakdown& b)
{
    return {{"total", b.total}, {"dfpp", b.dfpp}, {"perceptual", b.perceptual}, {"ssim", b.ssim}, {"ffl", b.ffl}};
}

} // namespace

ordered_json TrainLog::to_json() const
{
    ordered_json records = ordered_json::array();
    ordered_json timing = ordered_json::array();
    for (const auto& r : epochs) {
        ordered_json j;
        j["epoch"] = r.epoch;
        j["lr"] = r.lr;
        if (kind == "detector")
            j["train_loss"] = r.train.total;
        else
            j["train"] = breakdown_json(r.train);
        if (r.validation) {
            if (kind == "detector")
                j["validation_loss"] = r.validation->total;
            else
                j["validation"] = breakdown_json(*r.validation);
        }
        if (r.validation_miou) j["validation_miou"] = *r.validation_miou;
        records.push_back(std::move(j));
        timing.push_back({{"epoch", r.epoch}, {"wall_seconds", r.wall_seconds}});
    }
    return {{"kind", kind}, {"best_epoch", best_epoch}, {"epochs", records}, {"metadata", {{"timing", timing}}}};
}

FusionNet init_fusion_net(const FusionNetConfig& cfg, std::uint64_t seed)
{
    torch::manual_seed(seed);
    return FusionNet(cfg);
}

FocusDetector init_detector(const FocusDetectorConfig& cfg, std::uint64_t seed)
{
    torch::manual_seed(seed);
    return FocusDetector(cfg);
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<torch::Tensor> snapshot(torch::nn::Module& m)
{
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

void restore(torch::nn::Module& m, const std::vector<torch::Tensor>& saved)
{
    torch::NoGradGuard no_grad;
    auto params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(saved[i]);
}

std::vector<torch::Tensor> gradients(const std::vector<torch::Tensor>& params)
{
    std::vector<torch::Tensor> g;
    for (const auto& p : params) g.push_back(p.grad());
    return g;
}

void zero_grad(std::vector<torch::Tensor>& params)
{
    for (auto& p : params)
        if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
}

std::vector<std::size_t> slice(const std::vector<std::size_t>& order, const std::vector<std::size_t>& pool,
                               std::size_t begin, std::size_t end)
{
    std::vector<std::size_t> out;
    for (std::size_t k = begin; k < end; ++k) out.push_back(pool[order[k]]);
    return out;
}

[[noreturn]] void dump_nan_batch(const TrainHooks& hooks, const TrainingData& data,
                                 const std::vector<std::size_t>& idx, const SampleBatch& batch,
                                 const torch::Tensor& fused, int epoch, std::int64_t step,
                                 const losses::LossBreakdown& values)
{
    auto dir = hooks.nan_dump_dir.empty() ? std::filesystem::path("nan_dump") : hooks.nan_dump_dir;
    std::filesystem::create_directories(dir);
    ordered_json j;
    j["epoch"] = epoch;
    j["step"] = step;
    j["loss"] = {{"total", values.total}, {"dfpp", values.dfpp}, {"perceptual", values.perceptual},
                 {"ssim", values.ssim}, {"ffl", values.ffl}};
    j["ids"] = ordered_json::array();
    const auto safe = torch::nan_to_num(fused.detach(), 0.0, 1.0, 0.0).clamp(0.0, 1.0);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& id = data.ids[idx[k]];
        j["ids"].push_back(id);
        const auto n = static_cast<int64_t>(k);
        save_image(to_image(batch.s1[n]), dir / (id + "_s1.png"), BitDepth::k16);
        save_image(to_image(batch.s2[n]), dir / (id + "_s2.png"), BitDepth::k16);
        save_image(to_image(batch.gt[n]), dir / (id + "_gt.png"), BitDepth::k16);
        save_image(to_image(batch.fpm[n]), dir / (id + "_fpm.png"), BitDepth::k8);
        save_image(to_image(safe[n]), dir / (id + "_fused.png"), BitDepth::k16);
    }
    std::ofstream(dir / "batch.json") << j.dump(2) << '\n';
    throw Error("nan", "non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                           "; batch written to " + dir.string());
}

bool finite(const losses::LossBreakdown& b)
{
    return std::isfinite(b.total) && std::isfinite(b.dfpp) && std::isfinite(b.perceptual) &&
           std::isfinite(b.ssim) && std::isfinite(b.ffl);
}

} // namespace

losses::LossBreakdown evaluate_loss(FusionNet& model, const losses::LossContext& ctx,
                                    const std::vector<MultiFocusSample>& samples,
                                    const std::vector<std::size_t>& indices, int batch_size)
{
    require(!indices.empty(), "data", "no samples to evaluate");
    const bool was_training = model->is_training();
    model->eval();
    torch::NoGradGuard no_grad;
    losses::LossBreakdown sum;
    for (std::size_t b = 0; b < indices.size(); b += batch_size) {
        const std::vector<std::size_t> idx(indices.begin() + b,
                                           indices.begin() + std::min(indices.size(), b + batch_size));
        const auto batch = make_batch(samples, idx);
        const auto v = losses::total_loss(ctx, model->forward(batch.s1, batch.s2), batch).values();
        const double n = static_cast<double>(idx.size());
        sum.total += v.total * n;
        sum.dfpp += v.dfpp * n;
        sum.perceptual += v.perceptual * n;
        sum.ssim += v.ssim * n;
        sum.ffl += v.ffl * n;
    }
    const double n = static_cast<double>(indices.size());
    model->train(was_training);
    return {sum.total / n, sum.dfpp / n, sum.perceptual / n, sum.ssim / n, sum.ffl / n};
}

double evaluate_miou(FocusDetector& det, const std::vector<MultiFocusSample>& samples,
                     const std::vector<std::size_t>& indices, int batch_size)
{
    require(!indices.empty(), "data", "no samples to evaluate");
    const bool was_training = det->is_training();
    det->eval();
    torch::NoGradGuard no_grad;
    double sum = 0.0;
    for (std::size_t b = 0; b < indices.size(); b += batch_size) {
        const std::vector<std::size_t> idx(indices.begin() + b,
                                           indices.begin() + std::min(indices.size(), b + batch_size));
        const auto batch = make_batch(samples, idx);
        const auto pred = det->forward(batch.s1, batch.s2);
        for (std::size_t k = 0; k < idx.size(); ++k)
            sum += miou(to_image(pred[static_cast<int64_t>(k)]), samples[idx[k]].fpm);
    }
    det->train(was_training);
    return sum / static_cast<double>(indices.size());
}

TrainLog train_detector(FocusDetector& det, const TrainingData& data, const TrainConfig& cfg, const TrainHooks& hooks)
{
    validate(cfg);
    require(!data.train.empty(), "data", "training data is empty");
    TrainLog log;
    log.kind = "detector";
    auto params = det->parameters();
    AdamState adam;
    std::vector<torch::Tensor> best;
    double best_score = -std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double lr = learning_rate_at(cfg, epoch);
        const auto order = epoch_order(data.train.size(), cfg.seed, epoch);
        det->train();
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const auto idx = slice(order, data.train, b, std::min(order.size(), b + cfg.batch_size));
            const auto batch = make_batch(data.samples, idx);
            zero_grad(params);
            const auto loss = detector_loss(det, batch);
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                losses::LossBreakdown v;
                v.total = value;
                dump_nan_batch(hooks, data, idx, batch, torch::zeros_like(batch.gt), epoch, adam.step, v);
            }
            loss.backward();
            adam_step(params, gradients(params), adam, cfg, lr);
            loss_sum += value * static_cast<double>(idx.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train.total = loss_sum / static_cast<double>(order.size());
        double score = -rec.train.total;
        if (!data.validation.empty()) {
            rec.validation_miou = evaluate_miou(det, data.samples, data.validation, cfg.batch_size);
            score = *rec.validation_miou;
        }
        if (score > best_score) {
            best_score = score;
            best = snapshot(*det);
            log.best_epoch = epoch;
        }
        rec.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        log.epochs.push_back(rec);
        if (!hooks.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(hooks.checkpoint_dir / ("detector_epoch" + std::to_string(epoch + 1) + ".ckpt"), det,
                            cfg.seed, {{"epoch", epoch}});
        if (hooks.on_epoch) hooks.on_epoch(rec);
    }
    restore(*det, best);
    det->eval();
    if (!hooks.checkpoint_dir.empty())
        save_checkpoint(hooks.checkpoint_dir / "detector_best.ckpt", det, cfg.seed, {{"epoch", log.best_epoch}});
    return log;
}

TrainLog train_fusion(FusionNet& model, std::shared_ptr<const FrozenDetector> detector,
                      std::shared_ptr<const losses::FeatureBackbone> backbone, const TrainingData& data,
                      const TrainConfig& cfg, const TrainHooks& hooks)
{
    validate(cfg);
    require(!data.train.empty(), "data", "training data is empty");
    if (detector) detector->verify();
    losses::LossContext ctx{detector, backbone, cfg.weights, cfg.use_dfpp};

    TrainLog log;
    log.kind = "fusion";
    auto params = model->parameters();
    AdamState adam;
    std::vector<torch::Tensor> best;
    double best_score = std::numeric_limits<double>::infinity();
    const ordered_json provenance = {{"backbone", backbone ? backbone->name() : "none"}, {"use_dfpp", cfg.use_dfpp}};

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double lr = learning_rate_at(cfg, epoch);
        const auto order = epoch_order(data.train.size(), cfg.seed, epoch);
        model->train();
        losses::LossBreakdown sum;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const auto idx = slice(order, data.train, b, std::min(order.size(), b + cfg.batch_size));
            const auto batch = make_batch(data.samples, idx);
            zero_grad(params);
            const auto fused = model->forward(batch.s1, batch.s2);
            const auto terms = losses::total_loss(ctx, fused, batch);
            const auto v = terms.values();
            if (!finite(v)) dump_nan_batch(hooks, data, idx, batch, fused, epoch, adam.step, v);
            terms.total.backward();
            adam_step(params, gradients(params), adam, cfg, lr);
            const double n = static_cast<double>(idx.size());
            sum.total += v.total * n;
            sum.dfpp += v.dfpp * n;
            sum.perceptual += v.perceptual * n;
            sum.ssim += v.ssim * n;
            sum.ffl += v.ffl * n;
        }
        const double n = static_cast<double>(order.size());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train = {sum.total / n, sum.dfpp / n, sum.perceptual / n, sum.ssim / n, sum.ffl / n};
        double score = rec.train.total;
        if (!data.validation.empty()) {
            rec.validation = evaluate_loss(model, ctx, data.samples, data.validation, cfg.batch_size);
            score = rec.validation->total;
        }
        if (score < best_score) {
            best_score = score;
            best = snapshot(*model);
            log.best_epoch = epoch;
            if (!hooks.checkpoint_dir.empty()) {
                auto extra = provenance;
                extra["epoch"] = epoch;
                save_checkpoint(hooks.checkpoint_dir / "fusion_best.ckpt", model, cfg.seed, extra);
            }
        }
        rec.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        log.epochs.push_back(rec);
        if (!hooks.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            auto extra = provenance;
            extra["epoch"] = epoch;
            save_checkpoint(hooks.checkpoint_dir / ("fusion_epoch" + std::to_string(epoch + 1) + ".ckpt"), model,
                            cfg.seed, extra);
        }
        if (hooks.on_epoch) hooks.on_epoch(rec);
    }
    restore(*model, best);
    model->eval();
    if (detector) detector->verify();
    return log;
}

} // namespace dcfuse
