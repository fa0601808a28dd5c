#include "dcfuse/losses.hpp"

#include "dcfuse/error.hpp"
#include "dcfuse/metrics.hpp"

#include <fstream>
#include <iterator>

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace dcfuse::losses {

LossBreakdown LossTerms::values() const
{
    auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
    return {v(total), v(dfpp), v(perceptual), v(ssim), v(ffl)};
}

namespace {

void require_pair(const torch::Tensor& a, const torch::Tensor& b, const char* what)
{
    if (a.sizes() != b.sizes()) throw Error("shape", std::string(what) + ": tensor shapes differ");
    require(a.dim() == 4 && a.size(1) == 1, "shape", std::string(what) + ": expected [N,1,H,W]");
}

} // namespace

DetectorEncoderBackbone::DetectorEncoderBackbone(std::shared_ptr<const FrozenDetector> detector)
    : detector_(std::move(detector))
{
    require(detector_ != nullptr, "backbone", "encoder backbone needs a frozen detector");
}

std::vector<torch::Tensor> DetectorEncoderBackbone::features(const torch::Tensor& gray) const
{
    return detector_->encode(torch::cat({gray, gray}, 1));
}

Vgg19Backbone::Vgg19Backbone()
{
    const int cfg[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512};
    int in = 3;
    for (int c : cfg) {
        if (c == 0) {
            trunk_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
            continue;
        }
        trunk_->push_back(nn::Conv2d(nn::Conv2dOptions(in, c, 3).padding(1)));
        trunk_->push_back(nn::ReLU());
        in = c;
    }
    trunk_->eval();
    for (auto& p : trunk_->parameters()) p.set_requires_grad(false);
}

void Vgg19Backbone::load(const std::filesystem::path& weights)
{
    std::ifstream is(weights, std::ios::binary);
    if (!is) throw Error("backbone", "cannot open VGG19 weights: " + weights.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    c10::IValue value;
    try {
        value = torch::pickle_load(bytes);
    } catch (const c10::Error& e) {
        throw Error("backbone", "cannot parse VGG19 weights " + weights.string() + ": " + e.what_without_backtrace());
    }
    require(value.isList(), "backbone", "VGG19 weight file must hold a list of tensors");
    const auto list = value.toList();

    std::vector<torch::Tensor> params;
    for (const auto& p : trunk_->parameters()) params.push_back(p);
    require(list.size() == params.size(), "backbone",
            "VGG19 weight file holds " + std::to_string(list.size()) + " tensors, expected " +
                std::to_string(params.size()));
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto t = list.get(i).toTensor();
        require(t.sizes() == params[i].sizes(), "backbone", "VGG19 tensor " + std::to_string(i) + " has wrong shape");
        params[i].copy_(t);
    }
    loaded_ = true;
}

std::vector<torch::Tensor> Vgg19Backbone::features(const torch::Tensor& gray) const
{
    require(loaded_, "backbone", "VGG19 backbone has no weights loaded");
    const auto opts = gray.options();
    const auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
    const auto stdv = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
    auto x = (gray.expand({-1, 3, -1, -1}) - mean) / stdv;

    std::vector<torch::Tensor> taps;
    int i = 0;
    for (auto& layer : *trunk_) {
        x = layer.forward(x);
        if (taps.size() < 5 && i == kTaps[taps.size()]) taps.push_back(x);
        if (taps.size() == 5) break;
        ++i;
    }
    return taps;
}

torch::Tensor dfpp_loss(const FrozenDetector& det, const torch::Tensor& fused, const SampleBatch& batch)
{
    require_pair(fused, batch.s1, "dfpp_loss");
    det.verify();
    const int64_t n = fused.size(0);
    const auto pred = det.predict(torch::cat({fused, fused}, 0), torch::cat({batch.s1, batch.s2}, 0).to(fused.dtype()));
    const auto parts = pred.split(n, 0);
    const auto fpm = batch.fpm.to(fused.dtype());
    return F::mse_loss(parts[0], fpm) + F::mse_loss(parts[1], 1.0 - fpm);
}

torch::Tensor perceptual_loss(const torch::Tensor& fused, const torch::Tensor& gt, const FeatureBackbone& backbone)
{
    require_pair(fused, gt, "perceptual_loss");
    std::vector<torch::Tensor> target;
    {
        torch::NoGradGuard no_grad;
        target = backbone.features(gt.to(fused.dtype()));
    }
    const auto feats = backbone.features(fused);
    require(feats.size() == target.size(), "backbone", "backbone returned inconsistent layer counts");
    torch::Tensor total = torch::zeros({}, fused.options());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const auto diff = (feats[i] - target[i]).flatten(1);
        total = total + torch::linalg_vector_norm(diff, 2, {1}, false, std::nullopt).mean();
    }
    return total;
}

torch::Tensor ssim_loss(const torch::Tensor& fused, const torch::Tensor& gt)
{
    require_pair(fused, gt, "ssim_loss");
    const metrics::SsimParams p;
    if (fused.size(2) < p.window || fused.size(3) < p.window)
        throw Error("shape", "ssim_loss: image smaller than the SSIM window");

    const auto taps = metrics::ssim_window(p);
    const auto g = torch::tensor(taps, fused.options().requires_grad(false));
    const auto kernel = torch::outer(g, g).view({1, 1, p.window, p.window});
    auto filt = [&](const torch::Tensor& x) { return F::conv2d(x, kernel); };

    const auto y = gt.to(fused.dtype());
    const auto mx = filt(fused);
    const auto my = filt(y);
    const auto vx = filt(fused * fused) - mx * mx;
    const auto vy = filt(y * y) - my * my;
    const auto cxy = filt(fused * y) - mx * my;
    const double c1 = std::pow(p.k1 * p.data_range, 2);
    const double c2 = std::pow(p.k2 * p.data_range, 2);
    const auto map = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    return 1.0 - map.mean();
}

namespace {

torch::Tensor spectrum_diff(const torch::Tensor& fused, const torch::Tensor& gt)
{
    const auto ff = torch::fft::fft2(fused);
    const auto fg = torch::fft::fft2(gt.to(fused.dtype()));
    return ff - fg;
}

} // namespace

torch::Tensor ffl_weight(const torch::Tensor& fused, const torch::Tensor& gt)
{
    require_pair(fused, gt, "ffl_weight");
    torch::NoGradGuard no_grad;
    const auto mag = torch::abs(spectrum_diff(fused.detach(), gt));
    const auto peak = std::get<0>(mag.flatten(1).max(1)).view({-1, 1, 1, 1});
    return torch::where(peak > 0, mag / peak.clamp_min(1e-300), torch::zeros_like(mag));
}

torch::Tensor ffl_loss(const torch::Tensor& fused, const torch::Tensor& gt, const std::optional<torch::Tensor>& weight)
{
    require_pair(fused, gt, "ffl_loss");
    const auto d = spectrum_diff(fused, gt);
    const auto dist = torch::real(d) * torch::real(d) + torch::imag(d) * torch::imag(d);
    const auto w = weight ? weight->to(dist.dtype()) : ffl_weight(fused, gt).to(dist.dtype());
    require(w.sizes() == dist.sizes(), "shape", "ffl_loss: weight shape mismatch");
    const double area = static_cast<double>(fused.size(2) * fused.size(3));
    return ((w * dist).sum({1, 2, 3}) / area).mean();
}

LossTerms total_loss(const LossContext& ctx, const torch::Tensor& fused, const SampleBatch& batch)
{
    require_pair(fused, batch.gt, "total_loss");
    const auto& w = ctx.weights;
    require(w.alpha1 >= 0 && w.alpha2 >= 0 && w.alpha3 >= 0, "param", "loss weights must be non-negative");
    const auto gt = batch.gt.to(fused.dtype());
    const auto zero = torch::zeros({}, fused.options());

    LossTerms t;
    if (ctx.use_dfpp) {
        require(ctx.detector != nullptr, "loss", "dFPP loss needs a frozen detector");
        t.dfpp = dfpp_loss(*ctx.detector, fused, batch);
    } else {
        t.dfpp = zero;
    }
    if (ctx.backbone) {
        t.perceptual = perceptual_loss(fused, gt, *ctx.backbone);
    } else {
        require(w.alpha1 == 0.0, "loss", "perceptual loss needs a feature backbone");
        t.perceptual = zero;
    }
    t.ssim = ssim_loss(fused, gt);
    t.ffl = ffl_loss(fused, gt);
    t.total = t.dfpp + w.alpha1 * t.perceptual + w.alpha2 * t.ssim + w.alpha3 * t.ffl;
    return t;
}

} // namespace dcfuse::losses
