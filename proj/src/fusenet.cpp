#include "dcfuse/fusenet.hpp"

#include "dcfuse/error.hpp"
#include "dcfuse/tensor_image.hpp"

#include <cmath>
#include <sstream>

namespace nn = torch::nn;

namespace dcfuse {

std::string FusionNetConfig::architecture() const
{
    std::ostringstream os;
    os << "dcfuse-fusion/v1 shallow=" << shallow1 << " C=" << features << " exp=" << expansion
       << " se=" << se_reduction << " sk=" << spatial_kernel << " rec=" << recon_hidden
       << " rule=" << fusion::to_string(rule);
    return os.str();
}

namespace {

nn::Conv2d conv(int in, int out, int k, int groups = 1)
{
    return nn::Conv2d(nn::Conv2dOptions(in, out, k).padding(k / 2).groups(groups));
}

} // namespace

IrdamImpl::IrdamImpl(int channels, int expansion, int se_reduction, int spatial_kernel, double negative_slope)
{
    const int wide = channels * expansion;
    expand = register_module("expand", conv(channels, wide, 1));
    depthwise = register_module("depthwise", conv(wide, wide, 3, wide));
    se_fc1 = register_module("se_fc1", nn::Linear(wide, wide / se_reduction));
    se_fc2 = register_module("se_fc2", nn::Linear(wide / se_reduction, wide));
    spatial = register_module("spatial", conv(2, 1, spatial_kernel));
    project = register_module("project", conv(wide, channels, 1));
    act = register_module("act", nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(negative_slope)));
}

torch::Tensor IrdamImpl::forward(const torch::Tensor& x)
{
    auto y = act(expand(x));
    y = act(depthwise(y));

    // channel attention
    auto squeeze = y.mean({2, 3});
    auto excite = torch::sigmoid(se_fc2(torch::relu(se_fc1(squeeze))));
    y = y * excite.unsqueeze(-1).unsqueeze(-1);

    // spatial attention
    auto pooled = torch::cat({y.mean(1, true), std::get<0>(y.max(1, true))}, 1);
    y = y * torch::sigmoid(spatial(pooled));

    return x + project(y);
}

FeatureExtractorImpl::FeatureExtractorImpl(const FusionNetConfig& cfg)
{
    conv1 = register_module("conv1", conv(1, cfg.shallow1, 3));
    conv2 = register_module("conv2", conv(cfg.shallow1, cfg.features, 3));
    act = register_module("act", nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(cfg.negative_slope)));
    irdam = register_module("irdam", Irdam(cfg.features, cfg.expansion, cfg.se_reduction, cfg.spatial_kernel,
                                           cfg.negative_slope));
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& x)
{
    return irdam(act(conv2(act(conv1(x)))));
}

ReconstructorImpl::ReconstructorImpl(int in_channels, int hidden, double negative_slope)
    : in_channels_(in_channels)
{
    conv1 = register_module("conv1", conv(in_channels, hidden, 3));
    conv2 = register_module("conv2", conv(hidden, 1, 3));
    act = register_module("act", nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(negative_slope)));
}

torch::Tensor ReconstructorImpl::forward(const torch::Tensor& x)
{
    if (x.size(1) != in_channels_)
        throw Error("shape", "reconstructor expects " + std::to_string(in_channels_) + " channels, got " +
                                 std::to_string(x.size(1)));
    return conv2(act(conv1(x)));
}

FusionNetImpl::FusionNetImpl(FusionNetConfig cfg) : cfg_(cfg)
{
    if (cfg_.window < 3 || cfg_.window % 2 == 0)
        throw Error("param", "fusion window must be odd and >= 3");
    require((cfg_.features * cfg_.expansion) % cfg_.se_reduction == 0, "param",
            "expanded width must be divisible by the SE reduction");
    extractor = register_module("extractor", FeatureExtractor(cfg_));
    reconstructor = register_module(
        "reconstructor",
        Reconstructor(fusion::fused_channels(cfg_.rule, cfg_.features), cfg_.recon_hidden, cfg_.negative_slope));
}

void FusionNetImpl::set_rule(fusion::FusionRule rule, int window)
{
    if (fusion::fused_channels(rule, cfg_.features) != fusion::fused_channels(cfg_.rule, cfg_.features))
        throw Error("rule", "rule " + fusion::to_string(rule) + " needs a different reconstructor than " +
                                fusion::to_string(cfg_.rule));
    if (window < 3 || window % 2 == 0)
        throw Error("param", "fusion window must be odd and >= 3, got " + std::to_string(window));
    cfg_.rule = rule;
    cfg_.window = window;
}

torch::Tensor FusionNetImpl::extract(const torch::Tensor& img)
{
    require(img.dim() == 4 && img.size(1) == 1, "shape", "extract expects [N,1,H,W]");
    return extractor(img);
}

torch::Tensor FusionNetImpl::fuse_features(const torch::Tensor& f1, const torch::Tensor& f2) const
{
    return fusion::fuse_with_rule(f1, f2, cfg_.rule, cfg_.window);
}

torch::Tensor FusionNetImpl::reconstruct(const torch::Tensor& features)
{
    return reconstructor(features);
}

torch::Tensor FusionNetImpl::forward(const torch::Tensor& s1, const torch::Tensor& s2)
{
    if (s1.sizes() != s2.sizes()) throw Error("shape", "source images differ in size");
    // one pass through the shared extractor for both sources
    const auto both = extract(torch::cat({s1, s2}, 0));
    const auto halves = both.chunk(2, 0);
    return reconstruct(fuse_features(halves[0], halves[1]));
}

std::int64_t FusionNetImpl::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

std::string FusionNetImpl::summary() const
{
    const auto n = parameter_count();
    const double dev = static_cast<double>(n - kReferenceParameterCount) / kReferenceParameterCount;
    std::ostringstream os;
    os << cfg_.architecture() << " window=" << cfg_.window << "\n";
    os << "parameters: " << n << " (reference 0.24M, deviation " << std::showpos
       << std::round(dev * 1000.0) / 10.0 << std::noshowpos << "%)";
    if (std::abs(dev) > 0.25) os << "\nnote: parameter count deviates from the 0.24M reference by more than 25%";
    return os.str();
}

GrayImage fuse(FusionNet& model, const GrayImage& s1, const GrayImage& s2)
{
    if (!s1.same_shape(s2)) throw Error("shape", "source images differ in size");
    torch::NoGradGuard no_grad;
    const bool was_training = model->is_training();
    model->eval();
    auto out = model->forward(to_tensor(s1), to_tensor(s2));
    model->train(was_training);
    auto img = to_image(out);
    img.clamp_unit();
    return img;
}

torch::Tensor extract_features(FusionNet& model, const GrayImage& img)
{
    torch::NoGradGuard no_grad;
    return model->extract(to_tensor(img)).squeeze(0);
}

GrayImage reconstruct(FusionNet& model, const torch::Tensor& features)
{
    torch::NoGradGuard no_grad;
    const auto batched = features.dim() == 3 ? features.unsqueeze(0) : features;
    auto img = to_image(model->reconstruct(batched.to(torch::kFloat32)));
    img.clamp_unit();
    return img;
}

} // namespace dcfuse
