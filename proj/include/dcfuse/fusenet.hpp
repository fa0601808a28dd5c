#pragma once

#include "dcfuse/fusion_rules.hpp"
#include "dcfuse/imagio.hpp"

#include <torch/torch.h>

#include <string>

namespace dcfuse {

struct FusionNetConfig {
    int shallow1 = 16;    // first 3x3 conv
    int features = 32;    // C, width the fusion rule sees
    int expansion = 4;    // inverted-residual expansion factor
    int se_reduction = 4; // channel-attention bottleneck
    int spatial_kernel = 7;
    int recon_hidden = 16;
    double negative_slope = 0.2;
    fusion::FusionRule rule = fusion::FusionRule::kChannelWiseSf;
    int window = 11;

    // Canonical text identifying the parameter layout (not the weights).
    std::string architecture() const;
};

// Reference size the model is compared against in summaries.
inline constexpr std::int64_t kReferenceParameterCount = 240'000;

// Inverted residual block with dual attention: 1x1 expansion, 3x3 depthwise,
// squeeze-and-excitation channel attention, 7x7 spatial attention over
// channel-pooled maps, 1x1 linear projection and an identity shortcut.
class IrdamImpl : public torch::nn::Module {
public:
    IrdamImpl(int channels, int expansion, int se_reduction, int spatial_kernel, double negative_slope);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d expand{nullptr}, depthwise{nullptr}, project{nullptr};
    torch::nn::Linear se_fc1{nullptr}, se_fc2{nullptr};
    torch::nn::Conv2d spatial{nullptr};
    torch::nn::LeakyReLU act{nullptr};
};
TORCH_MODULE(Irdam);

class FeatureExtractorImpl : public torch::nn::Module {
public:
    explicit FeatureExtractorImpl(const FusionNetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::LeakyReLU act{nullptr};
    Irdam irdam{nullptr};
};
TORCH_MODULE(FeatureExtractor);

class ReconstructorImpl : public torch::nn::Module {
public:
    ReconstructorImpl(int in_channels, int hidden, double negative_slope);
    torch::Tensor forward(const torch::Tensor& x);
    int in_channels() const { return in_channels_; }

private:
    int in_channels_;
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::LeakyReLU act{nullptr};
};
TORCH_MODULE(Reconstructor);

// Siamese two-input fusion network: both sources go through one shared
// extractor, features are merged by the configured rule, and a two-layer
// reconstructor maps them back to one channel.
class FusionNetImpl : public torch::nn::Module {
public:
    explicit FusionNetImpl(FusionNetConfig cfg = {});

    const FusionNetConfig& config() const { return cfg_; }
    // Swaps the inference rule. The reconstructor's input width must not
    // change, so cat cannot be swapped with the others.
    void set_rule(fusion::FusionRule rule, int window);

    // [N,1,H,W] -> [N,C,H,W]
    torch::Tensor extract(const torch::Tensor& img);
    torch::Tensor fuse_features(const torch::Tensor& f1, const torch::Tensor& f2) const;
    // [N,C',H,W] -> [N,1,H,W], unclamped
    torch::Tensor reconstruct(const torch::Tensor& features);
    // Full pipeline on batches; unclamped output for training.
    torch::Tensor forward(const torch::Tensor& s1, const torch::Tensor& s2);

    std::int64_t parameter_count() const;
    std::string summary() const;

private:
    FusionNetConfig cfg_;
    FeatureExtractor extractor{nullptr};
    Reconstructor reconstructor{nullptr};
};
TORCH_MODULE(FusionNet);

// Inference on one registered pair: eval mode, no grad, output clamped to [0,1].
GrayImage fuse(FusionNet& model, const GrayImage& s1, const GrayImage& s2);

// Features of a single image through the shared extractor, [C,H,W].
torch::Tensor extract_features(FusionNet& model, const GrayImage& img);

// Reconstruction of a [C,H,W] or [N,C,H,W] tensor, clamped to [0,1].
GrayImage reconstruct(FusionNet& model, const torch::Tensor& features);

} // namespace dcfuse
