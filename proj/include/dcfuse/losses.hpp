#pragma once

#include "dcfuse/focusdet.hpp"
#include "dcfuse/tensor_image.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dcfuse::losses {

struct LossWeights {
    double alpha1 = 0.2; // perceptual
    double alpha2 = 1.0; // SSIM
    double alpha3 = 8.0; // focal frequency
};

struct LossBreakdown {
    double total = 0.0;
    double dfpp = 0.0;
    double perceptual = 0.0;
    double ssim = 0.0;
    double ffl = 0.0;
};

// Scalar tensors, still attached to the graph.
struct LossTerms {
    torch::Tensor total, dfpp, perceptual, ssim, ffl;
    LossBreakdown values() const;
};

// Multi-layer feature extractor for the perceptual loss. Inputs are
// single-channel [N,1,H,W] images; implementations replicate channels as needed.
class FeatureBackbone {
public:
    virtual ~FeatureBackbone() = default;
    virtual std::vector<torch::Tensor> features(const torch::Tensor& gray) const = 0;
    virtual std::string name() const = 0;
};

// Encoder levels of the frozen focus detector (the image fed to both input
// channels). Used when pretrained natural-image weights are unavailable.
class DetectorEncoderBackbone final : public FeatureBackbone {
public:
    explicit DetectorEncoderBackbone(std::shared_ptr<const FrozenDetector> detector);
    std::vector<torch::Tensor> features(const torch::Tensor& gray) const override;
    std::string name() const override { return "focusdet-encoder"; }

private:
    std::shared_ptr<const FrozenDetector> detector_;
};

// VGG19 convolutional trunk, tapped after the ReLUs that close slices
// [0,2), [2,7), [7,12), [12,21), [21,30) of the torchvision layer list. Gray
// input is copied to three channels and ImageNet-normalized. Weights come
// from a file written by tools/export_vgg19.py.
class Vgg19Backbone final : public FeatureBackbone {
public:
    Vgg19Backbone();
    void load(const std::filesystem::path& weights);
    bool loaded() const { return loaded_; }
    std::vector<torch::Tensor> features(const torch::Tensor& gray) const override;
    std::string name() const override { return "vgg19"; }
    // Sequential indices whose outputs are the perceptual taps.
    static constexpr int kTaps[] = {1, 6, 11, 20, 29};

private:
    mutable torch::nn::Sequential trunk_;
    bool loaded_ = false;
};

// Sum over detector-pair targets of MSE(U(fused, S_i), FPM_(GT,S_i)) with
// FPM_(GT,S1) = fpm and FPM_(GT,S2) = 1 - fpm. Verifies the detector checksum.
torch::Tensor dfpp_loss(const FrozenDetector& det, const torch::Tensor& fused, const SampleBatch& batch);

// Sum over backbone layers of the per-image L2 norm of the feature
// difference, averaged over the batch.
torch::Tensor perceptual_loss(const torch::Tensor& fused, const torch::Tensor& gt, const FeatureBackbone& backbone);

// 1 - mean SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, range 1,
// valid window positions only).
torch::Tensor ssim_loss(const torch::Tensor& fused, const torch::Tensor& gt);

// Spectrum weight: |F_fused - F_gt| divided by its per-image maximum, detached.
torch::Tensor ffl_weight(const torch::Tensor& fused, const torch::Tensor& gt);

// (1/WH) sum_uv w(u,v) |F_fused - F_gt|^2 with unnormalized 2-D DFTs, averaged
// over the batch. `weight` defaults to ffl_weight(fused, gt).
torch::Tensor ffl_loss(const torch::Tensor& fused, const torch::Tensor& gt,
                       const std::optional<torch::Tensor>& weight = std::nullopt);

struct LossContext {
    std::shared_ptr<const FrozenDetector> detector;  // required when use_dfpp
    std::shared_ptr<const FeatureBackbone> backbone; // required when alpha1 > 0
    LossWeights weights;
    bool use_dfpp = true;
};

// total = dfpp + a1 * perceptual + a2 * ssim + a3 * ffl
LossTerms total_loss(const LossContext& ctx, const torch::Tensor& fused, const SampleBatch& batch);

} // namespace dcfuse::losses
