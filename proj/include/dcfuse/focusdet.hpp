#pragma once

#include "dcfuse/datasynth.hpp"
#include "dcfuse/imagio.hpp"
#include "dcfuse/tensor_image.hpp"

#include <torch/torch.h>

#include <memory>
#include <string>
#include <vector>

namespace dcfuse {

struct FocusDetectorConfig {
    int base = 16;  // channels at full resolution, doubled per level
    int depth = 4;  // number of 2x downsamplings
    double negative_slope = 0.2;

    std::string architecture() const;
    // Inputs are padded up to a multiple of this before the forward pass.
    int stride() const { return 1 << depth; }
};

class DoubleConvImpl : public torch::nn::Module {
public:
    DoubleConvImpl(int in, int out, double negative_slope);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::LeakyReLU act{nullptr};
};
TORCH_MODULE(DoubleConv);

// Dual-input U-Net: the two images are stacked as a 2-channel input and the
// sigmoid head predicts, per pixel, whether the first image's source is in
// focus there.
class FocusDetectorImpl : public torch::nn::Module {
public:
    explicit FocusDetectorImpl(FocusDetectorConfig cfg = {});

    const FocusDetectorConfig& config() const { return cfg_; }

    // a, b: [N,1,H,W] -> [N,1,H,W] in [0,1]. Any H, W (reflect-padded internally).
    torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

    // Encoder activations at every level for a [N,2,H,W] input (H, W multiples
    // of stride()). Used as a perceptual feature backbone.
    std::vector<torch::Tensor> encode(const torch::Tensor& x);

    std::int64_t parameter_count() const;

private:
    FocusDetectorConfig cfg_;
    std::vector<DoubleConv> down_;
    std::vector<torch::nn::ConvTranspose2d> up_;
    std::vector<DoubleConv> merge_;
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(FocusDetector);

// A detector whose weights can no longer change. The SHA-256 of the parameter
// bytes is recorded at freeze time and checked by verify().
class FrozenDetector {
public:
    explicit FrozenDetector(FocusDetector det);

    const FocusDetector& module() const { return det_; }
    const std::string& checksum() const { return checksum_; }

    // Throws Error("frozen") if the parameters changed since freezing.
    void verify() const;

    // Differentiable w.r.t. a and b; never w.r.t. the detector.
    torch::Tensor predict(const torch::Tensor& a, const torch::Tensor& b) const;
    std::vector<torch::Tensor> encode(const torch::Tensor& x) const;

private:
    mutable FocusDetector det_;
    std::string checksum_;
};

std::string parameter_checksum(const torch::nn::Module& module);

// Soft focus map for (a, b): near 1 where a's source is in focus.
GrayImage predict_fpm(FocusDetector& det, const GrayImage& a, const GrayImage& b);

// The ordered input pairs the detector is trained on and the map each one
// should reproduce. Targets use the focus map of the first source image named
// in the pair (fpm for S1, 1 - fpm for S2).
enum class PairMember { kS1, kS2, kGT };
struct TrainingPair {
    PairMember first;
    PairMember second;
    bool target_is_complement; // false: fpm, true: 1 - fpm
};
const std::vector<TrainingPair>& detector_pairs();

// Sum over detector_pairs() of the per-pair mean squared error.
torch::Tensor detector_loss(FocusDetector& det, const SampleBatch& batch);
// Same sum for arbitrary per-pair predictions (one [N,1,H,W] per pair).
torch::Tensor detector_loss_from_predictions(const std::vector<torch::Tensor>& predictions, const SampleBatch& batch);

// Mean IoU over the {in focus, defocused} classes after thresholding `pred`.
// Classes absent from both prediction and truth are skipped.
double miou(const GrayImage& pred, const FocusPropertyMap& truth, double threshold = 0.5);

} // namespace dcfuse
