#pragma once

#include "dcfuse/datasynth.hpp"
#include "dcfuse/imagio.hpp"

#include <torch/torch.h>

#include <span>

namespace dcfuse {

// [1,1,H,W] float tensor sharing nothing with the image.
torch::Tensor to_tensor(const GrayImage& img);
torch::Tensor to_tensor(const FocusPropertyMap& fpm);

// Stacks same-shaped images into [N,1,H,W].
torch::Tensor stack_images(std::span<const GrayImage> imgs);

// Accepts [H,W], [1,H,W] or [1,1,H,W]; values are copied as-is (no clamping).
GrayImage to_image(const torch::Tensor& t);

struct SampleBatch {
    torch::Tensor s1;  // [N,1,H,W]
    torch::Tensor s2;
    torch::Tensor gt;
    torch::Tensor fpm; // 0/1 floats
};

SampleBatch make_batch(std::span<const MultiFocusSample> samples, std::span<const std::size_t> indices);
SampleBatch make_batch(std::span<const MultiFocusSample> samples);

} // namespace dcfuse
