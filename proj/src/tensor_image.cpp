#include "dcfuse/tensor_image.hpp"

#include "dcfuse/error.hpp"

namespace dcfuse {

torch::Tensor to_tensor(const GrayImage& img)
{
    require(!img.empty(), "shape", "empty image");
    auto t = torch::empty({1, 1, img.height(), img.width()}, torch::kFloat32);
    std::copy(img.pixels().begin(), img.pixels().end(), t.data_ptr<float>());
    return t;
}

torch::Tensor to_tensor(const FocusPropertyMap& fpm)
{
    return to_tensor(fpm.to_image());
}

torch::Tensor stack_images(std::span<const GrayImage> imgs)
{
    require(!imgs.empty(), "shape", "no images to stack");
    require_same_shape(imgs, "stack");
    std::vector<torch::Tensor> ts;
    ts.reserve(imgs.size());
    for (const auto& img : imgs) ts.push_back(to_tensor(img));
    return torch::cat(ts, 0);
}

GrayImage to_image(const torch::Tensor& t)
{
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    while (c.dim() > 2) {
        require(c.size(0) == 1, "shape", "tensor holds more than one image");
        c = c.squeeze(0);
    }
    require(c.dim() == 2, "shape", "expected a 2-D image tensor");
    const int h = static_cast<int>(c.size(0));
    const int w = static_cast<int>(c.size(1));
    const float* p = c.data_ptr<float>();
    return GrayImage(h, w, std::vector<float>(p, p + static_cast<std::size_t>(h) * w));
}

SampleBatch make_batch(std::span<const MultiFocusSample> samples, std::span<const std::size_t> indices)
{
    require(!indices.empty(), "data", "empty batch");
    std::vector<torch::Tensor> s1, s2, gt, fpm;
    for (std::size_t i : indices) {
        const auto& s = samples[i];
        s1.push_back(to_tensor(s.s1));
        s2.push_back(to_tensor(s.s2));
        gt.push_back(to_tensor(s.gt));
        fpm.push_back(to_tensor(s.fpm));
    }
    return {torch::cat(s1), torch::cat(s2), torch::cat(gt), torch::cat(fpm)};
}

SampleBatch make_batch(std::span<const MultiFocusSample> samples)
{
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return make_batch(samples, idx);
}

} // namespace dcfuse
