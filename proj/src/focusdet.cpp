#include "dcfuse/focusdet.hpp"

#include "dcfuse/digest.hpp"
#include "dcfuse/error.hpp"

#include <sstream>

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace dcfuse {

std::string FocusDetectorConfig::architecture() const
{
    std::ostringstream os;
    os << "dcfuse-focusdet/v1 base=" << base << " depth=" << depth;
    return os.str();
}

DoubleConvImpl::DoubleConvImpl(int in, int out, double negative_slope)
{
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)));
    act = register_module("act", nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(negative_slope)));
}

torch::Tensor DoubleConvImpl::forward(const torch::Tensor& x)
{
    return act(conv2(act(conv1(x))));
}

FocusDetectorImpl::FocusDetectorImpl(FocusDetectorConfig cfg) : cfg_(cfg)
{
    require(cfg_.base >= 1 && cfg_.depth >= 1, "param", "detector base width and depth must be positive");
    int in = 2;
    for (int level = 0; level <= cfg_.depth; ++level) {
        const int out = cfg_.base << level;
        down_.push_back(register_module("down" + std::to_string(level), DoubleConv(in, out, cfg_.negative_slope)));
        in = out;
    }
    for (int level = cfg_.depth - 1; level >= 0; --level) {
        const int out = cfg_.base << level;
        up_.push_back(register_module("up" + std::to_string(level),
                                      nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * out, out, 2).stride(2))));
        merge_.push_back(
            register_module("merge" + std::to_string(level), DoubleConv(2 * out, out, cfg_.negative_slope)));
    }
    head = register_module("head", nn::Conv2d(nn::Conv2dOptions(cfg_.base, 1, 1)));
}

namespace {

torch::Tensor pad_to_stride(const torch::Tensor& x, int stride)
{
    const int64_t h = x.size(2);
    const int64_t w = x.size(3);
    const int64_t ph = (stride - h % stride) % stride;
    const int64_t pw = (stride - w % stride) % stride;
    if (ph == 0 && pw == 0) return x;
    return F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
}

} // namespace

std::vector<torch::Tensor> FocusDetectorImpl::encode(const torch::Tensor& x)
{
    require(x.dim() == 4 && x.size(1) == 2, "shape", "detector expects a [N,2,H,W] input");
    std::vector<torch::Tensor> skips;
    auto y = pad_to_stride(x, cfg_.stride());
    for (std::size_t level = 0; level < down_.size(); ++level) {
        if (level > 0) y = F::max_pool2d(y, F::MaxPool2dFuncOptions(2));
        y = down_[level](y);
        skips.push_back(y);
    }
    return skips;
}

torch::Tensor FocusDetectorImpl::forward(const torch::Tensor& a, const torch::Tensor& b)
{
    if (a.sizes() != b.sizes()) throw Error("shape", "detector inputs differ in size");
    require(a.dim() == 4 && a.size(1) == 1, "shape", "detector inputs must be [N,1,H,W]");
    const int64_t h = a.size(2);
    const int64_t w = a.size(3);

    auto skips = encode(torch::cat({a, b}, 1));
    auto y = skips.back();
    for (std::size_t i = 0; i < up_.size(); ++i) {
        const auto& skip = skips[skips.size() - 2 - i];
        y = merge_[i](torch::cat({up_[i](y), skip}, 1));
    }
    using torch::indexing::Slice;
    return torch::sigmoid(head(y)).index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
}

std::int64_t FocusDetectorImpl::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

std::string parameter_checksum(const nn::Module& module)
{
    std::string buf;
    for (const auto& item : module.named_parameters()) {
        const auto t = item.value().detach().to(torch::kCPU).contiguous();
        buf += item.key();
        buf.push_back('\0');
        buf.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
    }
    return sha256_hex(buf);
}

FrozenDetector::FrozenDetector(FocusDetector det) : det_(std::move(det))
{
    require(!det_.is_empty(), "frozen", "cannot freeze an empty detector");
    det_->eval();
    for (auto& p : det_->parameters()) p.set_requires_grad(false);
    checksum_ = parameter_checksum(*det_);
}

void FrozenDetector::verify() const
{
    if (parameter_checksum(*det_) != checksum_)
        throw Error("frozen", "focus detector parameters changed after freezing");
}

torch::Tensor FrozenDetector::predict(const torch::Tensor& a, const torch::Tensor& b) const
{
    return det_->forward(a, b);
}

std::vector<torch::Tensor> FrozenDetector::encode(const torch::Tensor& x) const
{
    return det_->encode(x);
}

GrayImage predict_fpm(FocusDetector& det, const GrayImage& a, const GrayImage& b)
{
    if (!a.same_shape(b)) throw Error("shape", "detector inputs differ in size");
    torch::NoGradGuard no_grad;
    const bool was_training = det->is_training();
    det->eval();
    auto out = det->forward(to_tensor(a), to_tensor(b));
    det->train(was_training);
    return to_image(out);
}

const std::vector<TrainingPair>& detector_pairs()
{
    using enum PairMember;
    static const std::vector<TrainingPair> pairs{
        {kS1, kS2, false}, {kS2, kS1, true}, {kS1, kGT, false},
        {kGT, kS1, false}, {kS2, kGT, true}, {kGT, kS2, true},
    };
    return pairs;
}

namespace {

const torch::Tensor& member(const SampleBatch& b, PairMember m)
{
    switch (m) {
    case PairMember::kS1: return b.s1;
    case PairMember::kS2: return b.s2;
    case PairMember::kGT: return b.gt;
    }
    return b.gt;
}

} // namespace

torch::Tensor detector_loss_from_predictions(const std::vector<torch::Tensor>& predictions, const SampleBatch& batch)
{
    const auto& pairs = detector_pairs();
    require(predictions.size() == pairs.size(), "shape", "one prediction per detector pair is required");
    torch::Tensor total = torch::zeros({}, predictions.front().options());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto target = pairs[i].target_is_complement ? 1.0 - batch.fpm : batch.fpm;
        total = total + F::mse_loss(predictions[i], target.to(predictions[i].dtype()));
    }
    return total;
}

torch::Tensor detector_loss(FocusDetector& det, const SampleBatch& batch)
{
    const auto& pairs = detector_pairs();
    const int64_t n = batch.s1.size(0);
    std::vector<torch::Tensor> firsts, seconds;
    for (const auto& p : pairs) {
        firsts.push_back(member(batch, p.first));
        seconds.push_back(member(batch, p.second));
    }
    // all pairs in one forward pass
    const auto pred = det->forward(torch::cat(firsts, 0), torch::cat(seconds, 0));
    return detector_loss_from_predictions(pred.split(n, 0), batch);
}

double miou(const GrayImage& pred, const FocusPropertyMap& truth, double threshold)
{
    if (!truth.same_shape(pred)) throw Error("shape", "miou: prediction and truth differ in size");
    std::size_t inter[2] = {0, 0};
    std::size_t uni[2] = {0, 0};
    const auto p = pred.pixels();
    const auto t = truth.mask();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int pc = p[i] >= threshold ? 1 : 0;
        const int tc = t[i];
        for (int c = 0; c < 2; ++c) {
            const bool in_p = pc == c;
            const bool in_t = tc == c;
            inter[c] += in_p && in_t;
            uni[c] += in_p || in_t;
        }
    }
    double sum = 0.0;
    int classes = 0;
    for (int c = 0; c < 2; ++c) {
        if (uni[c] == 0) continue;
        sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        ++classes;
    }
    return classes ? sum / classes : 1.0;
}

} // namespace dcfuse
