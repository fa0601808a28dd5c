#include "dcfuse/fusion_rules.hpp"

#include "dcfuse/error.hpp"

namespace F = torch::nn::functional;

namespace dcfuse::fusion {

namespace {

torch::Tensor as_batched(const torch::Tensor& t, const char* what)
{
    if (t.dim() == 3) return t.unsqueeze(0);
    require(t.dim() == 4, "shape", std::string(what) + ": expected [N,C,H,W] or [C,H,W]");
    return t;
}

torch::Tensor like_input(const torch::Tensor& out, const torch::Tensor& in)
{
    return in.dim() == 3 ? out.squeeze(0) : out;
}

void require_window(int window)
{
    if (window < 3 || window % 2 == 0)
        throw Error("param", "fusion window must be odd and >= 3, got " + std::to_string(window));
}

void require_same(const torch::Tensor& a, const torch::Tensor& b, const char* what)
{
    if (a.sizes() != b.sizes()) throw Error("shape", std::string(what) + ": tensor shapes differ");
}

torch::Tensor replicate_pad(const torch::Tensor& x, int left, int right, int top, int bottom)
{
    return F::pad(x, F::PadFuncOptions({left, right, top, bottom}).mode(torch::kReplicate));
}

torch::Tensor window_sum(const torch::Tensor& x, int window)
{
    // box sum from cumulative sums along each axis of the padded map
    using torch::indexing::Slice;
    const int r = window / 2;
    const auto padded = replicate_pad(x, r + 1, r, r + 1, r);
    auto c = padded.cumsum(3);
    const int64_t w = x.size(3);
    c = c.index({Slice(), Slice(), Slice(), Slice(window, window + w)}) -
        c.index({Slice(), Slice(), Slice(), Slice(0, w)});
    c = c.cumsum(2);
    const int64_t h = x.size(2);
    return c.index({Slice(), Slice(), Slice(window, window + h), Slice()}) -
           c.index({Slice(), Slice(), Slice(0, h), Slice()});
}

torch::Tensor window_max(const torch::Tensor& x, int window)
{
    const int r = window / 2;
    const auto padded = replicate_pad(x, r, r, r, r);
    const auto rows = F::max_pool2d(padded, F::MaxPool2dFuncOptions({1, window}).stride(1));
    return F::max_pool2d(rows, F::MaxPool2dFuncOptions({window, 1}).stride(1));
}

} // namespace

FusionRule parse_fusion_rule(const std::string& name)
{
    if (name == "channel_wise_sf") return FusionRule::kChannelWiseSf;
    if (name == "sf") return FusionRule::kSf;
    if (name == "c_w_max") return FusionRule::kChannelWindowMax;
    if (name == "max") return FusionRule::kMax;
    if (name == "cat") return FusionRule::kCat;
    throw Error("rule", "unknown fusion rule: " + name);
}

std::string to_string(FusionRule rule)
{
    switch (rule) {
    case FusionRule::kChannelWiseSf: return "channel_wise_sf";
    case FusionRule::kSf: return "sf";
    case FusionRule::kChannelWindowMax: return "c_w_max";
    case FusionRule::kMax: return "max";
    case FusionRule::kCat: return "cat";
    }
    return "?";
}

torch::Tensor channel_sf(const torch::Tensor& features, int window)
{
    require_window(window);
    torch::NoGradGuard no_grad;
    const auto x = as_batched(features, "channel_sf").detach().to(torch::kFloat64);
    const int64_t h = x.size(2);
    const int64_t w = x.size(3);
    using torch::indexing::Slice;

    const auto left = replicate_pad(x, 1, 0, 0, 0);
    const auto top = replicate_pad(x, 0, 0, 1, 0);
    const auto rf = x - left.index({Slice(), Slice(), Slice(), Slice(0, w)});
    const auto cf = x - top.index({Slice(), Slice(), Slice(0, h), Slice()});
    const auto grad = torch::sqrt(rf * rf + cf * cf);
    return like_input(window_sum(grad, window), features);
}

torch::Tensor decision_tensor(const torch::Tensor& sf1, const torch::Tensor& sf2)
{
    require_same(sf1, sf2, "decision_tensor");
    return sf1 >= sf2;
}

torch::Tensor fuse_features(const torch::Tensor& f1, const torch::Tensor& f2, const torch::Tensor& d)
{
    require_same(f1, f2, "fuse_features");
    if (d.sizes() != f1.sizes()) {
        // a single-channel decision map gates every channel
        require(d.dim() == f1.dim() && d.size(-3) == 1, "shape", "fuse_features: decision shape mismatch");
    }
    return torch::where(d.to(torch::kBool), f1, f2);
}

torch::Tensor rule_decision(const torch::Tensor& f1, const torch::Tensor& f2, FusionRule rule, int window)
{
    require_same(f1, f2, "rule_decision");
    torch::NoGradGuard no_grad;
    switch (rule) {
    case FusionRule::kChannelWiseSf:
        return decision_tensor(channel_sf(f1, window), channel_sf(f2, window));
    case FusionRule::kSf: {
        const int cdim = f1.dim() - 3;
        const auto s1 = channel_sf(f1, window).sum(cdim, true);
        const auto s2 = channel_sf(f2, window).sum(cdim, true);
        return decision_tensor(s1, s2).expand(f1.sizes());
    }
    case FusionRule::kChannelWindowMax: {
        require_window(window);
        const auto a = window_max(as_batched(f1, "c_w_max").detach().abs(), window);
        const auto b = window_max(as_batched(f2, "c_w_max").detach().abs(), window);
        return like_input(a >= b, f1);
    }
    case FusionRule::kMax:
        return f1.detach() >= f2.detach();
    case FusionRule::kCat:
        break;
    }
    throw Error("rule", "rule " + to_string(rule) + " has no decision map");
}

torch::Tensor fuse_with_rule(const torch::Tensor& f1, const torch::Tensor& f2, FusionRule rule, int window)
{
    require_same(f1, f2, "fuse_with_rule");
    if (rule == FusionRule::kCat) return torch::cat({f1, f2}, f1.dim() - 3);
    return fuse_features(f1, f2, rule_decision(f1, f2, rule, window));
}

} // namespace dcfuse::fusion
