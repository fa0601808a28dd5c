#pragma once

#include <torch/torch.h>

#include <array>
#include <string>

// Feature-level fusion rules. Feature tensors are [N,C,H,W] (a bare [C,H,W]
// is accepted and treated as N = 1). Decision tensors are boolean with the
// same shape as the features they gate.
namespace dcfuse::fusion {

enum class FusionRule {
    kChannelWiseSf, // per-channel windowed spatial frequency (default)
    kSf,            // spatial frequency pooled over channels, one shared map
    kChannelWindowMax,
    kMax,
    kCat,
};

inline constexpr std::array kAllRules{FusionRule::kChannelWiseSf, FusionRule::kSf,
                                      FusionRule::kChannelWindowMax, FusionRule::kMax, FusionRule::kCat};

FusionRule parse_fusion_rule(const std::string& name);
std::string to_string(FusionRule rule);

// Per channel and pixel: sum over the window of sqrt(RF^2 + CF^2), with
// RF(i,j) = |F(i,j) - F(i,j-1)| and CF(i,j) = |F(i,j) - F(i-1,j)|. Borders
// are replicated, both for the differences and for the window. Computed and
// returned in float64.
torch::Tensor channel_sf(const torch::Tensor& features, int window);

// true where sf1 >= sf2 (ties select the first source).
torch::Tensor decision_tensor(const torch::Tensor& sf1, const torch::Tensor& sf2);

// f1 where d, else f2. Selection is exact; gradients reach the selected input.
torch::Tensor fuse_features(const torch::Tensor& f1, const torch::Tensor& f2, const torch::Tensor& d);

// Decision map for the selection-type rules (every rule except kMax/kCat).
// Computed without gradient tracking.
torch::Tensor rule_decision(const torch::Tensor& f1, const torch::Tensor& f2, FusionRule rule, int window);

// Fused features under any rule. kCat returns 2C channels.
torch::Tensor fuse_with_rule(const torch::Tensor& f1, const torch::Tensor& f2, FusionRule rule, int window);

// Output channel count of a rule for C input channels.
inline int fused_channels(FusionRule rule, int channels) { return rule == FusionRule::kCat ? 2 * channels : channels; }

} // namespace dcfuse::fusion
