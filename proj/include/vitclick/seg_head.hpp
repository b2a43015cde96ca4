#pragma once

#include <array>

#include <torch/torch.h>

#include "vitclick/feature_pyramid.hpp"
#include "vitclick/types.hpp"

namespace vitclick {

struct HeadOutput {
    torch::Tensor logits;  // [B, 1, head_h, head_w], pre-sigmoid
    torch::Tensor probs;   // [B, 1, H, W], sigmoid + bilinear upsample
    torch::Tensor fused;   // [B, 4 * C2, head_h, head_w], concatenated features
};

/// All-MLP head: per-level linear to C2, bilinear upsample to the finest grid,
/// concatenation, a two-layer MLP down to one channel, sigmoid, and a final
/// bilinear upsample to the input resolution. Linear layers are 1x1 convs, so
/// the same weights apply to any input size.
class MlpHeadImpl : public torch::nn::Module {
public:
    MlpHeadImpl(std::array<int, 4> in_channels, int c2);
    HeadOutput forward(const FeaturePyramid& fp);

    torch::nn::ModuleList linear_levels{nullptr};
    torch::nn::Conv2d fuse{nullptr};
    torch::Tensor fuse_norm_weight;
    torch::Tensor fuse_norm_bias;
    torch::nn::Conv2d pred{nullptr};

private:
    std::array<int, 4> in_channels_;
    int c2_;
};
TORCH_MODULE(MlpHead);

/// mask = [p > threshold]; ties go to background.
[[nodiscard]] BinaryMask binarize(const ProbabilityMap& p, double threshold = 0.5);

/// Extracts item `index` of a [B, 1, H, W] probability tensor.
[[nodiscard]] ProbabilityMap to_probability_map(const torch::Tensor& probs, int index = 0);

}  // namespace vitclick
