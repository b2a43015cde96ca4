#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vitclick/types.hpp"

namespace vitclick {

enum class NeckKind { simple, single_scale, parallel, partial };

[[nodiscard]] std::string to_string(NeckKind kind);
[[nodiscard]] NeckKind neck_kind_from_string(const std::string& s);

/// Four maps ordered fine to coarse: levels[i] is NCHW at `strides[i]` input
/// pixels with channels {C1, 2C1, 4C1, 8C1}. Strides are {1/4, 1/2, 1, 2} of the
/// patch size ({4, 8, 16, 32} for patch 16). For the single-scale ablation
/// every level sits at the patch stride. `head_size` is the finest level's
/// grid (4x the token grid), where the head fuses the levels.
struct FeaturePyramid {
    std::array<torch::Tensor, 4> levels;
    std::array<double, 4> strides{4, 8, 16, 32};
    ImageSize input_size;
    ImageSize head_size;
};

/// Channel-wise LayerNorm over NCHW maps (normalises each spatial location).
class LayerNorm2dImpl : public torch::nn::Module {
public:
    explicit LayerNorm2dImpl(int channels, double eps = 1e-6);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor weight;
    torch::Tensor bias;

private:
    double eps_;
};
TORCH_MODULE(LayerNorm2d);

/// Block indices tapped by the parallel variant: ceil(N/4) * {1,2,3,4} - 1.
[[nodiscard]] std::vector<int> parallel_tap_blocks(int depth);

/// Builds the multi-scale pyramid from backbone features. `simple` and
/// `partial` read only the last map; `parallel` consumes four tapped maps
/// (shallowest feeds the finest level); `single_scale` keeps every level at
/// the native stride.
class SimpleFeaturePyramidImpl : public torch::nn::Module {
public:
    SimpleFeaturePyramidImpl(int in_dim, int c1, NeckKind kind, int patch_size, ImageSize input_size);

    /// last_map: [B, gh, gw, C0].
    FeaturePyramid forward(const torch::Tensor& last_map);
    /// taps: four [B, gh, gw, C0] maps, shallow to deep (parallel variant).
    FeaturePyramid forward_taps(const std::vector<torch::Tensor>& taps);

    [[nodiscard]] NeckKind kind() const { return kind_; }
    [[nodiscard]] std::array<int, 4> level_channels() const;

    torch::nn::Sequential to_s4{nullptr};
    torch::nn::Sequential to_s8{nullptr};
    torch::nn::Sequential to_s16{nullptr};
    torch::nn::Sequential to_s32{nullptr};

private:
    FeaturePyramid assemble(const std::array<torch::Tensor, 4>& inputs);

    int in_dim_;
    int c1_;
    NeckKind kind_;
    int patch_size_;
    ImageSize input_size_;
};
TORCH_MODULE(SimpleFeaturePyramid);

}  // namespace vitclick
