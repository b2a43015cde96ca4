#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "vitclick/types.hpp"

namespace vitclick {

/// Architecture constants of the plain ViT encoder.
struct BackboneConfig {
    ImageSize input_size{448, 448};
    int patch_size = 16;
    int embed_dim = 768;
    int depth = 12;
    int num_heads = 12;
    double mlp_ratio = 4.0;
    bool qkv_bias = true;
    std::vector<int> global_block_indices{5, 11};
    /// Side of the square attention window, in patches.
    int window_size = 14;
    /// Side of the stored positional grid (the pretraining resolution).
    int pretrain_grid = 14;
    /// Stochastic depth; kept for finetuning configs, 0 by default.
    double drop_path = 0.0;

    [[nodiscard]] int grid_h() const { return input_size.height / patch_size; }
    [[nodiscard]] int grid_w() const { return input_size.width / patch_size; }
    [[nodiscard]] bool is_global_block(int index) const;

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;

    /// Named presets: "vit_b", "vit_l", "vit_h", "vit_xtiny".
    static BackboneConfig preset(std::string_view name);
};

/// `count` block indices spread evenly over [0, depth); the last block is
/// always included.
[[nodiscard]] std::vector<int> evenly_spaced_global_blocks(int depth, int count);

/// Bicubic resampling (align-corners grid) of a square positional grid
/// [g, g, C] (optionally with a leading batch dim of 1) to [gh, gw, C].
/// Returns the input unchanged when the target equals the source.
[[nodiscard]] torch::Tensor interpolate_pos_encoding(const torch::Tensor& pos, int target_h, int target_w);

struct WindowLayout {
    std::int64_t batch = 0;
    std::int64_t grid_h = 0;
    std::int64_t grid_w = 0;
    std::int64_t window = 0;

    [[nodiscard]] std::int64_t windows_per_image() const { return (grid_h / window) * (grid_w / window); }
};

/// [B, gh, gw, C] -> [B * nW, window, window, C]; windows in raster order.
[[nodiscard]] std::pair<torch::Tensor, WindowLayout> window_partition(const torch::Tensor& tokens, std::int64_t window);
[[nodiscard]] torch::Tensor window_unpartition(const torch::Tensor& windows, const WindowLayout& layout);

/// Truncated normal N(0, std^2) restricted to [-2 std, 2 std].
void trunc_normal_(torch::Tensor& t, double std);

/// Non-overlapping patchify + linear projection, emitting [B, gh, gw, C].
class PatchEmbedImpl : public torch::nn::Module {
public:
    PatchEmbedImpl(int in_chans, int embed_dim, int patch_size);
    torch::Tensor forward(const torch::Tensor& x);

    [[nodiscard]] int patch_size() const { return patch_size_; }
    [[nodiscard]] int embed_dim() const { return embed_dim_; }
    [[nodiscard]] int in_chans() const { return in_chans_; }

    torch::nn::Conv2d proj{nullptr};

private:
    int in_chans_;
    int embed_dim_;
    int patch_size_;
};
TORCH_MODULE(PatchEmbed);

class AttentionImpl : public torch::nn::Module {
public:
    AttentionImpl(int dim, int num_heads, bool qkv_bias);
    /// x: [B, h, w, C]; every token attends to every token of its item.
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear qkv{nullptr};
    torch::nn::Linear proj{nullptr};

private:
    int num_heads_;
    double scale_;
};
TORCH_MODULE(Attention);

class MlpImpl : public torch::nn::Module {
public:
    MlpImpl(int dim, int hidden);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear fc1{nullptr};
    torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(Mlp);

/// Pre-norm transformer block. window_size == 0 means global attention.
class BlockImpl : public torch::nn::Module {
public:
    BlockImpl(int dim, int num_heads, double mlp_ratio, bool qkv_bias, int window_size, double drop_path);
    torch::Tensor forward(const torch::Tensor& x);

    [[nodiscard]] int window_size() const { return window_size_; }

    torch::nn::LayerNorm norm1{nullptr};
    Attention attn{nullptr};
    torch::nn::LayerNorm norm2{nullptr};
    Mlp mlp{nullptr};

private:
    torch::Tensor drop_path(const torch::Tensor& x) const;

    int window_size_;
    double drop_path_;
};
TORCH_MODULE(Block);

/// Plain ViT encoder. Parameter names follow the MAE/timm layout
/// (patch_embed.proj.*, pos_embed, blocks.{i}.attn.qkv.*, ...).
class BackboneImpl : public torch::nn::Module {
public:
    explicit BackboneImpl(BackboneConfig cfg);

    /// Image [B, 3, H, W] -> patch tokens [B, gh, gw, C0] (no positional term).
    torch::Tensor embed_image(const torch::Tensor& image);

    /// Positional grid resampled to the configured token grid, [1, gh, gw, C0].
    torch::Tensor positional_encoding();

    /// Runs all blocks over tokens that already carry the positional term and
    /// returns the last feature map [B, gh, gw, C0].
    torch::Tensor encode(const torch::Tensor& fused_tokens);

    /// Like encode, also returning the outputs of the listed blocks (ascending).
    std::vector<torch::Tensor> encode_with_taps(const torch::Tensor& fused_tokens, const std::vector<int>& taps);

    /// Freezes (requires_grad = false) blocks in [first, last).
    void freeze_blocks(int first, int last);
    /// Freezes everything including the patch embedding and positional grid.
    void freeze_all();

    [[nodiscard]] const BackboneConfig& config() const { return cfg_; }

    PatchEmbed patch_embed{nullptr};
    torch::Tensor pos_embed;
    torch::nn::ModuleList blocks{nullptr};

private:
    void check_tokens(const torch::Tensor& tokens) const;

    BackboneConfig cfg_;
};
TORCH_MODULE(Backbone);

/// Builds a randomly initialised backbone (truncated normal 0.02 for
/// projections and the positional grid, zero biases, unit LayerNorm scales).
[[nodiscard]] Backbone build_backbone(const BackboneConfig& cfg);

/// Initialisation shared by every module in the project.
void init_weights(torch::nn::Module& module);

}  // namespace vitclick
