#pragma once

#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vitclick/backbone.hpp"
#include "vitclick/types.hpp"

namespace vitclick {

inline constexpr int kDefaultClickRadius = 5;

/// Three channel-major planes of H x W: positive disks, negative disks,
/// previous mask.
struct GuidanceMap {
    ImageSize size;
    int disk_radius = kDefaultClickRadius;
    std::vector<float> channels;

    [[nodiscard]] float at(int channel, int row, int col) const {
        return channels[(static_cast<std::size_t>(channel) * size.height + row) * size.width + col];
    }
    [[nodiscard]] std::int64_t nonzero(int channel) const;
    /// [3, H, W] float32 copy.
    [[nodiscard]] torch::Tensor to_tensor() const;
};

/// Union of Euclidean disks (dist <= radius, inclusive) per polarity plus the
/// previous mask. An empty prev_mask means all zeros. Disks are clipped at the
/// image border. Throws std::out_of_range naming the first offending click.
[[nodiscard]] GuidanceMap rasterize_clicks(const std::vector<Click>& clicks, const BinaryMask& prev_mask,
                                           ImageSize size, int radius = kDefaultClickRadius);

/// Overload taking the previous mask as probabilities (already thresholded or
/// not, per the caller's prev-mask mode).
[[nodiscard]] GuidanceMap rasterize_clicks(const std::vector<Click>& clicks, const ProbabilityMap& prev_mask,
                                           ImageSize size, int radius = kDefaultClickRadius);

/// Builds the guidance patch embedding: structurally identical to the image
/// embedding (same patch size and width) with a zero-initialised projection,
/// so the fused tokens initially equal the image tokens.
[[nodiscard]] PatchEmbed make_guidance_embed(const PatchEmbed& image_embed);

/// image_tokens + guidance_embed(guidance). guidance: [B, 3, H, W].
/// Throws ConfigError if the two embeddings are not symmetric.
[[nodiscard]] torch::Tensor fuse_tokens(const torch::Tensor& image_tokens, const torch::Tensor& guidance,
                                        PatchEmbed& guidance_embed, const PatchEmbed& image_embed);

/// [{row, col, polarity, ordinal}, ...]
[[nodiscard]] nlohmann::json clicks_to_json(const std::vector<Click>& clicks);
[[nodiscard]] std::vector<Click> clicks_from_json(const nlohmann::json& j);

/// Checks bounds and that ordinals are 0..n-1 in order.
void validate_clicks(const std::vector<Click>& clicks, ImageSize size);

}  // namespace vitclick
