#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vitclick/backbone.hpp"
#include "vitclick/click_fusion.hpp"
#include "vitclick/feature_pyramid.hpp"
#include "vitclick/seg_head.hpp"
#include "vitclick/types.hpp"

namespace vitclick {

/// What the previous-mask guidance channel carries.
enum class PrevMaskMode { binary, probability };

struct ModelConfig {
    std::string name = "vit_b";
    BackboneConfig backbone = BackboneConfig::preset("vit_b");
    NeckKind neck = NeckKind::simple;
    int c1 = 128;
    int c2 = 256;
    int click_radius = kDefaultClickRadius;
    PrevMaskMode prev_mask_mode = PrevMaskMode::binary;

    void validate() const;
    [[nodiscard]] ImageSize input_size() const { return backbone.input_size; }

    /// "vit_b", "vit_l", "vit_h", "vit_xtiny" at 448x448, plus "xtiny_desk":
    /// the ViT-xTiny architecture at 128x128 with a native positional grid
    /// and 4x4 windows, for CPU-scale training.
    static ModelConfig preset(std::string_view name);
    /// Same preset re-targeted to another square input size. The window keeps
    /// its size when it divides the new grid, otherwise the largest divisor of
    /// the grid below it is used.
    static ModelConfig preset(std::string_view name, int input_size);

    /// Applies flat dotted overrides (model.*, neck.*, guidance.*); unknown
    /// keys in those namespaces throw ConfigError.
    void apply_overrides(const nlohmann::json& flat);

    [[nodiscard]] nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct ParameterBreakdown {
    std::int64_t backbone = 0;        // patch embedding + positional grid + blocks
    std::int64_t guidance_embed = 0;  // symmetric click/prev-mask embedding
    std::int64_t neck = 0;
    std::int64_t head = 0;

    [[nodiscard]] std::int64_t total() const { return backbone + guidance_embed + neck + head; }
    /// Share of the full model held by the ViT (both patch embeddings included).
    [[nodiscard]] double backbone_share() const {
        return static_cast<double>(backbone + guidance_embed) / static_cast<double>(total());
    }
};

struct ModelOutput {
    torch::Tensor logits;  // [B, 1, H/4, W/4]
    torch::Tensor probs;   // [B, 1, H, W]
};

class ClickSegModelImpl : public torch::nn::Module {
public:
    explicit ClickSegModelImpl(ModelConfig cfg);

    /// image: normalised [B, 3, H, W]; guidance: [B, 3, H, W].
    ModelOutput forward(const torch::Tensor& image, const torch::Tensor& guidance);

    /// Fused tokens (image + guidance + positional grid), [B, gh, gw, C0].
    torch::Tensor fused_tokens(const torch::Tensor& image, const torch::Tensor& guidance);
    FeaturePyramid pyramid(const torch::Tensor& image, const torch::Tensor& guidance);

    /// Applies the requires_grad policy: everything trainable, then the whole
    /// ViT frozen when `freeze_backbone`, and blocks [N/2, N) frozen for the
    /// partial neck. The guidance embedding always stays trainable.
    void apply_trainability(bool freeze_backbone);

    [[nodiscard]] ParameterBreakdown parameter_breakdown() const;
    [[nodiscard]] const ModelConfig& config() const { return cfg_; }

    Backbone backbone{nullptr};
    PatchEmbed guidance_embed{nullptr};
    SimpleFeaturePyramid neck{nullptr};
    MlpHead head{nullptr};

private:
    ModelConfig cfg_;
};
TORCH_MODULE(ClickSegModel);

/// Randomly initialised model; `seed` drives torch's generator.
[[nodiscard]] ClickSegModel build_model(const ModelConfig& cfg, std::uint64_t seed = 0);

/// RGB uint8 -> ImageNet-normalised float [3, H, W].
[[nodiscard]] torch::Tensor image_to_tensor(const RgbImage& image);
[[nodiscard]] torch::Tensor mask_to_tensor(const BinaryMask& mask);

/// Model-only checkpoint (config + weights). Training checkpoints written by
/// the trainer are also readable here.
void save_model(const std::string& path, ClickSegModel& model);
[[nodiscard]] ClickSegModel load_model(const std::string& path);

/// (image, clicks, previous mask) -> probability map at the image's size.
using PredictFn = std::function<ProbabilityMap(const RgbImage&, const std::vector<Click>&, const BinaryMask&)>;

/// Thread-safe inference wrapper around a shared, read-only model. Inputs of
/// any size are resized (longest side to the model input, aspect kept) and
/// zero-padded bottom/right; the prediction is cropped and resized back.
class Predictor {
public:
    explicit Predictor(ClickSegModel model);

    [[nodiscard]] ProbabilityMap predict(const RgbImage& image, const std::vector<Click>& clicks,
                                         const BinaryMask& prev_mask) const;
    [[nodiscard]] PredictFn as_function() const;

    [[nodiscard]] const ModelConfig& config() const { return model_->config(); }
    [[nodiscard]] ClickSegModel model() const { return model_; }

private:
    ClickSegModel model_;
};

}  // namespace vitclick
