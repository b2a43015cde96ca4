#include "vitclick/click_fusion.hpp"

#include <algorithm>

namespace vitclick {

std::int64_t GuidanceMap::nonzero(int channel) const {
    const auto plane = static_cast<std::size_t>(size.area());
    const auto begin = channels.begin() + static_cast<std::ptrdiff_t>(plane * channel);
    return std::count_if(begin, begin + static_cast<std::ptrdiff_t>(plane), [](float v) { return v != 0.0F; });
}

torch::Tensor GuidanceMap::to_tensor() const {
    return torch::from_blob(const_cast<float*>(channels.data()), {3, size.height, size.width}, torch::kFloat32)
        .clone();
}

namespace {

void check_click_bounds(const std::vector<Click>& clicks, ImageSize size) {
    for (std::size_t i = 0; i < clicks.size(); ++i) {
        const auto& c = clicks[i];
        if (c.row < 0 || c.col < 0 || c.row >= size.height || c.col >= size.width) {
            throw std::out_of_range("click " + std::to_string(i) + " at (" + std::to_string(c.row) + ", " +
                                    std::to_string(c.col) + ") lies outside the " + std::to_string(size.height) +
                                    "x" + std::to_string(size.width) + " image");
        }
    }
}

GuidanceMap rasterize_disks(const std::vector<Click>& clicks, ImageSize size, int radius) {
    if (radius <= 0) throw std::invalid_argument("disk radius must be positive");
    check_click_bounds(clicks, size);
    GuidanceMap g;
    g.size = size;
    g.disk_radius = radius;
    g.channels.assign(static_cast<std::size_t>(size.area()) * 3, 0.0F);
    const int r2 = radius * radius;
    for (const auto& c : clicks) {
        const int ch = c.is_positive() ? 0 : 1;
        float* plane = g.channels.data() + static_cast<std::size_t>(ch) * size.area();
        const int r0 = std::max(0, c.row - radius);
        const int r1 = std::min(size.height - 1, c.row + radius);
        const int c0 = std::max(0, c.col - radius);
        const int c1 = std::min(size.width - 1, c.col + radius);
        for (int r = r0; r <= r1; ++r) {
            const int dr = r - c.row;
            for (int col = c0; col <= c1; ++col) {
                const int dc = col - c.col;
                if (dr * dr + dc * dc <= r2) plane[static_cast<std::size_t>(r) * size.width + col] = 1.0F;
            }
        }
    }
    return g;
}

}  // namespace

GuidanceMap rasterize_clicks(const std::vector<Click>& clicks, const BinaryMask& prev_mask, ImageSize size,
                             int radius) {
    auto g = rasterize_disks(clicks, size, radius);
    if (!prev_mask.empty()) {
        if (prev_mask.size() != size) throw std::invalid_argument("previous mask size does not match image size");
        float* plane = g.channels.data() + 2 * static_cast<std::size_t>(size.area());
        const auto& d = prev_mask.data();
        for (std::size_t i = 0; i < d.size(); ++i) plane[i] = d[i] ? 1.0F : 0.0F;
    }
    return g;
}

GuidanceMap rasterize_clicks(const std::vector<Click>& clicks, const ProbabilityMap& prev_mask, ImageSize size,
                             int radius) {
    auto g = rasterize_disks(clicks, size, radius);
    if (prev_mask.size() != ImageSize{}) {
        if (prev_mask.size() != size) throw std::invalid_argument("previous mask size does not match image size");
        float* plane = g.channels.data() + 2 * static_cast<std::size_t>(size.area());
        const auto& d = prev_mask.data();
        for (std::size_t i = 0; i < d.size(); ++i) plane[i] = std::clamp(d[i], 0.0F, 1.0F);
    }
    return g;
}

PatchEmbed make_guidance_embed(const PatchEmbed& image_embed) {
    PatchEmbed embed(3, image_embed->embed_dim(), image_embed->patch_size());
    torch::NoGradGuard no_grad;
    embed->proj->weight.zero_();
    embed->proj->bias.zero_();
    return embed;
}

torch::Tensor fuse_tokens(const torch::Tensor& image_tokens, const torch::Tensor& guidance, PatchEmbed& guidance_embed,
                          const PatchEmbed& image_embed) {
    if (guidance_embed->patch_size() != image_embed->patch_size()) {
        throw ConfigError("guidance embedding patch size " + std::to_string(guidance_embed->patch_size()) +
                          " differs from image patch size " + std::to_string(image_embed->patch_size()));
    }
    if (guidance_embed->embed_dim() != image_embed->embed_dim()) {
        throw ConfigError("guidance embedding width " + std::to_string(guidance_embed->embed_dim()) +
                          " differs from image embedding width " + std::to_string(image_embed->embed_dim()));
    }
    auto g = guidance_embed->forward(guidance);
    TORCH_CHECK(g.sizes() == image_tokens.sizes(), "guidance tokens ", g.sizes(), " do not match image tokens ",
                image_tokens.sizes());
    return image_tokens + g;
}

nlohmann::json clicks_to_json(const std::vector<Click>& clicks) {
    auto arr = nlohmann::json::array();
    for (const auto& c : clicks) {
        arr.push_back({{"row", c.row}, {"col", c.col}, {"polarity", to_string(c.polarity)}, {"ordinal", c.ordinal}});
    }
    return arr;
}

std::vector<Click> clicks_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw std::invalid_argument("click list must be a JSON array");
    std::vector<Click> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        Click c;
        c.row = e.at("row").get<int>();
        c.col = e.at("col").get<int>();
        c.polarity = polarity_from_string(e.at("polarity").get<std::string>());
        c.ordinal = e.contains("ordinal") ? e.at("ordinal").get<int>() : static_cast<int>(i);
        out.push_back(c);
    }
    return out;
}

void validate_clicks(const std::vector<Click>& clicks, ImageSize size) {
    check_click_bounds(clicks, size);
    for (std::size_t i = 0; i < clicks.size(); ++i) {
        if (clicks[i].ordinal != static_cast<int>(i)) {
            throw std::invalid_argument("click ordinals must be contiguous from 0; click " + std::to_string(i) +
                                        " has ordinal " + std::to_string(clicks[i].ordinal));
        }
    }
}

}  // namespace vitclick
