#include "vitclick/feature_pyramid.hpp"

#include <algorithm>

namespace vitclick {

namespace nn = torch::nn;

std::string to_string(NeckKind kind) {
    switch (kind) {
        case NeckKind::simple: return "simple";
        case NeckKind::single_scale: return "single_scale";
        case NeckKind::parallel: return "parallel";
        case NeckKind::partial: return "partial";
    }
    return "simple";
}

NeckKind neck_kind_from_string(const std::string& s) {
    if (s == "simple") return NeckKind::simple;
    if (s == "single_scale") return NeckKind::single_scale;
    if (s == "parallel") return NeckKind::parallel;
    if (s == "partial") return NeckKind::partial;
    throw ConfigError("unknown neck.kind '" + s + "' (expected simple, single_scale, parallel or partial)");
}

LayerNorm2dImpl::LayerNorm2dImpl(int channels, double eps) : eps_(eps) {
    weight = register_parameter("weight", torch::ones({channels}));
    bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x) {
    auto mean = x.mean(1, /*keepdim=*/true);
    auto var = (x - mean).pow(2).mean(1, /*keepdim=*/true);
    auto y = (x - mean) / torch::sqrt(var + eps_);
    return weight.view({1, -1, 1, 1}) * y + bias.view({1, -1, 1, 1});
}

std::vector<int> parallel_tap_blocks(int depth) {
    if (depth < 4) throw ConfigError("parallel feature pyramid needs at least 4 blocks, got " + std::to_string(depth));
    const int step = (depth + 3) / 4;
    std::vector<int> taps;
    for (int k = 1; k <= 4; ++k) taps.push_back(std::min(step * k, depth) - 1);
    return taps;
}

namespace {

nn::Conv2d conv1x1(int in, int out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 1)); }
nn::Conv2d conv2x2_down(int in, int out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 2).stride(2)); }
nn::ConvTranspose2d deconv2x2_up(int in, int out) {
    return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 2).stride(2));
}

}  // namespace

SimpleFeaturePyramidImpl::SimpleFeaturePyramidImpl(int in_dim, int c1, NeckKind kind, int patch_size,
                                                   ImageSize input_size)
    : in_dim_(in_dim), c1_(c1), kind_(kind), patch_size_(patch_size), input_size_(input_size) {
    const auto ch = level_channels();
    if (kind_ == NeckKind::single_scale) {
        auto proj = [&](int out) { return nn::Sequential(conv1x1(in_dim, out), LayerNorm2d(out), nn::GELU()); };
        to_s4 = register_module("to_s4", proj(ch[0]));
        to_s8 = register_module("to_s8", proj(ch[1]));
        to_s16 = register_module("to_s16", proj(ch[2]));
        to_s32 = register_module("to_s32", proj(ch[3]));
        return;
    }
    // Intermediate widths follow the ViTDet simple pyramid.
    const int d4 = std::max(2 * c1, in_dim / 2);
    const int d8 = std::max(2 * c1, in_dim / 2);
    const int d32 = std::max(8 * c1, 2 * in_dim);
    to_s4 = register_module("to_s4", nn::Sequential(deconv2x2_up(in_dim, d4), LayerNorm2d(d4), nn::GELU(),
                                                    deconv2x2_up(d4, d4 / 2), LayerNorm2d(d4 / 2),
                                                    conv1x1(d4 / 2, ch[0]), LayerNorm2d(ch[0]), nn::GELU()));
    to_s8 = register_module("to_s8", nn::Sequential(deconv2x2_up(in_dim, d8), LayerNorm2d(d8), conv1x1(d8, ch[1]),
                                                    LayerNorm2d(ch[1]), nn::GELU()));
    to_s16 = register_module("to_s16", nn::Sequential(conv1x1(in_dim, ch[2]), LayerNorm2d(ch[2]), nn::GELU()));
    to_s32 = register_module("to_s32", nn::Sequential(conv2x2_down(in_dim, d32), LayerNorm2d(d32),
                                                      conv1x1(d32, ch[3]), LayerNorm2d(ch[3]), nn::GELU()));
}

std::array<int, 4> SimpleFeaturePyramidImpl::level_channels() const {
    return {c1_, 2 * c1_, 4 * c1_, 8 * c1_};
}

FeaturePyramid SimpleFeaturePyramidImpl::assemble(const std::array<torch::Tensor, 4>& inputs) {
    std::array<torch::Tensor, 4> nchw;
    for (std::size_t i = 0; i < 4; ++i) {
        TORCH_CHECK(inputs[i].dim() == 4 && inputs[i].size(3) == in_dim_, "neck expects [B, gh, gw, ", in_dim_,
                    "] feature maps, got ", inputs[i].sizes());
        nchw[i] = inputs[i].permute({0, 3, 1, 2});
    }
    FeaturePyramid fp;
    fp.input_size = input_size_;
    fp.head_size = {input_size_.height / patch_size_ * 4, input_size_.width / patch_size_ * 4};
    fp.levels = {to_s4->forward(nchw[0]), to_s8->forward(nchw[1]), to_s16->forward(nchw[2]),
                 to_s32->forward(nchw[3])};
    if (kind_ == NeckKind::single_scale) {
        const double s = patch_size_;
        fp.strides = {s, s, s, s};
    } else {
        const double s = patch_size_;
        fp.strides = {s / 4, s / 2, s, s * 2};
    }
    return fp;
}

FeaturePyramid SimpleFeaturePyramidImpl::forward(const torch::Tensor& last_map) {
    if (kind_ == NeckKind::parallel) {
        throw ConfigError("the parallel feature pyramid needs four tapped block outputs");
    }
    return assemble({last_map, last_map, last_map, last_map});
}

FeaturePyramid SimpleFeaturePyramidImpl::forward_taps(const std::vector<torch::Tensor>& taps) {
    TORCH_CHECK(taps.size() == 4, "parallel feature pyramid expects 4 taps, got ", taps.size());
    return assemble({taps[0], taps[1], taps[2], taps[3]});
}

}  // namespace vitclick
