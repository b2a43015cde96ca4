#include "vitclick/seg_head.hpp"

#include <cmath>

namespace vitclick {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

MlpHeadImpl::MlpHeadImpl(std::array<int, 4> in_channels, int c2) : in_channels_(in_channels), c2_(c2) {
    linear_levels = register_module("linear_levels", nn::ModuleList());
    for (int ch : in_channels_) {
        linear_levels->push_back(nn::Conv2d(nn::Conv2dOptions(ch, c2, 1)));
    }
    fuse = register_module("fuse", nn::Conv2d(nn::Conv2dOptions(4 * c2, c2, 1).bias(false)));
    fuse_norm_weight = register_parameter("fuse_norm_weight", torch::ones({c2}));
    fuse_norm_bias = register_parameter("fuse_norm_bias", torch::zeros({c2}));
    pred = register_module("pred", nn::Conv2d(nn::Conv2dOptions(c2, 1, 1)));
}

HeadOutput MlpHeadImpl::forward(const FeaturePyramid& fp) {
    const auto& head = fp.head_size;
    std::vector<torch::Tensor> upsampled;
    upsampled.reserve(4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& level = fp.levels[i];
        TORCH_CHECK(level.dim() == 4 && level.size(1) == in_channels_[i], "pyramid level ", i, " has shape ",
                    level.sizes(), ", expected ", in_channels_[i], " channels");
        // Every level must tile the same input image.
        const double h = static_cast<double>(level.size(2)) * fp.strides[i];
        const double w = static_cast<double>(level.size(3)) * fp.strides[i];
        if (std::abs(h - fp.input_size.height) > 1e-9 || std::abs(w - fp.input_size.width) > 1e-9) {
            throw std::invalid_argument("pyramid level " + std::to_string(i) + " (" + std::to_string(level.size(2)) +
                                        "x" + std::to_string(level.size(3)) + " at stride " +
                                        std::to_string(fp.strides[i]) + ") does not match input " +
                                        std::to_string(fp.input_size.height) + "x" +
                                        std::to_string(fp.input_size.width));
        }
        auto y = linear_levels[i]->as<nn::Conv2dImpl>()->forward(level);
        if (y.size(2) != head.height || y.size(3) != head.width) {
            y = F::interpolate(y, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{head.height, head.width})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
        }
        upsampled.push_back(y);
    }
    HeadOutput out;
    out.fused = torch::cat(upsampled, 1);
    auto x = fuse->forward(out.fused);
    auto mean = x.mean(1, true);
    auto var = (x - mean).pow(2).mean(1, true);
    x = (x - mean) / torch::sqrt(var + 1e-6) * fuse_norm_weight.view({1, -1, 1, 1}) + fuse_norm_bias.view({1, -1, 1, 1});
    x = torch::gelu(x);
    out.logits = pred->forward(x);
    auto probs = torch::sigmoid(out.logits);
    if (probs.size(2) != fp.input_size.height || probs.size(3) != fp.input_size.width) {
        probs = F::interpolate(probs, F::InterpolateFuncOptions()
                                          .size(std::vector<int64_t>{fp.input_size.height, fp.input_size.width})
                                          .mode(torch::kBilinear)
                                          .align_corners(false));
    }
    out.probs = probs;
    return out;
}

BinaryMask binarize(const ProbabilityMap& p, double threshold) {
    BinaryMask m(p.size());
    const auto& src = p.data();
    auto& dst = m.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<double>(src[i]) > threshold ? 1 : 0;
    return m;
}

ProbabilityMap to_probability_map(const torch::Tensor& probs, int index) {
    auto t = probs.index({index, 0}).detach().to(torch::kCPU, torch::kFloat32).contiguous();
    const int h = static_cast<int>(t.size(0));
    const int w = static_cast<int>(t.size(1));
    std::vector<float> values(t.data_ptr<float>(), t.data_ptr<float>() + t.numel());
    return ProbabilityMap({h, w}, std::move(values));
}

}  // namespace vitclick
