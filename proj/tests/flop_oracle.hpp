#pragma once

// FLOPs measured by walking a built model and reading the tensor shapes each
// layer actually sees on a probe input.

#include <cstdint>

#include "vitclick/model.hpp"

namespace oracle {

inline std::int64_t conv_macs(torch::nn::Module& layer, const torch::Tensor& in, const torch::Tensor& out) {
    if (auto* conv = layer.as<torch::nn::Conv2dImpl>()) {
        const auto& w = conv->weight;  // [out, in, kh, kw]
        return out.numel() * w.size(1) * w.size(2) * w.size(3);
    }
    if (auto* deconv = layer.as<torch::nn::ConvTranspose2dImpl>()) {
        const auto& w = deconv->weight;  // [in, out, kh, kw]
        return in.numel() * w.size(1) * w.size(2) * w.size(3);
    }
    return 0;
}

inline std::int64_t run_sequential(torch::nn::Sequential& seq, torch::Tensor x, torch::Tensor* out) {
    std::int64_t macs = 0;
    for (const auto& child : seq->children()) {
        torch::Tensor y = x;
        if (auto* conv = child->as<torch::nn::Conv2dImpl>()) {
            y = conv->forward(x);
        } else if (auto* deconv = child->as<torch::nn::ConvTranspose2dImpl>()) {
            y = deconv->forward(x);
        } else if (auto* ln = child->as<vitclick::LayerNorm2dImpl>()) {
            y = ln->forward(x);
        } else if (auto* gelu = child->as<torch::nn::GELUImpl>()) {
            y = gelu->forward(x);
        }
        macs += conv_macs(*child, x, y);
        x = y;
    }
    *out = x;
    return macs;
}

/// Two FLOPs per multiply-accumulate over both patch embeddings, every linear
/// layer, attention products, neck convolutions and head convolutions.
inline std::int64_t measured_flops(vitclick::ClickSegModel& model) {
    torch::NoGradGuard ng;
    const auto& cfg = model->config();
    const auto size = cfg.input_size();
    std::int64_t macs = 0;

    auto image = torch::zeros({1, 3, size.height, size.width});
    auto tokens = model->backbone->patch_embed->forward(image);
    const auto& pw = model->backbone->patch_embed->proj->weight;
    const std::int64_t t = tokens.size(1) * tokens.size(2);
    const std::int64_t c0 = tokens.size(3);
    macs += 2 * t * pw.size(0) * pw.size(1) * pw.size(2) * pw.size(3);

    for (const auto& module : *model->backbone->blocks) {
        auto* block = module->as<vitclick::BlockImpl>();
        for (auto* lin : {block->attn->qkv.get(), block->attn->proj.get(), block->mlp->fc1.get(), block->mlp->fc2.get()}) {
            macs += t * lin->weight.numel();
        }
        const std::int64_t keys = block->window_size() > 0 ? std::int64_t{block->window_size()} * block->window_size() : t;
        macs += 2 * t * keys * c0;
    }

    auto last = torch::zeros({1, tokens.size(1), tokens.size(2), c0}).permute({0, 3, 1, 2});
    torch::Tensor levels[4];
    macs += run_sequential(model->neck->to_s4, last, &levels[0]);
    macs += run_sequential(model->neck->to_s8, last, &levels[1]);
    macs += run_sequential(model->neck->to_s16, last, &levels[2]);
    macs += run_sequential(model->neck->to_s32, last, &levels[3]);

    const std::int64_t head_tokens = 16 * t;
    for (int i = 0; i < 4; ++i) {
        auto* lin = model->head->linear_levels[i]->as<torch::nn::Conv2dImpl>();
        macs += levels[i].size(2) * levels[i].size(3) * lin->weight.size(0) * lin->weight.size(1);
    }
    macs += head_tokens * model->head->fuse->weight.size(0) * model->head->fuse->weight.size(1);
    macs += head_tokens * model->head->pred->weight.size(0) * model->head->pred->weight.size(1);
    return 2 * macs;
}

}  // namespace oracle
