#include "vitclick/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vitclick {

namespace F = torch::nn::functional;

bool BackboneConfig::is_global_block(int index) const {
    return std::find(global_block_indices.begin(), global_block_indices.end(), index) != global_block_indices.end();
}

void BackboneConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("backbone config: " + msg); };
    if (patch_size <= 0 || embed_dim <= 0 || depth <= 0 || num_heads <= 0) fail("sizes must be positive");
    if (input_size.height <= 0 || input_size.width <= 0) fail("input size must be positive");
    if (input_size.height % patch_size != 0 || input_size.width % patch_size != 0) {
        std::ostringstream os;
        os << "input " << input_size.height << "x" << input_size.width << " is not divisible by patch size "
           << patch_size;
        fail(os.str());
    }
    if (embed_dim % num_heads != 0) {
        fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " + std::to_string(num_heads));
    }
    if (window_size <= 0) fail("window_size must be positive");
    if (grid_h() % window_size != 0 || grid_w() % window_size != 0) {
        std::ostringstream os;
        os << "token grid " << grid_h() << "x" << grid_w() << " is not divisible by window size " << window_size;
        fail(os.str());
    }
    for (std::size_t i = 0; i < global_block_indices.size(); ++i) {
        const int idx = global_block_indices[i];
        if (idx < 0 || idx >= depth) fail("global block index " + std::to_string(idx) + " out of range");
        if (i > 0 && idx <= global_block_indices[i - 1]) fail("global block indices must be strictly increasing");
    }
    if (pretrain_grid < 1) fail("pretrain_grid must be positive");
    if (pretrain_grid > grid_h() || pretrain_grid > grid_w()) {
        fail("pretrain_grid " + std::to_string(pretrain_grid) + " exceeds the token grid (positional encodings are only upsampled)");
    }
    if (drop_path < 0.0 || drop_path >= 1.0) fail("drop_path must be in [0, 1)");
}

std::vector<int> evenly_spaced_global_blocks(int depth, int count) {
    if (count <= 0) return {};
    if (count > depth) throw ConfigError("more global blocks than blocks");
    std::vector<int> out;
    out.reserve(count);
    for (int k = 1; k <= count; ++k) {
        out.push_back(k * depth / count - 1);
    }
    return out;
}

BackboneConfig BackboneConfig::preset(std::string_view name) {
    BackboneConfig cfg;
    cfg.input_size = {448, 448};
    if (name == "vit_b") {
        cfg.patch_size = 16;
        cfg.embed_dim = 768;
        cfg.depth = 12;
        cfg.num_heads = 12;
        cfg.global_block_indices = evenly_spaced_global_blocks(12, 2);
    } else if (name == "vit_l") {
        cfg.patch_size = 16;
        cfg.embed_dim = 1024;
        cfg.depth = 24;
        cfg.num_heads = 16;
        cfg.global_block_indices = evenly_spaced_global_blocks(24, 6);
    } else if (name == "vit_h") {
        cfg.patch_size = 14;
        cfg.embed_dim = 1280;
        cfg.depth = 32;
        cfg.num_heads = 16;
        cfg.global_block_indices = evenly_spaced_global_blocks(32, 8);
    } else if (name == "vit_xtiny") {
        cfg.patch_size = 16;
        cfg.embed_dim = 160;
        cfg.depth = 8;
        cfg.num_heads = 5;
        cfg.global_block_indices = evenly_spaced_global_blocks(8, 2);
    } else {
        throw ConfigError("unknown backbone preset '" + std::string(name) + "'");
    }
    // Window = the 224-pixel pretraining grid (14 for patch 16, 16 for patch 14).
    cfg.pretrain_grid = 224 / cfg.patch_size;
    cfg.window_size = cfg.pretrain_grid;
    return cfg;
}

torch::Tensor interpolate_pos_encoding(const torch::Tensor& pos, int target_h, int target_w) {
    torch::Tensor grid = pos;
    const bool batched = grid.dim() == 4;
    if (batched) {
        TORCH_CHECK(grid.size(0) == 1, "positional grid batch dimension must be 1");
        grid = grid.squeeze(0);
    }
    TORCH_CHECK(grid.dim() == 3, "positional grid must be [g, g, C]");
    if (grid.size(0) != grid.size(1)) {
        throw ConfigError("positional grid must be square, got " + std::to_string(grid.size(0)) + "x" +
                          std::to_string(grid.size(1)));
    }
    const auto g = grid.size(0);
    if (g < 2) throw ConfigError("positional grid side must be at least 2");
    if (target_h < g || target_w < g) throw ConfigError("positional grid can only be upsampled");
    if (target_h == g && target_w == g) return pos;

    auto chw = grid.permute({2, 0, 1}).unsqueeze(0);
    auto out = F::interpolate(chw, F::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{target_h, target_w})
                                       .mode(torch::kBicubic)
                                       .align_corners(true));
    out = out.squeeze(0).permute({1, 2, 0});
    return batched ? out.unsqueeze(0) : out;
}

std::pair<torch::Tensor, WindowLayout> window_partition(const torch::Tensor& tokens, std::int64_t window) {
    TORCH_CHECK(tokens.dim() == 4, "window_partition expects [B, h, w, C]");
    const auto b = tokens.size(0);
    const auto h = tokens.size(1);
    const auto w = tokens.size(2);
    const auto c = tokens.size(3);
    if (window <= 0 || h % window != 0 || w % window != 0) {
        throw ConfigError("grid " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by window " +
                          std::to_string(window));
    }
    auto x = tokens.view({b, h / window, window, w / window, window, c});
    auto windows = x.permute({0, 1, 3, 2, 4, 5}).contiguous().view({-1, window, window, c});
    return {windows, WindowLayout{b, h, w, window}};
}

torch::Tensor window_unpartition(const torch::Tensor& windows, const WindowLayout& layout) {
    const auto win = layout.window;
    const auto c = windows.size(3);
    auto x = windows.view({layout.batch, layout.grid_h / win, layout.grid_w / win, win, win, c});
    return x.permute({0, 1, 3, 2, 4, 5}).contiguous().view({layout.batch, layout.grid_h, layout.grid_w, c});
}

void trunc_normal_(torch::Tensor& t, double std) {
    torch::NoGradGuard no_grad;
    // Inverse-CDF sampling of N(0,1) restricted to [-2, 2].
    const double lo = 0.5 * (1.0 + std::erf(-2.0 / std::sqrt(2.0)));
    const double hi = 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)));
    t.uniform_(2.0 * lo - 1.0, 2.0 * hi - 1.0);
    t.erfinv_();
    t.mul_(std * std::sqrt(2.0));
    t.clamp_(-2.0 * std, 2.0 * std);
}

void init_weights(torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    for (auto& m : module.modules(/*include_self=*/true)) {
        if (auto* lin = m->as<torch::nn::Linear>()) {
            trunc_normal_(lin->weight, 0.02);
            if (lin->bias.defined()) lin->bias.zero_();
        } else if (auto* conv = m->as<torch::nn::Conv2d>()) {
            trunc_normal_(conv->weight, 0.02);
            if (conv->bias.defined()) conv->bias.zero_();
        } else if (auto* deconv = m->as<torch::nn::ConvTranspose2d>()) {
            trunc_normal_(deconv->weight, 0.02);
            if (deconv->bias.defined()) deconv->bias.zero_();
        } else if (auto* ln = m->as<torch::nn::LayerNorm>()) {
            ln->weight.fill_(1.0);
            ln->bias.zero_();
        }
    }
}

PatchEmbedImpl::PatchEmbedImpl(int in_chans, int embed_dim, int patch_size)
    : in_chans_(in_chans), embed_dim_(embed_dim), patch_size_(patch_size) {
    proj = register_module(
        "proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_chans, embed_dim, patch_size).stride(patch_size)));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& x) {
    TORCH_CHECK(x.dim() == 4 && x.size(1) == in_chans_, "patch embedding expects [B, ", in_chans_, ", H, W]");
    TORCH_CHECK(x.size(2) % patch_size_ == 0 && x.size(3) % patch_size_ == 0, "input ", x.size(2), "x", x.size(3),
                " is not divisible by patch size ", patch_size_);
    return proj->forward(x).permute({0, 2, 3, 1});
}

AttentionImpl::AttentionImpl(int dim, int num_heads, bool qkv_bias)
    : num_heads_(num_heads), scale_(1.0 / std::sqrt(static_cast<double>(dim / num_heads))) {
    qkv = register_module("qkv", torch::nn::Linear(torch::nn::LinearOptions(dim, dim * 3).bias(qkv_bias)));
    proj = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x) {
    const auto b = x.size(0);
    const auto h = x.size(1);
    const auto w = x.size(2);
    const auto c = x.size(3);
    const auto n = h * w;
    const auto head_dim = c / num_heads_;
    // [3, B, heads, N, head_dim]
    auto qkv_t = qkv->forward(x.reshape({b, n, c})).reshape({b, n, 3, num_heads_, head_dim}).permute({2, 0, 3, 1, 4});
    auto q = qkv_t[0];
    auto k = qkv_t[1];
    auto v = qkv_t[2];
    auto attn = torch::matmul(q * scale_, k.transpose(-2, -1)).softmax(-1);
    auto out = torch::matmul(attn, v).permute({0, 2, 1, 3}).reshape({b, h, w, c});
    return proj->forward(out);
}

MlpImpl::MlpImpl(int dim, int hidden) {
    fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) {
    return fc2->forward(torch::gelu(fc1->forward(x)));
}

BlockImpl::BlockImpl(int dim, int num_heads, double mlp_ratio, bool qkv_bias, int window_size, double drop_path)
    : window_size_(window_size), drop_path_(drop_path) {
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
    attn = register_module("attn", Attention(dim, num_heads, qkv_bias));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
    mlp = register_module("mlp", Mlp(dim, static_cast<int>(dim * mlp_ratio)));
}

torch::Tensor BlockImpl::drop_path(const torch::Tensor& x) const {
    if (!is_training() || drop_path_ <= 0.0) return x;
    const double keep = 1.0 - drop_path_;
    std::vector<int64_t> shape(x.dim(), 1);
    shape[0] = x.size(0);
    auto mask = torch::empty(shape, x.options()).bernoulli_(keep);
    return x * mask / keep;
}

torch::Tensor BlockImpl::forward(const torch::Tensor& x) {
    auto y = norm1->forward(x);
    if (window_size_ > 0) {
        auto [windows, layout] = window_partition(y, window_size_);
        y = window_unpartition(attn->forward(windows), layout);
    } else {
        y = attn->forward(y);
    }
    auto out = x + drop_path(y);
    return out + drop_path(mlp->forward(norm2->forward(out)));
}

BackboneImpl::BackboneImpl(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    patch_embed = register_module("patch_embed", PatchEmbed(3, cfg_.embed_dim, cfg_.patch_size));
    pos_embed = register_parameter("pos_embed", torch::zeros({1, cfg_.pretrain_grid, cfg_.pretrain_grid, cfg_.embed_dim}));
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < cfg_.depth; ++i) {
        const int window = cfg_.is_global_block(i) ? 0 : cfg_.window_size;
        const double dpr = cfg_.depth > 1 ? cfg_.drop_path * i / (cfg_.depth - 1) : 0.0;
        blocks->push_back(Block(cfg_.embed_dim, cfg_.num_heads, cfg_.mlp_ratio, cfg_.qkv_bias, window, dpr));
    }
}

torch::Tensor BackboneImpl::embed_image(const torch::Tensor& image) {
    TORCH_CHECK(image.size(2) == cfg_.input_size.height && image.size(3) == cfg_.input_size.width,
                "image size ", image.size(2), "x", image.size(3), " does not match backbone input ",
                cfg_.input_size.height, "x", cfg_.input_size.width);
    return patch_embed->forward(image);
}

torch::Tensor BackboneImpl::positional_encoding() {
    return interpolate_pos_encoding(pos_embed, cfg_.grid_h(), cfg_.grid_w());
}

void BackboneImpl::check_tokens(const torch::Tensor& tokens) const {
    TORCH_CHECK(tokens.dim() == 4 && tokens.size(1) == cfg_.grid_h() && tokens.size(2) == cfg_.grid_w() &&
                    tokens.size(3) == cfg_.embed_dim,
                "tokens must be [B, ", cfg_.grid_h(), ", ", cfg_.grid_w(), ", ", cfg_.embed_dim, "], got ",
                tokens.sizes());
    if (!torch::isfinite(tokens).all().item<bool>()) {
        throw std::domain_error("backbone input contains non-finite values");
    }
}

torch::Tensor BackboneImpl::encode(const torch::Tensor& fused_tokens) {
    check_tokens(fused_tokens);
    auto x = fused_tokens;
    for (const auto& block : *blocks) {
        x = block->as<BlockImpl>()->forward(x);
    }
    return x;
}

std::vector<torch::Tensor> BackboneImpl::encode_with_taps(const torch::Tensor& fused_tokens,
                                                         const std::vector<int>& taps) {
    check_tokens(fused_tokens);
    std::vector<torch::Tensor> out;
    auto x = fused_tokens;
    std::size_t next = 0;
    for (int i = 0; i < cfg_.depth; ++i) {
        x = (*blocks)[i]->as<BlockImpl>()->forward(x);
        if (next < taps.size() && taps[next] == i) {
            out.push_back(x);
            ++next;
        }
    }
    TORCH_CHECK(next == taps.size(), "tap indices must be ascending and within [0, depth)");
    return out;
}

void BackboneImpl::freeze_blocks(int first, int last) {
    for (int i = std::max(first, 0); i < std::min(last, cfg_.depth); ++i) {
        for (auto& p : (*blocks)[i]->parameters()) p.set_requires_grad(false);
    }
}

void BackboneImpl::freeze_all() {
    for (auto& p : parameters()) p.set_requires_grad(false);
}

Backbone build_backbone(const BackboneConfig& cfg) {
    Backbone bb(cfg);
    init_weights(*bb);
    trunc_normal_(bb->pos_embed, 0.02);
    return bb;
}

}  // namespace vitclick
