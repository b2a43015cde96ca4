#include <filesystem>

#include "vitclick/backbone.hpp"
#include "vitclick/weights.hpp"
#include "doctest.h"

using namespace vitclick;
namespace fs = std::filesystem;

namespace {

BackboneConfig small_config() {
    BackboneConfig c;
    c.input_size = {64, 64};
    c.patch_size = 8;
    c.embed_dim = 32;
    c.depth = 4;
    c.num_heads = 4;
    c.global_block_indices = {1, 3};
    c.window_size = 4;
    c.pretrain_grid = 8;
    return c;
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("vitclick_test_backbone_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("presets carry the published architecture constants") {
    const auto b = BackboneConfig::preset("vit_b");
    CHECK(b.patch_size == 16);
    CHECK(b.depth == 12);
    CHECK(b.embed_dim == 768);
    const auto l = BackboneConfig::preset("vit_l");
    CHECK(l.patch_size == 16);
    CHECK(l.depth == 24);
    CHECK(l.embed_dim == 1024);
    const auto h = BackboneConfig::preset("vit_h");
    CHECK(h.patch_size == 14);
    CHECK(h.depth == 32);
    CHECK(h.embed_dim == 1280);
    const auto x = BackboneConfig::preset("vit_xtiny");
    CHECK(x.patch_size == 16);
    CHECK(x.depth == 8);
    CHECK(x.embed_dim == 160);
    CHECK(x.num_heads == 5);
    for (const auto* name : {"vit_b", "vit_l", "vit_h", "vit_xtiny"}) {
        CHECK_NOTHROW(BackboneConfig::preset(name).validate());
    }
    CHECK_THROWS_AS(BackboneConfig::preset("vit_s"), ConfigError);
}

TEST_CASE("config invariants are enforced") {
    auto c = small_config();
    c.input_size = {60, 64};
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = small_config();
    c.window_size = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = small_config();
    c.global_block_indices = {3, 1};
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = small_config();
    c.global_block_indices = {4};
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = BackboneConfig::preset("vit_b");
    c.input_size = {440, 440};
    CHECK_THROWS_AS(build_backbone(c), ConfigError);
}

TEST_CASE("evenly spaced global blocks end at the last block") {
    CHECK((evenly_spaced_global_blocks(12, 2) == std::vector<int>{5, 11}));
    CHECK((evenly_spaced_global_blocks(24, 4) == std::vector<int>{5, 11, 17, 23}));
    CHECK((evenly_spaced_global_blocks(32, 4) == std::vector<int>{7, 15, 23, 31}));
}

TEST_CASE("window partition round trip") {
    torch::manual_seed(0);
    auto x = torch::randn({2, 28, 28, 8});
    auto [w, layout] = window_partition(x, 14);
    CHECK(layout.windows_per_image() == 4);
    CHECK((w.sizes() == torch::IntArrayRef({8, 14, 14, 8})));
    // First window of the second image is its top-left quadrant.
    CHECK(torch::equal(w[4], x[1].slice(0, 0, 14).slice(1, 0, 14)));
    CHECK(torch::equal(w[1], x[0].slice(0, 0, 14).slice(1, 14, 28)));
    CHECK(torch::equal(window_unpartition(w, layout), x));
}

TEST_CASE("a window covering the grid equals global attention") {
    torch::manual_seed(1);
    Block global(32, 4, 4.0, true, 0, 0.0);
    Block windowed(32, 4, 4.0, true, 8, 0.0);
    init_weights(*global);
    auto src = global->named_parameters();
    auto dst = windowed->named_parameters();
    {
        torch::NoGradGuard ng;
        for (auto& p : dst) p.value().copy_(src[p.key()]);
    }
    auto x = torch::randn({2, 8, 8, 32});
    CHECK(max_abs_diff(global->forward(x), windowed->forward(x)) <= 1e-5);
}

TEST_CASE("windowed blocks are equivariant to window permutation") {
    torch::manual_seed(2);
    Block block(32, 4, 4.0, true, 4, 0.0);
    init_weights(*block);
    block->eval();
    auto x = torch::randn({1, 8, 8, 32});
    auto [w, layout] = window_partition(x, 4);
    auto perm = torch::tensor({3, 0, 2, 1});
    auto xp = window_unpartition(w.index_select(0, perm), layout);
    auto [wy, ly] = window_partition(block->forward(x), 4);
    auto [wyp, lyp] = window_partition(block->forward(xp), 4);
    CHECK(max_abs_diff(wyp, wy.index_select(0, perm)) <= 1e-5);
}

TEST_CASE("positional interpolation") {
    torch::manual_seed(3);
    auto pos = torch::randn({1, 14, 14, 6});
    CHECK(torch::equal(interpolate_pos_encoding(pos, 14, 14), pos));

    auto constant = torch::full({1, 14, 14, 3}, 0.25);
    CHECK((max_abs_diff(interpolate_pos_encoding(constant, 28, 28), torch::full({1, 28, 28, 3}, 0.25)) <= 1e-6));

    auto ramp = torch::arange(14, torch::kFloat32).view({1, 14, 1, 1}).expand({1, 14, 14, 2}).contiguous();
    auto up = interpolate_pos_encoding(ramp, 28, 28);
    CHECK((up.sizes() == torch::IntArrayRef({1, 28, 28, 2})));
    CHECK(up.min().item<double>() >= -1e-5);
    CHECK(up.max().item<double>() <= 13.0 + 1e-5);
    // align_corners keeps the end points.
    CHECK(up[0][0][0][0].item<double>() == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(up[0][27][5][1].item<double>() == doctest::Approx(13.0).epsilon(1e-6));
}

TEST_CASE("encoder output shape and finiteness for every preset grid") {
    torch::manual_seed(4);
    auto c = small_config();
    auto bb = build_backbone(c);
    auto img = torch::randn({2, 3, 64, 64});
    auto tokens = bb->embed_image(img) + bb->positional_encoding();
    auto out = bb->encode(tokens);
    CHECK((out.sizes() == torch::IntArrayRef({2, 8, 8, 32})));
    CHECK(torch::isfinite(out).all().item<bool>());
    CHECK_THROWS(bb->encode(torch::zeros({1, 7, 8, 32})));
}

TEST_CASE("construction is deterministic under a seed") {
    torch::manual_seed(5);
    auto a = build_backbone(small_config());
    torch::manual_seed(5);
    auto b = build_backbone(small_config());
    auto pa = a->named_parameters();
    for (const auto& p : b->named_parameters()) CHECK(torch::equal(p.value(), pa[p.key()]));
}

TEST_CASE("MAE bundle loads through the name map") {
    torch::manual_seed(6);
    auto c = small_config();
    auto src = build_backbone(c);
    WeightBundle bundle;
    for (const auto& p : src->named_parameters()) {
        if (p.key() == "pos_embed") {
            // Published layout: [1, 1 + g*g, C] with a leading cls entry.
            auto flat = p.value().detach().reshape({1, 64, 32});
            bundle.tensors["pos_embed"] = torch::cat({torch::randn({1, 1, 32}), flat}, 1);
        } else {
            bundle.tensors[p.key()] = p.value().detach().clone();
        }
    }
    bundle.tensors["cls_token"] = torch::randn({1, 1, 32});
    bundle.tensors["mask_token"] = torch::randn({1, 1, 32});
    bundle.tensors["decoder_embed.weight"] = torch::randn({16, 32});
    bundle.tensors["norm.weight"] = torch::ones({32});
    const auto dir = scratch("ok");
    bundle.write(dir);

    torch::manual_seed(99);
    auto dst = build_backbone(c);
    const auto report = load_pretrained(dst, WeightBundle::read(dir));
    CHECK(report.unmapped.empty());
    CHECK(report.dropped.size() == 4);
    CHECK_FALSE(report.pos_resampled);
    auto pa = src->named_parameters();
    for (const auto& p : dst->named_parameters()) CHECK(torch::equal(p.value(), pa[p.key()]));

    auto built = build_backbone(c, dir);
    auto img = torch::randn({1, 3, 64, 64});
    torch::NoGradGuard ng;
    CHECK(max_abs_diff(src->encode(src->embed_image(img) + src->positional_encoding()),
                       built->encode(built->embed_image(img) + built->positional_encoding())) <= 1e-6);
}

TEST_CASE("bundle positional grid of another size is resampled") {
    auto c = small_config();
    c.pretrain_grid = 8;
    auto src = build_backbone(c);
    WeightBundle bundle;
    for (const auto& p : src->named_parameters()) bundle.tensors[p.key()] = p.value().detach().clone();
    bundle.tensors["pos_embed"] = torch::full({1, 1 + 16, 32}, 0.5);
    auto dst = build_backbone(c);
    const auto report = load_pretrained(dst, bundle);
    CHECK(report.pos_resampled);
    CHECK((max_abs_diff(dst->pos_embed, torch::full({1, 8, 8, 32}, 0.5)) <= 1e-6));
}

TEST_CASE("shape mismatch is rejected by parameter name") {
    auto c = small_config();
    auto src = build_backbone(c);
    WeightBundle bundle;
    for (const auto& p : src->named_parameters()) bundle.tensors[p.key()] = p.value().detach().clone();
    bundle.tensors["blocks.2.mlp.fc1.weight"] = torch::zeros({100, 32});
    auto dst = build_backbone(c);
    try {
        load_pretrained(dst, bundle);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("blocks.2.mlp.fc1.weight") != std::string::npos);
    }

    bundle.tensors.erase("blocks.2.mlp.fc1.weight");
    try {
        load_pretrained(dst, bundle);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("blocks.2.mlp.fc1.weight") != std::string::npos);
    }
}

TEST_CASE("truncated bundle file is reported") {
    const auto dir = scratch("bad");
    WeightBundle bundle;
    bundle.tensors["x"] = torch::zeros({4});
    bundle.write(dir);
    fs::resize_file(dir / "x.bin", 8);
    CHECK_THROWS_WITH(WeightBundle::read(dir), doctest::Contains("'x'"));
}
