#include "vitclick/model.hpp"
#include "doctest.h"

using namespace vitclick;

namespace {

void check_levels(const FeaturePyramid& fp, int batch, int c1, int grid, bool single_scale) {
    const int sides[4] = {grid * 4, grid * 2, grid, grid / 2};
    for (int i = 0; i < 4; ++i) {
        const int side = single_scale ? grid : sides[i];
        CHECK((fp.levels[i].sizes() == torch::IntArrayRef({batch, c1 << i, side, side})));
        CHECK(torch::isfinite(fp.levels[i]).all().item<bool>());
    }
}

}  // namespace

TEST_CASE("simple pyramid from a ViT-B sized map") {
    torch::manual_seed(0);
    SimpleFeaturePyramid neck(768, 128, NeckKind::simple, 16, ImageSize{448, 448});
    init_weights(*neck);
    torch::NoGradGuard ng;
    auto fp = neck->forward(torch::randn({1, 28, 28, 768}));
    check_levels(fp, 1, 128, 28, false);
    CHECK((fp.strides == std::array<double, 4>{4, 8, 16, 32}));
    CHECK((fp.head_size == ImageSize{112, 112}));
}

TEST_CASE("single-scale variant keeps the patch stride") {
    SimpleFeaturePyramid neck(64, 16, NeckKind::single_scale, 8, ImageSize{64, 64});
    init_weights(*neck);
    auto fp = neck->forward(torch::randn({2, 8, 8, 64}));
    check_levels(fp, 2, 16, 8, true);
    CHECK((fp.strides == std::array<double, 4>{8, 8, 8, 8}));
}

TEST_CASE("parallel variant needs taps") {
    CHECK((parallel_tap_blocks(12) == std::vector<int>{2, 5, 8, 11}));
    CHECK((parallel_tap_blocks(8) == std::vector<int>{1, 3, 5, 7}));
    CHECK_THROWS_AS(parallel_tap_blocks(3), ConfigError);
    SimpleFeaturePyramid neck(64, 16, NeckKind::parallel, 8, ImageSize{64, 64});
    init_weights(*neck);
    CHECK_THROWS_AS(neck->forward(torch::randn({1, 8, 8, 64})), ConfigError);
    std::vector<torch::Tensor> taps(4, torch::randn({1, 8, 8, 64}));
    check_levels(neck->forward_taps(taps), 1, 16, 8, false);
}

TEST_CASE("head on a zero pyramid predicts one half everywhere") {
    MlpHead head(std::array<int, 4>{16, 32, 64, 128}, 32);
    init_weights(*head);
    FeaturePyramid fp;
    fp.levels = {torch::zeros({1, 16, 32, 32}), torch::zeros({1, 32, 16, 16}), torch::zeros({1, 64, 8, 8}),
                 torch::zeros({1, 128, 4, 4})};
    fp.input_size = {128, 128};
    fp.head_size = {32, 32};
    auto out = head->forward(fp);
    CHECK((out.logits.sizes() == torch::IntArrayRef({1, 1, 32, 32})));
    CHECK((out.fused.sizes() == torch::IntArrayRef({1, 128, 32, 32})));
    CHECK((out.probs.sizes() == torch::IntArrayRef({1, 1, 128, 128})));
    CHECK((out.probs - 0.5).abs().max().item<double>() <= 1e-6);

    // A ties-to-background threshold turns the uniform map into an empty mask.
    CHECK(binarize(to_probability_map(out.probs)).count() == 0);
}

TEST_CASE("head rejects levels that do not tile the input") {
    MlpHead head(std::array<int, 4>{16, 32, 64, 128}, 32);
    FeaturePyramid fp;
    fp.levels = {torch::zeros({1, 16, 32, 32}), torch::zeros({1, 32, 16, 16}), torch::zeros({1, 64, 8, 8}),
                 torch::zeros({1, 128, 5, 5})};
    fp.input_size = {128, 128};
    fp.head_size = {32, 32};
    CHECK_THROWS_AS(head->forward(fp), std::invalid_argument);
}

TEST_CASE("binarize is strict") {
    ProbabilityMap p({1, 4}, {0.0F, 0.5F, 0.500001F, 1.0F});
    const auto m = binarize(p);
    CHECK(m(0, 0) == 0);
    CHECK(m(0, 1) == 0);
    CHECK(m(0, 2) == 1);
    CHECK(m(0, 3) == 1);
    CHECK(binarize(p, 0.9).count() == 1);
}

TEST_CASE("model forward shapes") {
    torch::manual_seed(1);
    for (auto kind : {NeckKind::simple, NeckKind::single_scale, NeckKind::parallel, NeckKind::partial}) {
        auto cfg = ModelConfig::preset("xtiny_desk");
        cfg.neck = kind;
        auto model = build_model(cfg, 3);
        torch::NoGradGuard ng;
        auto out = model->forward(torch::randn({2, 3, 128, 128}), torch::zeros({2, 3, 128, 128}));
        CHECK((out.logits.sizes() == torch::IntArrayRef({2, 1, 32, 32})));
        CHECK((out.probs.sizes() == torch::IntArrayRef({2, 1, 128, 128})));
        CHECK(out.probs.min().item<double>() >= 0.0);
        CHECK(out.probs.max().item<double>() <= 1.0);
    }
}

TEST_CASE("head is a small share of ViT-B") {
    const auto model = build_model(ModelConfig::preset("vit_b"));
    const auto b = model->parameter_breakdown();
    const double share = static_cast<double>(b.head) / static_cast<double>(b.total());
    MESSAGE("head share " << share);
    CHECK(share <= 0.013);
}

TEST_CASE("partial neck freezes the upper half of the encoder") {
    auto cfg = ModelConfig::preset("xtiny_desk");
    cfg.neck = NeckKind::partial;
    auto model = build_model(cfg);
    model->apply_trainability(false);
    for (const auto& p : model->backbone->blocks[2]->parameters()) CHECK(p.requires_grad());
    for (const auto& p : model->backbone->blocks[5]->parameters()) CHECK_FALSE(p.requires_grad());
    model->apply_trainability(true);
    for (const auto& p : model->backbone->parameters()) CHECK_FALSE(p.requires_grad());
    for (const auto& p : model->guidance_embed->parameters()) CHECK(p.requires_grad());
}
