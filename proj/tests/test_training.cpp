#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "vitclick/training.hpp"
#include "doctest.h"

using namespace vitclick;
namespace fs = std::filesystem;

namespace {

std::vector<int> random_gt(std::mt19937_64& rng, int n) {
    std::vector<int> gt(n);
    for (auto& v : gt) v = static_cast<int>(rng() % 2);
    return gt;
}

std::vector<double> random_logits(std::mt19937_64& rng, int n, double scale) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> x(n);
    for (auto& v : x) v = nd(rng);
    return x;
}

torch::Tensor as_tensor(const std::vector<double>& v, int side) {
    return torch::tensor(v, torch::kFloat64).to(torch::kFloat32).view({1, 1, side, side});
}

torch::Tensor as_tensor(const std::vector<int>& v, int side) {
    std::vector<float> f(v.begin(), v.end());
    return torch::tensor(f).view({1, 1, side, side});
}

TrainingConfig tiny_config(std::uint64_t seed) {
    TrainingConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = 2;
    cfg.lr_initial = 1e-4;
    cfg.zero_prev_probability = 1.0;
    cfg.augment.enabled = false;
    cfg.threads = 1;
    return cfg;
}

TrainSample fixed_sample(const InstanceRecord& rec) {
    TrainSample s{rec.image, rec.gt_mask, rec.other_objects, {}, {}};
    s.clicks = sample_random_clicks(rec.gt_mask, 3, 7).clicks;
    return s;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("vitclick_test_training_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("uniform prediction costs ln 2") {
    auto gt = torch::zeros({2, 1, 8, 8});
    gt.index_put_({0, 0, torch::indexing::Slice(0, 4)}, 1.0);
    auto loss = nfl_loss(torch::zeros({2, 1, 8, 8}), gt);
    CHECK(loss.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("confident correct prediction costs almost nothing") {
    auto gt = torch::zeros({1, 1, 8, 8});
    gt.index_put_({0, 0, 3}, 1.0);
    auto logits = (gt * 2 - 1) * 30.0;
    CHECK(nfl_loss(logits, gt).item<double>() < 1e-6);
    CHECK(nfl_loss(logits, gt).item<double>() >= 0.0);
}

TEST_CASE("gamma zero is binary cross-entropy") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_logits(rng, 64, 2.0);
        const auto y = random_gt(rng, 64);
        const double got = nfl_loss(as_tensor(x, 8), as_tensor(y, 8), 0.0).item<double>();
        CHECK(std::abs(got - oracle::bce(x, y)) <= 1e-6);
    }
}

TEST_CASE("loss matches the scalar oracle and its finite-difference gradient") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = random_logits(rng, 36, 1.5);
        const auto y = random_gt(rng, 36);
        auto t = as_tensor(x, 6).requires_grad_(true);
        auto loss = nfl_loss(t, as_tensor(y, 6));
        CHECK(loss.item<double>() == doctest::Approx(oracle::nfl(x, y, 2.0)).epsilon(1e-5));
        loss.backward();
        auto g = t.grad().view({-1});
        const double h = 1e-5;
        double worst = 0.0;
        for (int i = 0; i < 36; ++i) {
            auto xp = x;
            auto xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fd = (oracle::nfl(xp, y, 2.0) - oracle::nfl(xm, y, 2.0)) / (2 * h);
            const double rel = std::abs(g[i].item<double>() - fd) / std::max(std::abs(fd), 1e-6);
            worst = std::max(worst, rel);
        }
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("identity augmentation leaves the sample alone") {
    const auto rec = synth_benchmark(3, 1)[0];
    TrainSample s{rec.image, rec.gt_mask, rec.other_objects, {{5, 6, Polarity::positive, 0}}, {}};
    const auto out = apply_augment(s, AugmentParams{}, rec.image.size());
    CHECK(out.image == s.image);
    CHECK(out.gt == s.gt);
    CHECK(out.clicks == s.clicks);
}

TEST_CASE("horizontal flip matches the flip oracle") {
    const auto rec = synth_benchmark(4, 1)[0];
    const int w = rec.image.width();
    TrainSample s{rec.image, rec.gt_mask, {}, {{10, 3, Polarity::positive, 0}, {40, 100, Polarity::negative, 1}}, {}};
    AugmentParams p;
    p.flip = true;
    const auto out = apply_augment(s, p, rec.image.size());
    BinaryMask expect(rec.gt_mask.size());
    for (int r = 0; r < expect.height(); ++r)
        for (int c = 0; c < w; ++c) expect.set(r, c, rec.gt_mask(r, w - 1 - c));
    CHECK(iou(out.gt, expect) == 1.0);
    for (int r = 0; r < expect.height(); r += 7)
        for (int c = 0; c < w; c += 5)
            for (int ch = 0; ch < 3; ++ch) REQUIRE(out.image.at(r, c, ch) == rec.image.at(r, w - 1 - c, ch));
    REQUIRE(out.clicks.size() == 2);
    CHECK((out.clicks[0] == Click{10, w - 1 - 3, Polarity::positive, 0}));
    CHECK((out.clicks[1] == Click{40, w - 1 - 100, Polarity::negative, 1}));
}

TEST_CASE("upscaling an interior object grows its area within the square bound") {
    BinaryMask gt(128, 128);
    for (int r = 50; r < 78; ++r)
        for (int c = 44; c < 80; ++c) gt.set(r, c, true);
    TrainSample s{RgbImage(128, 128, 90), gt, {}, {}, {}};
    AugmentParams p;
    p.scale = 1.25;
    const auto out = apply_augment(s, p, {128, 128});
    const double ratio = static_cast<double>(out.gt.count()) / static_cast<double>(gt.count());
    CHECK(ratio >= 1.0);
    CHECK(ratio <= 1.5625);
}

TEST_CASE("clicks leaving the frame are dropped and renumbered") {
    TrainSample s{RgbImage(64, 64), BinaryMask(64, 64, 1), {}, {{0, 0, Polarity::negative, 0}, {32, 32, Polarity::positive, 1}}, {}};
    AugmentParams p;
    p.scale = 2.0;
    const auto out = apply_augment(s, p, {64, 64});
    REQUIRE(out.clicks.size() == 1);
    CHECK(out.clicks[0].ordinal == 0);
    CHECK(out.clicks[0].is_positive());
}

TEST_CASE("fit_sample pads to the model size") {
    TrainSample s{RgbImage(50, 100, 200), BinaryMask(50, 100, 1), {}, {{49, 99, Polarity::positive, 0}}, {}};
    const auto out = fit_sample(s, {128, 128});
    CHECK((out.image.size() == ImageSize{128, 128}));
    CHECK(out.gt(0, 0) == 1);
    CHECK(out.gt(127, 0) == 0);
    CHECK(out.gt.count() == 64 * 128);
    REQUIRE(out.clicks.size() == 1);
    CHECK(out.clicks[0].row == 63);
    CHECK(out.clicks[0].col == 127);
}

TEST_CASE("config parsing rejects unknown and mistyped keys") {
    const auto def = TrainingConfig::from_flat_json(nlohmann::json::object());
    CHECK(def.epochs == 55);
    CHECK(def.lr_initial == doctest::Approx(5e-5));
    CHECK(def.lr_final == doctest::Approx(5e-6));
    CHECK(def.lr_drop_epoch == 50);

    const auto round = TrainingConfig::from_flat_json(def.to_flat_json());
    CHECK(round.to_flat_json() == def.to_flat_json());

    CHECK_THROWS_AS(TrainingConfig::from_flat_json({{"train.epoch", 3}}), ConfigError);
    CHECK_THROWS_AS(TrainingConfig::from_flat_json({{"train.epochs", "many"}}), ConfigError);
    CHECK_THROWS_AS(TrainingConfig::from_flat_json({{"model.window_size", 5}}), ConfigError);
    CHECK_THROWS_AS(TrainingConfig::from_flat_json({{"train.batch_size", 0}}), ConfigError);

    const auto cfg = TrainingConfig::from_flat_json({{"model.preset", "vit_b"}, {"neck.kind", "single_scale"}});
    CHECK(cfg.model.backbone.embed_dim == 768);
    CHECK(cfg.model.neck == NeckKind::single_scale);

    auto trainer_cfg = tiny_config(0);
    Trainer t(trainer_cfg, synth_benchmark(0, 2));
    CHECK(t.learning_rate(49) == doctest::Approx(1e-4));
    CHECK(t.learning_rate(50) == doctest::Approx(5e-6));
}

TEST_CASE("frozen backbone stays bit-identical through a step") {
    auto cfg = tiny_config(1);
    cfg.freeze_backbone = true;
    const auto data = synth_benchmark(1, 2);
    Trainer t(cfg, data);
    std::vector<torch::Tensor> before;
    for (const auto& p : t.model()->backbone->parameters()) before.push_back(p.detach().clone());
    auto head_before = t.model()->head->pred->weight.detach().clone();
    std::mt19937_64 rng(0);
    t.train_step({fixed_sample(data[0]), fixed_sample(data[1])}, rng, "frozen");
    std::size_t i = 0;
    for (const auto& p : t.model()->backbone->parameters()) CHECK(torch::equal(p, before[i++]));
    CHECK_FALSE(torch::equal(t.model()->head->pred->weight, head_before));
}

TEST_CASE("a small step on one sample lowers its loss") {
    int decreased = 0;
    const int trials = 20;
    for (int trial = 0; trial < trials; ++trial) {
        const auto data = synth_benchmark(100 + trial, 1);
        auto cfg = tiny_config(trial);
        cfg.lr_initial = 1e-5;
        cfg.lr_final = 1e-6;
        Trainer t(cfg, data);
        const std::vector<TrainSample> batch{fixed_sample(data[0])};
        std::mt19937_64 rng(trial);
        const double first = t.train_step(batch, rng, "a").loss;
        const double second = t.train_step(batch, rng, "b").loss;
        decreased += second < first;
    }
    MESSAGE("decreased in " << decreased << "/" << trials);
    CHECK(decreased >= 19);
}

TEST_CASE("non-finite loss names the batch") {
    const auto data = synth_benchmark(2, 1);
    Trainer t(tiny_config(2), data);
    {
        torch::NoGradGuard ng;
        t.model()->head->pred->bias.fill_(std::numeric_limits<float>::quiet_NaN());
    }
    std::mt19937_64 rng(0);
    try {
        (void)t.train_step({fixed_sample(data[0])}, rng, "epoch3/batch7");
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(e.batch_id == "epoch3/batch7");
    }
}

TEST_CASE("checkpoint round trip resumes the run") {
    const auto dir = scratch("ckpt");
    auto cfg = tiny_config(3);
    cfg.epochs = 1;
    cfg.output_dir = dir.string();
    const auto data = synth_benchmark(3, 4);
    Trainer a(cfg, data);
    a.fit();
    CHECK(a.epoch() == 1);
    REQUIRE(fs::exists(dir / "checkpoint.pt"));
    REQUIRE(fs::exists(dir / "config.json"));

    Trainer b(cfg, data);
    b.load_checkpoint(dir / "checkpoint.pt");
    CHECK(b.epoch() == 1);
    auto pa = a.model()->named_parameters();
    for (const auto& p : b.model()->named_parameters()) CHECK(torch::equal(p.value(), pa[p.key()]));

    // The trainer checkpoint is also a loadable model.
    auto m = load_model((dir / "checkpoint.pt").string());
    CHECK(m->config().to_json() == cfg.model.to_json());

    std::ofstream(dir / "broken.pt") << "not a checkpoint";
    CHECK_THROWS(b.load_checkpoint(dir / "broken.pt"));
}

TEST_CASE("config file loads from disk") {
    const auto dir = scratch("cfg");
    std::ofstream(dir / "c.json") << R"({"train.epochs": 3, "augment.enabled": false, "data.synth_count": 5})";
    const auto cfg = TrainingConfig::load(dir / "c.json");
    CHECK(cfg.epochs == 3);
    CHECK_FALSE(cfg.augment.enabled);
    CHECK(training_data(cfg).size() == 5);
    CHECK_THROWS(TrainingConfig::load(dir / "missing.json"));
}
