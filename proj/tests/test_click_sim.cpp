#include <random>
#include <set>

#include "oracles.hpp"
#include "vitclick/click_sim.hpp"
#include "doctest.h"

using namespace vitclick;

namespace {

BinaryMask square(int h, int w, int r0, int c0, int side) {
    BinaryMask m(h, w);
    for (int r = r0; r < r0 + side; ++r)
        for (int c = c0; c < c0 + side; ++c) m.set(r, c, true);
    return m;
}

}  // namespace

TEST_CASE("matching prediction converges") {
    const auto gt = square(16, 16, 2, 2, 6);
    CHECK_FALSE(next_eval_click(gt, gt).has_value());
    CHECK_THROWS_AS(next_eval_click(gt, BinaryMask(16, 16)), ProtocolError);
    CHECK_THROWS_AS(next_eval_click(BinaryMask(8, 8), gt), std::invalid_argument);
}

TEST_CASE("missed square beats a smaller false positive") {
    const auto gt = square(32, 32, 4, 4, 10);
    const auto pred = square(32, 32, 20, 20, 3);
    const auto click = next_eval_click(pred, gt, 0);
    REQUIRE(click.has_value());
    const auto expect = oracle::next_click(pred, gt);
    CHECK(click->polarity == Polarity::positive);
    CHECK(click->row == expect->row);
    CHECK(click->col == expect->col);
    // An even side has a 2x2 block of deepest pixels; the smallest wins.
    CHECK(click->row == 8);
    CHECK(click->col == 8);
}

TEST_CASE("missed ring is clicked at its half-width") {
    const int n = 64;
    BinaryMask ring(n, n);
    const int r_in = 10;
    const int r_out = 20;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const int d2 = (y - 32) * (y - 32) + (x - 32) * (x - 32);
            ring.set(y, x, d2 >= r_in * r_in && d2 <= r_out * r_out);
        }
    const auto click = next_eval_click(BinaryMask(n, n), ring);
    REQUIRE(click.has_value());
    CHECK(ring(click->row, click->col));
    const auto expect = oracle::next_click(BinaryMask(n, n), ring);
    CHECK(click->row == expect->row);
    CHECK(click->col == expect->col);

    std::vector<char> in(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n * n; ++i) in[i] = ring.data()[i];
    const double depth = std::sqrt(static_cast<double>(oracle::depth2(in, n, n, click->row, click->col)));
    CHECK(depth == doctest::Approx((r_out - r_in) / 2.0).epsilon(0.25));
}

TEST_CASE("clicker agrees with the brute-force oracle") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const int h = 2 + static_cast<int>(rng() % 11);
        const int w = 2 + static_cast<int>(rng() % 11);
        auto gt = oracle::random_blobs(rng, h, w, 1 + static_cast<int>(rng() % 3));
        if (!gt.any()) gt.set(0, 0, true);
        const auto pred = oracle::random_blobs(rng, h, w, static_cast<int>(rng() % 3));
        const auto got = next_eval_click(pred, gt);
        const auto expect = oracle::next_click(pred, gt);
        REQUIRE(got.has_value() == expect.has_value());
        if (!got) continue;
        REQUIRE(got->row == expect->row);
        REQUIRE(got->col == expect->col);
        REQUIRE(got->polarity == expect->polarity);
        if (got->is_positive()) {
            CHECK((gt(got->row, got->col) && !pred(got->row, got->col)));
        } else {
            CHECK((pred(got->row, got->col) && !gt(got->row, got->col)));
        }
    }
}

TEST_CASE("exclusion skips disks around earlier clicks") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = 6 + static_cast<int>(rng() % 10);
        const int w = 6 + static_cast<int>(rng() % 10);
        auto gt = oracle::random_blobs(rng, h, w, 2);
        if (!gt.any()) gt.set(1, 1, true);
        const auto pred = oracle::random_blobs(rng, h, w, 1);
        std::vector<Click> prior{{static_cast<int>(rng() % h), static_cast<int>(rng() % w), Polarity::positive, 0}};
        const auto got = next_eval_click(pred, gt, 1, {prior, 2});
        const auto expect = oracle::next_click(pred, gt, prior, 2);
        REQUIRE(got.has_value() == expect.has_value());
        if (!got) continue;
        CHECK(got->row == expect->row);
        CHECK(got->col == expect->col);
        CHECK(got->ordinal == 1);
    }
}

TEST_CASE("random positives respect the margin") {
    const auto gt = square(40, 40, 10, 10, 20);
    RandomClickConfig cfg;
    cfg.margin = 2;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto sim = sample_random_clicks(gt, 6, seed, cfg);
        CHECK_FALSE(sim.margin_relaxed);
        bool any_positive = false;
        for (std::size_t i = 0; i < sim.clicks.size(); ++i) {
            const auto& c = sim.clicks[i];
            CHECK(c.ordinal == static_cast<int>(i));
            if (c.is_positive()) {
                any_positive = true;
                CHECK(c.row >= 12);
                CHECK(c.row < 28);
                CHECK(c.col >= 12);
                CHECK(c.col < 28);
            } else {
                CHECK_FALSE(gt(c.row, c.col));
            }
        }
        CHECK(any_positive);
    }
}

TEST_CASE("random sampling is deterministic and relaxes tiny objects") {
    const auto gt = square(40, 40, 10, 10, 20);
    const auto a = sample_random_clicks(gt, 6, 42);
    const auto b = sample_random_clicks(gt, 6, 42);
    CHECK(a.clicks == b.clicks);

    const auto tiny = square(20, 20, 5, 5, 2);
    const auto sim = sample_random_clicks(tiny, 3, 1);
    CHECK(sim.margin_relaxed);
    REQUIRE_FALSE(sim.clicks.empty());
    CHECK(sim.clicks[0].is_positive());
    CHECK(tiny(sim.clicks[0].row, sim.clicks[0].col));
}

TEST_CASE("negatives can come from other objects") {
    const auto gt = square(40, 40, 2, 2, 8);
    const auto other = square(40, 40, 25, 25, 10);
    std::set<std::pair<int, int>> in_other;
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        for (const auto& c : sample_random_clicks(gt, 6, seed, {}, other).clicks) {
            if (!c.is_positive() && other(c.row, c.col)) ++hits;
        }
    }
    CHECK(hits > 0);
}

TEST_CASE("iterative simulation against an empty predictor") {
    const auto gt = square(40, 40, 10, 10, 20);
    MaskPredictor empty = [](const std::vector<Click>&, const BinaryMask& prev) { return BinaryMask(prev.size()); };
    const auto sim = simulate_iterative_clicks(gt, {}, empty, 3, 5);
    REQUIRE(sim.clicks.size() == 3);
    std::set<std::pair<int, int>> distinct;
    std::vector<Click> prior;
    for (const auto& c : sim.clicks) {
        CHECK(c.is_positive());
        distinct.emplace(c.row, c.col);
        const auto expect = oracle::next_click(BinaryMask(40, 40), gt, prior, 5);
        CHECK(c.row == expect->row);
        CHECK(c.col == expect->col);
        prior.push_back(c);
    }
    CHECK(distinct.size() == 3);
}

TEST_CASE("iterative simulation with a perfect predictor stops after one click") {
    const auto gt = square(40, 40, 10, 10, 20);
    MaskPredictor perfect = [&](const std::vector<Click>&, const BinaryMask&) { return gt; };
    const auto sim = simulate_training_clicks(gt, {}, ClickStrategy::iterative, 0, 5, {}, perfect);
    CHECK(sim.clicks.size() == 1);
    CHECK_THROWS(simulate_training_clicks(gt, {}, ClickStrategy::iterative, 0, 5));
    CHECK_THROWS(simulate_training_clicks(gt, {}, ClickStrategy::random, 0, 0));
}

TEST_CASE("strategy names round trip") {
    CHECK(click_strategy_from_string(to_string(ClickStrategy::iterative)) == ClickStrategy::iterative);
    CHECK_THROWS(click_strategy_from_string("greedy"));
}
