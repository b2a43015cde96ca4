#include <limits>
#include <queue>
#include <random>

#include "vitclick/mask_ops.hpp"
#include "doctest.h"

using namespace vitclick;

namespace {

BinaryMask random_mask(std::mt19937& rng, int h, int w, double density) {
    std::bernoulli_distribution on(density);
    BinaryMask m(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m.set(r, c, on(rng));
    return m;
}

// BFS flood fill in raster order.
std::vector<int> flood_labels(const BinaryMask& m, std::vector<std::int64_t>& areas) {
    const int h = m.height();
    const int w = m.width();
    std::vector<int> lab(static_cast<std::size_t>(h) * w, 0);
    int next = 0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!m(r, c) || lab[r * w + c]) continue;
            ++next;
            std::int64_t area = 0;
            std::queue<std::pair<int, int>> q;
            q.emplace(r, c);
            lab[r * w + c] = next;
            while (!q.empty()) {
                auto [y, x] = q.front();
                q.pop();
                ++area;
                const int dy[] = {-1, 1, 0, 0};
                const int dx[] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = y + dy[k];
                    const int nx = x + dx[k];
                    if (ny < 0 || nx < 0 || ny >= h || nx >= w || !m(ny, nx) || lab[ny * w + nx]) continue;
                    lab[ny * w + nx] = next;
                    q.emplace(ny, nx);
                }
            }
            areas.push_back(area);
        }
    }
    return lab;
}

}  // namespace

TEST_CASE("labels agree with flood fill") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 60; ++trial) {
        const int h = 1 + static_cast<int>(rng() % 40);
        const int w = 1 + static_cast<int>(rng() % 40);
        const auto m = random_mask(rng, h, w, 0.3 + 0.4 * (trial % 3) / 2.0);
        std::vector<std::int64_t> areas;
        const auto expect = flood_labels(m, areas);
        const auto got = label_components(m);
        REQUIRE(got.count() == static_cast<int>(areas.size()));
        CHECK(got.areas == areas);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) REQUIRE(got(r, c) == expect[r * w + c]);
    }
}

TEST_CASE("diagonal neighbours are separate components") {
    BinaryMask m(3, 3);
    m.set(0, 0, true);
    m.set(1, 1, true);
    m.set(2, 2, true);
    CHECK(label_components(m).count() == 3);
}

TEST_CASE("distance to outside matches brute force") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const int h = 1 + static_cast<int>(rng() % 24);
        const int w = 1 + static_cast<int>(rng() % 24);
        const auto m = random_mask(rng, h, w, 0.75);
        const auto d = squared_distance_to_outside(m);
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                std::int64_t best = 0;
                if (m(r, c)) {
                    best = std::numeric_limits<std::int64_t>::max();
                    // Outside pixels include a one-pixel frame around the image.
                    for (int y = -1; y <= h; ++y) {
                        for (int x = -1; x <= w; ++x) {
                            const bool inside = y >= 0 && x >= 0 && y < h && x < w && m(y, x);
                            if (inside) continue;
                            best = std::min<std::int64_t>(best, std::int64_t{y - r} * (y - r) + std::int64_t{x - c} * (x - c));
                        }
                    }
                }
                REQUIRE(d[r * w + c] == best);
            }
        }
    }
}

TEST_CASE("distance to nearest matches brute force") {
    std::mt19937 rng(13);
    for (int trial = 0; trial < 40; ++trial) {
        const int h = 1 + static_cast<int>(rng() % 20);
        const int w = 1 + static_cast<int>(rng() % 20);
        const auto m = random_mask(rng, h, w, 0.1);
        const auto d = squared_distance_to_nearest(m);
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                std::int64_t best = -1;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (m(y, x)) {
                            const std::int64_t v = std::int64_t{y - r} * (y - r) + std::int64_t{x - c} * (x - c);
                            if (best < 0 || v < best) best = v;
                        }
                REQUIRE(d[r * w + c] == best);
            }
        }
    }
}

TEST_CASE("logical ops reject size mismatch") {
    CHECK_THROWS(mask_or(BinaryMask(2, 2), BinaryMask(2, 3)));
    BinaryMask a(1, 3);
    BinaryMask b(1, 3);
    a.set(0, 0, true);
    a.set(0, 1, true);
    b.set(0, 1, true);
    b.set(0, 2, true);
    CHECK(mask_and_not(a, b).count() == 1);
    CHECK(mask_or(a, b).count() == 3);
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
    CHECK(iou(BinaryMask(2, 2), BinaryMask(2, 2)) == 1.0);
}
