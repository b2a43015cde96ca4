#include "vitclick/mask_ops.hpp"

#include <algorithm>
#include <limits>

namespace vitclick {

ComponentLabels label_components(const BinaryMask& mask) {
    ComponentLabels out;
    out.size = mask.size();
    const int h = mask.height();
    const int w = mask.width();
    out.labels.assign(static_cast<std::size_t>(h) * w, 0);

    std::vector<std::int32_t> stack;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const auto idx = static_cast<std::size_t>(r) * w + c;
            if (!mask(r, c) || out.labels[idx] != 0) continue;
            const auto label = static_cast<std::int32_t>(out.areas.size() + 1);
            std::int64_t area = 0;
            stack.clear();
            stack.push_back(static_cast<std::int32_t>(idx));
            out.labels[idx] = label;
            while (!stack.empty()) {
                const auto p = stack.back();
                stack.pop_back();
                ++area;
                const int pr = p / w;
                const int pc = p % w;
                const int nbr[4][2] = {{pr - 1, pc}, {pr + 1, pc}, {pr, pc - 1}, {pr, pc + 1}};
                for (const auto& n : nbr) {
                    if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
                    const auto q = static_cast<std::size_t>(n[0]) * w + n[1];
                    if (mask(n[0], n[1]) && out.labels[q] == 0) {
                        out.labels[q] = label;
                        stack.push_back(static_cast<std::int32_t>(q));
                    }
                }
            }
            out.areas.push_back(area);
        }
    }
    return out;
}

namespace {

// Felzenszwalb-Huttenlocher lower envelope of parabolas, in place on f.
void distance_1d(std::vector<std::int64_t>& f, std::vector<int>& v, std::vector<double>& z,
                 std::vector<std::int64_t>& d) {
    const int n = static_cast<int>(f.size());
    constexpr auto inf = std::numeric_limits<std::int64_t>::max() / 4;
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] >= inf) continue;
        while (k >= 0) {
            const int p = v[k];
            const double s = static_cast<double>((f[q] + std::int64_t{q} * q) - (f[p] + std::int64_t{p} * p)) /
                             (2.0 * (q - p));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        if (k == 0) {
            z[k] = -std::numeric_limits<double>::infinity();
        } else {
            const int p = v[k - 1];
            z[k] = static_cast<double>((f[q] + std::int64_t{q} * q) - (f[p] + std::int64_t{p} * p)) / (2.0 * (q - p));
        }
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (j < k && z[j + 1] < q) ++j;
        const std::int64_t dq = q - v[j];
        d[q] = dq * dq + f[v[j]];
    }
}

// Column pass then row pass; grid holds 0 on seeds and a large value elsewhere.
void separable_transform(std::vector<std::int64_t>& grid, int h, int w) {
    const int n = std::max(h, w);
    std::vector<std::int64_t> f(n);
    std::vector<std::int64_t> d(n);
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    for (int c = 0; c < w; ++c) {
        f.resize(h);
        d.resize(h);
        for (int r = 0; r < h; ++r) f[r] = grid[static_cast<std::size_t>(r) * w + c];
        distance_1d(f, v, z, d);
        for (int r = 0; r < h; ++r) grid[static_cast<std::size_t>(r) * w + c] = d[r];
    }
    for (int r = 0; r < h; ++r) {
        f.resize(w);
        d.resize(w);
        for (int c = 0; c < w; ++c) f[c] = grid[static_cast<std::size_t>(r) * w + c];
        distance_1d(f, v, z, d);
        for (int c = 0; c < w; ++c) grid[static_cast<std::size_t>(r) * w + c] = d[c];
    }
}

}  // namespace

std::vector<std::int64_t> squared_distance_to_outside(const BinaryMask& mask) {
    // Transform on a one-pixel zero-padded grid so the border acts as outside.
    const int h = mask.height() + 2;
    const int w = mask.width() + 2;
    constexpr auto inf = std::numeric_limits<std::int64_t>::max() / 4;
    std::vector<std::int64_t> grid(static_cast<std::size_t>(h) * w, 0);
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            if (mask(r, c)) grid[static_cast<std::size_t>(r + 1) * w + c + 1] = inf;
        }
    }

    separable_transform(grid, h, w);

    std::vector<std::int64_t> out(static_cast<std::size_t>(mask.height()) * mask.width(), 0);
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            if (mask(r, c)) {
                out[static_cast<std::size_t>(r) * mask.width() + c] = grid[static_cast<std::size_t>(r + 1) * w + c + 1];
            }
        }
    }
    return out;
}

std::vector<std::int64_t> squared_distance_to_nearest(const BinaryMask& targets) {
    const int h = targets.height();
    const int w = targets.width();
    if (!targets.any()) return std::vector<std::int64_t>(static_cast<std::size_t>(h) * w, -1);
    constexpr auto inf = std::numeric_limits<std::int64_t>::max() / 4;
    std::vector<std::int64_t> grid(static_cast<std::size_t>(h) * w, inf);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (targets.data()[i]) grid[i] = 0;
    }
    separable_transform(grid, h, w);
    return grid;
}

BinaryMask mask_and_not(const BinaryMask& a, const BinaryMask& b) {
    if (a.size() != b.size()) throw std::invalid_argument("mask_and_not: size mismatch");
    BinaryMask out(a.size());
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        out.data()[i] = a.data()[i] & (b.data()[i] ^ 1);
    }
    return out;
}

BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
    if (a.size() != b.size()) throw std::invalid_argument("mask_or: size mismatch");
    BinaryMask out(a.size());
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        out.data()[i] = a.data()[i] | b.data()[i];
    }
    return out;
}

}  // namespace vitclick
