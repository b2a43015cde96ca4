#include "vitclick/click_sim.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "vitclick/mask_ops.hpp"

namespace vitclick {

namespace {

void append_regions(const BinaryMask& mask, ErrorKind kind, std::vector<ErrorRegion>& out) {
    const auto labels = label_components(mask);
    const auto first = out.size();
    out.resize(first + labels.areas.size());
    for (std::size_t k = 0; k < labels.areas.size(); ++k) {
        out[first + k].kind = kind;
        out[first + k].area = labels.areas[k];
        out[first + k].pixels.reserve(static_cast<std::size_t>(labels.areas[k]));
    }
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        if (labels.labels[i] > 0) out[first + labels.labels[i] - 1].pixels.push_back(static_cast<std::int32_t>(i));
    }
}

BinaryMask exclusion_mask(ImageSize size, const ClickExclusion& exclusion) {
    BinaryMask allowed(size, 1);
    const auto r2 = std::int64_t{exclusion.radius} * exclusion.radius;
    for (const auto& c : exclusion.prior) {
        for (int r = std::max(0, c.row - exclusion.radius); r <= std::min(size.height - 1, c.row + exclusion.radius);
             ++r) {
            for (int q = std::max(0, c.col - exclusion.radius); q <= std::min(size.width - 1, c.col + exclusion.radius);
                 ++q) {
                const std::int64_t dr = r - c.row;
                const std::int64_t dc = q - c.col;
                if (dr * dr + dc * dc <= r2) allowed.set(r, q, false);
            }
        }
    }
    return allowed;
}

int draw(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

std::vector<ErrorRegion> error_regions(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("error_regions: pred and gt sizes differ");
    std::vector<ErrorRegion> regions;
    append_regions(mask_and_not(gt, pred), ErrorKind::false_negative, regions);
    append_regions(mask_and_not(pred, gt), ErrorKind::false_positive, regions);
    std::stable_sort(regions.begin(), regions.end(), [](const ErrorRegion& a, const ErrorRegion& b) {
        if (a.area != b.area) return a.area > b.area;
        return a.pixels.front() < b.pixels.front();
    });
    return regions;
}

bool locate_center(ErrorRegion& region, ImageSize size, const BinaryMask* allowed) {
    BinaryMask own(size);
    for (auto p : region.pixels) own.data()[p] = 1;
    const auto depth = squared_distance_to_outside(own);
    std::int64_t best = -1;
    std::int32_t best_idx = -1;
    for (auto p : region.pixels) {  // ascending, so the first maximum is the lexicographic minimum
        if (allowed != nullptr && !allowed->data()[p]) continue;
        if (depth[p] > best) {
            best = depth[p];
            best_idx = p;
        }
    }
    if (best_idx < 0) return false;
    region.center_row = best_idx / size.width;
    region.center_col = best_idx % size.width;
    return true;
}

std::optional<Click> next_eval_click(const BinaryMask& pred, const BinaryMask& gt, int ordinal,
                                     const ClickExclusion& exclusion) {
    if (pred.size() != gt.size()) throw std::invalid_argument("next_eval_click: pred and gt sizes differ");
    if (!gt.any()) throw ProtocolError("next_eval_click: ground truth has no foreground");

    auto regions = error_regions(pred, gt);
    if (regions.empty()) return std::nullopt;

    auto make_click = [&](const ErrorRegion& r) {
        return Click{r.center_row, r.center_col,
                     r.kind == ErrorKind::false_negative ? Polarity::positive : Polarity::negative, ordinal};
    };

    if (!exclusion.prior.empty() && exclusion.radius >= 0) {
        const auto allowed = exclusion_mask(gt.size(), exclusion);
        for (auto& r : regions) {
            if (locate_center(r, gt.size(), &allowed)) return make_click(r);
        }
    }
    locate_center(regions.front(), gt.size());
    return make_click(regions.front());
}

std::string to_string(ClickStrategy s) { return s == ClickStrategy::random ? "random" : "iterative"; }

ClickStrategy click_strategy_from_string(const std::string& s) {
    if (s == "random") return ClickStrategy::random;
    if (s == "iterative") return ClickStrategy::iterative;
    throw ConfigError("unknown click strategy: " + s);
}

SimulatedClicks sample_random_clicks(const BinaryMask& gt, int budget, std::uint64_t seed,
                                     const RandomClickConfig& cfg, const BinaryMask& other_objects) {
    if (budget < 1) throw std::invalid_argument("sample_random_clicks: budget must be >= 1");
    if (!gt.any()) throw ProtocolError("sample_random_clicks: ground truth has no foreground");
    if (!other_objects.empty() && other_objects.size() != gt.size()) {
        throw std::invalid_argument("sample_random_clicks: other_objects size differs from gt");
    }
    if (cfg.margin < 0 || cfg.max_positive < 1 || cfg.max_negative < 0 || cfg.band_width <= cfg.margin) {
        throw ConfigError("sample_random_clicks: need margin >= 0, max_positive >= 1, max_negative >= 0, "
                          "band_width > margin");
    }

    SimulatedClicks out;
    std::mt19937_64 rng(seed);
    const int w = gt.width();

    const auto depth = squared_distance_to_outside(gt);
    const auto need = std::int64_t{cfg.margin + 1} * (cfg.margin + 1);
    std::vector<std::int32_t> interior;
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (gt.data()[i] && depth[i] >= need) interior.push_back(static_cast<std::int32_t>(i));
    }
    if (interior.empty()) {
        out.margin_relaxed = true;
        for (std::size_t i = 0; i < depth.size(); ++i) {
            if (gt.data()[i]) interior.push_back(static_cast<std::int32_t>(i));
        }
    }

    const auto to_gt = squared_distance_to_nearest(gt);
    const auto near2 = std::int64_t{cfg.margin} * cfg.margin;
    const auto band2 = std::int64_t{cfg.band_width} * cfg.band_width;
    std::vector<std::int32_t> band;
    std::vector<std::int32_t> far;
    std::vector<std::int32_t> other;
    for (std::size_t i = 0; i < to_gt.size(); ++i) {
        if (gt.data()[i] || to_gt[i] <= near2) continue;
        const auto idx = static_cast<std::int32_t>(i);
        if (!other_objects.empty() && other_objects.data()[i]) {
            other.push_back(idx);
        } else if (to_gt[i] <= band2) {
            band.push_back(idx);
        } else {
            far.push_back(idx);
        }
    }

    const int n_pos = draw(rng, 1, std::min({cfg.max_positive, budget, static_cast<int>(interior.size())}));
    const int neg_cap = std::min(cfg.max_negative, budget - n_pos);
    const int n_neg = neg_cap > 0 ? draw(rng, 0, neg_cap) : 0;

    // Partial Fisher-Yates: distinct positives.
    for (int k = 0; k < n_pos; ++k) {
        const int j = draw(rng, k, static_cast<int>(interior.size()) - 1);
        std::swap(interior[k], interior[j]);
        out.clicks.push_back({interior[k] / w, interior[k] % w, Polarity::positive, k});
    }

    std::vector<std::vector<std::int32_t>*> pools;
    for (auto* pool : {&band, &other, &far}) {
        if (!pool->empty()) pools.push_back(pool);
    }
    std::vector<std::size_t> used(pools.size(), 0);
    for (int k = 0; k < n_neg && !pools.empty(); ++k) {
        const auto s = static_cast<std::size_t>(draw(rng, 0, static_cast<int>(pools.size()) - 1));
        auto& pool = *pools[s];
        const auto j = static_cast<std::size_t>(draw(rng, static_cast<int>(used[s]), static_cast<int>(pool.size()) - 1));
        std::swap(pool[used[s]], pool[j]);
        const auto idx = pool[used[s]++];
        out.clicks.push_back({idx / w, idx % w, Polarity::negative, static_cast<int>(out.clicks.size())});
        if (used[s] == pool.size()) {
            pools.erase(pools.begin() + static_cast<std::ptrdiff_t>(s));
            used.erase(used.begin() + static_cast<std::ptrdiff_t>(s));
        }
    }
    return out;
}

SimulatedClicks simulate_iterative_clicks(const BinaryMask& gt, const BinaryMask& initial,
                                          const MaskPredictor& predictor, int budget, int exclusion_radius,
                                          std::vector<Click> start) {
    if (budget < 1) throw std::invalid_argument("simulate_iterative_clicks: budget must be >= 1");
    if (!predictor) throw std::invalid_argument("simulate_iterative_clicks: predictor required");
    SimulatedClicks out;
    out.clicks = std::move(start);
    BinaryMask pred = initial.empty() ? BinaryMask(gt.size()) : initial;
    for (int k = 0; k < budget; ++k) {
        const auto click = next_eval_click(pred, gt, static_cast<int>(out.clicks.size()),
                                           ClickExclusion{out.clicks, exclusion_radius});
        if (!click) break;
        out.clicks.push_back(*click);
        pred = predictor(out.clicks, pred);
        if (pred.size() != gt.size()) throw std::invalid_argument("simulate_iterative_clicks: predictor size mismatch");
    }
    return out;
}

SimulatedClicks simulate_training_clicks(const BinaryMask& gt, const BinaryMask& current_pred,
                                         ClickStrategy strategy, std::uint64_t seed, int budget,
                                         const RandomClickConfig& cfg, const MaskPredictor& predictor,
                                         int exclusion_radius) {
    if (strategy == ClickStrategy::random) return sample_random_clicks(gt, budget, seed, cfg);
    return simulate_iterative_clicks(gt, current_pred, predictor, budget, exclusion_radius);
}

}  // namespace vitclick
