#pragma once

#include <cstdint>
#include <vector>

#include "vitclick/types.hpp"

namespace vitclick {

/// 4-connected component labelling. Labels are 1..N in raster order of each
/// component's first pixel; background is 0.
struct ComponentLabels {
    ImageSize size;
    std::vector<std::int32_t> labels;
    std::vector<std::int64_t> areas;  // areas[k] is the area of label k+1

    [[nodiscard]] int count() const { return static_cast<int>(areas.size()); }
    [[nodiscard]] std::int32_t operator()(int row, int col) const {
        return labels[static_cast<std::size_t>(row) * size.width + col];
    }
};

[[nodiscard]] ComponentLabels label_components(const BinaryMask& mask);

/// Exact squared Euclidean distance from every foreground pixel to the nearest
/// pixel outside the mask. Pixels beyond the image border count as outside, so
/// a foreground pixel on the border has distance 1. Background pixels get 0.
[[nodiscard]] std::vector<std::int64_t> squared_distance_to_outside(const BinaryMask& mask);

/// Exact squared Euclidean distance from every pixel to the nearest set pixel
/// of `targets` (0 on the set). With an empty set every entry is -1.
[[nodiscard]] std::vector<std::int64_t> squared_distance_to_nearest(const BinaryMask& targets);

/// Per-pixel logical ops; sizes must match.
[[nodiscard]] BinaryMask mask_and_not(const BinaryMask& a, const BinaryMask& b);
[[nodiscard]] BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b);

}  // namespace vitclick
