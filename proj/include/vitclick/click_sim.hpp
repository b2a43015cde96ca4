#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vitclick/types.hpp"

namespace vitclick {

enum class ErrorKind : std::uint8_t { false_negative, false_positive };

/// One 4-connected component of FN = gt & ~pred or FP = pred & ~gt.
struct ErrorRegion {
    std::vector<std::int32_t> pixels;  // row-major indices, ascending
    ErrorKind kind = ErrorKind::false_negative;
    std::int64_t area = 0;
    int center_row = 0;
    int center_col = 0;
};

/// All error components, largest first. Equal areas keep raster order of the
/// first pixel. Centers are left unset.
[[nodiscard]] std::vector<ErrorRegion> error_regions(const BinaryMask& pred, const BinaryMask& gt);

/// Deepest pixel of a region: maximal Euclidean distance to the nearest pixel
/// outside the region (image border counts as outside). Ties go to the
/// smallest (row, col). Pixels with a zero entry in `allowed` are skipped;
/// returns false when nothing is allowed.
bool locate_center(ErrorRegion& region, ImageSize size, const BinaryMask* allowed = nullptr);

/// Clicks already placed, and the radius around each of them that may not
/// host another click.
struct ClickExclusion {
    std::vector<Click> prior;
    int radius = 0;
};

/// Automatic clicker: a click at the center of the largest error region,
/// positive on FN and negative on FP, or nullopt once pred matches gt.
/// With an exclusion, regions whose pixels are all excluded are passed over;
/// if every region is, the exclusion is ignored.
/// Throws ProtocolError for an empty gt, std::invalid_argument on size mismatch.
[[nodiscard]] std::optional<Click> next_eval_click(const BinaryMask& pred, const BinaryMask& gt, int ordinal = 0,
                                                   const ClickExclusion& exclusion = {});

enum class ClickStrategy : std::uint8_t { random, iterative };

[[nodiscard]] std::string to_string(ClickStrategy s);
[[nodiscard]] ClickStrategy click_strategy_from_string(const std::string& s);

/// Random strategy. Positives come from gt pixels at least `margin` pixels
/// away from the boundary (distance to outside >= margin + 1). Each negative
/// first picks one of the non-empty samplers uniformly:
///   band   background within (margin, band_width] of the object,
///   other  pixels of other objects in the image,
///   far    background farther than band_width.
struct RandomClickConfig {
    int margin = 2;
    int max_positive = 3;
    int max_negative = 3;
    int band_width = 40;
};

struct SimulatedClicks {
    std::vector<Click> clicks;
    bool margin_relaxed = false;  // gt had no pixel deep enough, margin set to 0
};

/// Returns the binarized prediction for the given clicks and previous mask.
using MaskPredictor = std::function<BinaryMask(const std::vector<Click>&, const BinaryMask&)>;

/// Up to `budget` clicks: 1..max_positive positives, then 0..max_negative
/// negatives. `other_objects` may be empty.
[[nodiscard]] SimulatedClicks sample_random_clicks(const BinaryMask& gt, int budget, std::uint64_t seed,
                                                   const RandomClickConfig& cfg = {},
                                                   const BinaryMask& other_objects = {});

/// Repeats next_eval_click against the evolving prediction, excluding the
/// disks of earlier clicks. Starts from `initial` (empty means all zero) and
/// stops early once converged. `start` seeds the click list (ordinals follow).
[[nodiscard]] SimulatedClicks simulate_iterative_clicks(const BinaryMask& gt, const BinaryMask& initial,
                                                        const MaskPredictor& predictor, int budget,
                                                        int exclusion_radius, std::vector<Click> start = {});

/// Dispatches to one of the two strategies. The iterative strategy requires
/// a predictor.
[[nodiscard]] SimulatedClicks simulate_training_clicks(const BinaryMask& gt, const BinaryMask& current_pred,
                                                       ClickStrategy strategy, std::uint64_t seed, int budget,
                                                       const RandomClickConfig& cfg = {},
                                                       const MaskPredictor& predictor = {},
                                                       int exclusion_radius = 5);

}  // namespace vitclick
