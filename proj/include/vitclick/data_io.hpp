#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vitclick/click_fusion.hpp"
#include "vitclick/mask_ops.hpp"
#include "vitclick/types.hpp"

namespace vitclick {

/// One object to segment. `other_objects` is the union of the remaining
/// instances of the same image (empty when unknown).
struct InstanceRecord {
    std::string instance_id;
    std::string source;
    RgbImage image;
    BinaryMask gt_mask;
    BinaryMask other_objects;
};

enum class DatasetFormat : std::uint8_t { grabcut, sbd_like, coco_like, generic_pairs };

[[nodiscard]] std::string to_string(DatasetFormat f);
[[nodiscard]] DatasetFormat dataset_format_from_string(const std::string& s);

/// Guesses the layout from the directory contents; throws ConfigError when
/// nothing matches.
[[nodiscard]] DatasetFormat detect_format(const std::filesystem::path& root);

struct LoadedDataset {
    std::vector<InstanceRecord> records;  // sorted by instance_id
    std::vector<std::string> warnings;    // one line per skipped image or instance
};

/// Layouts (image extensions .png/.jpg/.jpeg/.bmp):
///   grabcut        data_GT/<stem>.<ext>, boundary_GT/<stem>.<png|bmp>; value 255 is
///                  foreground, anything else (including the 128 band) background.
///   sbd_like       img/<id>.<ext>, inst/<id>.png; label k > 0 is instance k, 255 ignored.
///   coco_like      annotations.json (COCO style), images under images/; polygon or
///                  uncompressed RLE segmentations; crowd annotations skipped.
///   generic_pairs  images/<id>.png, masks/<id>_<k>.png; nonzero is foreground.
/// Missing masks, size mismatches and empty masks are skipped with a warning.
[[nodiscard]] LoadedDataset load_dataset(const std::filesystem::path& root, DatasetFormat format);

/// Writes records as a generic_pairs tree (one image per record, mask index 0)
/// plus manifest.json with ids and sources.
void export_generic_pairs(const std::vector<InstanceRecord>& records, const std::filesystem::path& root);

/// Decodes any 8-bit image file to RGB. Throws std::runtime_error on failure.
[[nodiscard]] RgbImage read_rgb(const std::filesystem::path& path);
[[nodiscard]] RgbImage decode_rgb(const std::vector<std::uint8_t>& bytes);
void write_rgb(const std::filesystem::path& path, const RgbImage& image);
[[nodiscard]] std::vector<std::uint8_t> encode_png(const RgbImage& image);

/// Reads a mask: pixels equal to `foreground_value` are set, or any nonzero
/// pixel when foreground_value < 0.
[[nodiscard]] BinaryMask read_mask(const std::filesystem::path& path, int foreground_value = -1);
/// 1-bit PNG.
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);
[[nodiscard]] std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask);
[[nodiscard]] BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes);
/// 16-bit grayscale PNG, value = round(p * 65535).
void write_probability(const std::filesystem::path& path, const ProbabilityMap& map);
[[nodiscard]] ProbabilityMap read_probability(const std::filesystem::path& path);
/// Debug view: red = positive disks, green = negative disks, blue = prev mask.
void write_guidance(const std::filesystem::path& path, const GuidanceMap& guidance);

/// Nearest-neighbour / area resampling helpers shared by training and tools.
[[nodiscard]] RgbImage resize_rgb(const RgbImage& image, ImageSize size);
[[nodiscard]] BinaryMask resize_mask(const BinaryMask& mask, ImageSize size);

enum class ShapeKind : std::uint8_t { square, ellipse, ring, bar, occluded };

[[nodiscard]] std::string to_string(ShapeKind k);

struct SynthConfig {
    int image_size = 128;
    /// Squares and ellipses only.
    bool convex_only = false;
    int max_distractors = 2;
};

/// Procedural benchmark: one target object per image on a textured background,
/// with distractors. Targets cycle through squares, ellipses, rings, thin bars
/// and occluded pairs (the hidden part of the back object excluded). Same seed,
/// same bytes. The instance id encodes the index and shape kind.
[[nodiscard]] std::vector<InstanceRecord> synth_benchmark(std::uint64_t seed, int n, const SynthConfig& cfg = {});

}  // namespace vitclick
