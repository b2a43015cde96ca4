#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vitclick/backbone.hpp"

namespace vitclick {

/// Directory of raw little-endian arrays plus manifest.json:
///   {"format": "vitclick-weights", "version": 1,
///    "tensors": {"<name>": {"shape": [...], "dtype": "float32"|"float16", "file": "<rel path>"}}}
struct WeightBundle {
    std::map<std::string, torch::Tensor> tensors;

    [[nodiscard]] static WeightBundle read(const std::filesystem::path& dir);
    /// Stores every tensor as float32, one file per tensor.
    void write(const std::filesystem::path& dir) const;
};

/// Translation from published MAE parameter names to backbone parameter
/// names. Patterns may contain "{i}" (a block index) and, for drop entries
/// only, a trailing "*".
struct NameMap {
    std::vector<std::pair<std::string, std::string>> rename;
    std::vector<std::string> drop;

    static NameMap from_json(const nlohmann::json& j);
    static NameMap load(const std::filesystem::path& path);
    /// The table shipped in data/mae_name_map.json.
    static NameMap mae_default();

    /// Internal name, "" for a dropped entry, or nullopt when unmapped.
    [[nodiscard]] std::optional<std::string> translate(const std::string& external) const;
};

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> dropped;
    std::vector<std::string> unmapped;
    bool pos_resampled = false;
};

/// Copies a bundle into the backbone. The positional table may be stored as
/// [1, 1 + g*g, C] (leading cls entry, removed) or [1, g, g, C] and is
/// resampled when g differs from the configured pretraining grid. Throws
/// ConfigError naming the parameter on any shape mismatch, and when a
/// backbone parameter has no counterpart in the bundle.
LoadReport load_pretrained(Backbone& backbone, const WeightBundle& bundle, const NameMap& names = NameMap::mae_default());

/// build_backbone followed by load_pretrained.
[[nodiscard]] Backbone build_backbone(const BackboneConfig& cfg, const std::filesystem::path& bundle_dir);

}  // namespace vitclick
