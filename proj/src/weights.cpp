#include "vitclick/weights.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>

namespace vitclick {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

std::string shape_str(c10::IntArrayRef s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << "]";
    return os.str();
}

// "{i}" matches a decimal index; a trailing '*' matches any suffix.
std::regex pattern_regex(const std::string& pattern, bool allow_star) {
    std::string re;
    for (std::size_t i = 0; i < pattern.size(); ++i) {
        if (pattern.compare(i, 3, "{i}") == 0) {
            re += "([0-9]+)";
            i += 2;
        } else if (allow_star && pattern[i] == '*' && i + 1 == pattern.size()) {
            re += ".*";
        } else if (std::string_view(".[](){}+?^$|\\*").find(pattern[i]) != std::string_view::npos) {
            re += '\\';
            re += pattern[i];
        } else {
            re += pattern[i];
        }
    }
    return std::regex(re);
}

fs::path data_dir() {
    if (const char* env = std::getenv("VITCLICK_DATA_DIR")) return env;
    return VITCLICK_DATA_DIR;
}

}  // namespace

WeightBundle WeightBundle::read(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("weight bundle: missing " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("weight bundle: bad manifest: ") + e.what());
    }
    if (!manifest.contains("tensors") || !manifest["tensors"].is_object()) {
        throw std::runtime_error("weight bundle: manifest has no \"tensors\" object");
    }
    WeightBundle bundle;
    for (const auto& [name, entry] : manifest["tensors"].items()) {
        const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
        const auto dtype_name = entry.value("dtype", std::string("float32"));
        torch::Dtype dtype;
        std::size_t elem = 0;
        if (dtype_name == "float32") {
            dtype = torch::kFloat32;
            elem = 4;
        } else if (dtype_name == "float16") {
            dtype = torch::kFloat16;
            elem = 2;
        } else {
            throw std::runtime_error("weight bundle: tensor '" + name + "' has unsupported dtype " + dtype_name);
        }
        std::int64_t numel = 1;
        for (auto d : shape) numel *= d;
        const auto path = dir / entry.at("file").get<std::string>();
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("weight bundle: cannot open " + path.string());
        std::vector<char> bytes(static_cast<std::size_t>(numel) * elem);
        f.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (f.gcount() != static_cast<std::streamsize>(bytes.size()) || f.peek() != EOF) {
            throw std::runtime_error("weight bundle: size of " + path.string() + " does not match shape " +
                                     shape_str(shape) + " for tensor '" + name + "'");
        }
        auto t = torch::from_blob(bytes.data(), shape, dtype).to(torch::kFloat32).clone();
        bundle.tensors.emplace(name, std::move(t));
    }
    return bundle;
}

void WeightBundle::write(const fs::path& dir) const {
    fs::create_directories(dir);
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, tensor] : this->tensors) {
        const auto t = tensor.detach().to(torch::kFloat32).contiguous();
        const auto file = name + ".bin";
        std::ofstream f(dir / file, std::ios::binary);
        f.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * 4));
        if (!f) throw std::runtime_error("weight bundle: cannot write " + (dir / file).string());
        tensors[name] = {{"shape", t.sizes().vec()}, {"dtype", "float32"}, {"file", file}};
    }
    std::ofstream(dir / "manifest.json") << nlohmann::json{{"format", "vitclick-weights"}, {"version", 1}, {"tensors", tensors}}.dump(2);
}

NameMap NameMap::from_json(const nlohmann::json& j) {
    NameMap m;
    for (const auto& pair : j.at("rename")) {
        m.rename.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    }
    if (j.contains("drop")) m.drop = j.at("drop").get<std::vector<std::string>>();
    return m;
}

NameMap NameMap::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("name map: cannot open " + path.string());
    return from_json(nlohmann::json::parse(in));
}

NameMap NameMap::mae_default() { return load(data_dir() / "mae_name_map.json"); }

std::optional<std::string> NameMap::translate(const std::string& external) const {
    for (const auto& pattern : drop) {
        if (std::regex_match(external, pattern_regex(pattern, true))) return std::string{};
    }
    for (const auto& [from, to] : rename) {
        std::smatch m;
        if (!std::regex_match(external, m, pattern_regex(from, false))) continue;
        std::string out = to;
        if (m.size() > 1) {
            const auto at = out.find("{i}");
            if (at != std::string::npos) out.replace(at, 3, m[1].str());
        }
        return out;
    }
    return std::nullopt;
}

LoadReport load_pretrained(Backbone& backbone, const WeightBundle& bundle, const NameMap& names) {
    const auto& cfg = backbone->config();
    auto params = backbone->named_parameters(true);
    LoadReport report;
    std::map<std::string, torch::Tensor> incoming;
    for (const auto& [external, tensor] : bundle.tensors) {
        const auto internal = names.translate(external);
        if (!internal) {
            report.unmapped.push_back(external);
        } else if (internal->empty()) {
            report.dropped.push_back(external);
        } else {
            incoming[*internal] = tensor;
        }
    }

    torch::NoGradGuard no_grad;
    for (auto& item : params) {
        const auto& name = item.key();
        auto& param = item.value();
        auto it = incoming.find(name);
        if (it == incoming.end()) throw ConfigError("pretrained weights: no value for backbone parameter '" + name + "'");
        auto value = it->second;

        if (name == "pos_embed") {
            const auto c = static_cast<std::int64_t>(cfg.embed_dim);
            if (value.dim() == 3 && value.size(0) == 1 && value.size(2) == c) {
                auto n = value.size(1);
                auto g = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(n - 1))));
                if (g * g == n - 1) {
                    value = value.slice(1, 1);
                } else {
                    g = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
                    if (g * g != n) {
                        throw ConfigError("pretrained weights: parameter 'pos_embed' has " + std::to_string(n) +
                                          " entries, which is neither g*g nor 1+g*g");
                    }
                }
                value = value.reshape({1, g, g, c});
            }
            if (value.dim() != 4 || value.size(0) != 1 || value.size(1) != value.size(2) || value.size(3) != c) {
                throw ConfigError("pretrained weights: parameter 'pos_embed' has shape " + shape_str(value.sizes()) +
                                  ", expected [1, g, g, " + std::to_string(c) + "]");
            }
            if (value.size(1) != cfg.pretrain_grid) {
                if (value.size(1) < 2) throw ConfigError("pretrained weights: parameter 'pos_embed' grid is too small");
                value = F::interpolate(value.permute({0, 3, 1, 2}),
                                       F::InterpolateFuncOptions()
                                           .size(std::vector<std::int64_t>{cfg.pretrain_grid, cfg.pretrain_grid})
                                           .mode(torch::kBicubic)
                                           .align_corners(true))
                            .permute({0, 2, 3, 1});
                report.pos_resampled = true;
            }
        }
        if (value.sizes() != param.sizes()) {
            throw ConfigError("pretrained weights: parameter '" + name + "' has shape " + shape_str(value.sizes()) +
                              ", expected " + shape_str(param.sizes()));
        }
        param.copy_(value);
        report.loaded.push_back(name);
        incoming.erase(it);
    }
    for (const auto& [name, tensor] : incoming) report.unmapped.push_back(name);
    return report;
}

Backbone build_backbone(const BackboneConfig& cfg, const fs::path& bundle_dir) {
    auto bb = build_backbone(cfg);
    load_pretrained(bb, WeightBundle::read(bundle_dir));
    return bb;
}

}  // namespace vitclick
