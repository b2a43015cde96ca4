#include "vitclick/model.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

namespace vitclick {

namespace {

constexpr std::array<float, 3> kImageMean{0.485F, 0.456F, 0.406F};
constexpr std::array<float, 3> kImageStd{0.229F, 0.224F, 0.225F};

std::string to_string(PrevMaskMode m) { return m == PrevMaskMode::binary ? "binary" : "probability"; }

PrevMaskMode prev_mask_mode_from_string(const std::string& s) {
    if (s == "binary") return PrevMaskMode::binary;
    if (s == "probability") return PrevMaskMode::probability;
    throw ConfigError("unknown guidance.prev_mask_mode '" + s + "'");
}

int largest_divisor_at_most(int n, int limit) {
    for (int d = std::min(n, limit); d >= 1; --d) {
        if (n % d == 0) return d;
    }
    return 1;
}

std::int64_t count_params(const torch::nn::Module& m) {
    std::int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

}  // namespace

void ModelConfig::validate() const {
    backbone.validate();
    if (c1 <= 0 || c2 <= 0) throw ConfigError("model: C1 and C2 must be positive");
    if (click_radius <= 0) throw ConfigError("guidance.radius must be positive");
    if (neck == NeckKind::parallel) (void)parallel_tap_blocks(backbone.depth);
    const int gh = backbone.grid_h();
    const int gw = backbone.grid_w();
    if (gh % 2 != 0 || gw % 2 != 0) {
        throw ConfigError("token grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                          " must be even for the stride-2 pyramid level");
    }
}

ModelConfig ModelConfig::preset(std::string_view name) {
    ModelConfig cfg;
    cfg.name = std::string(name);
    if (name == "vit_b") {
        cfg.backbone = BackboneConfig::preset("vit_b");
        cfg.c1 = 128;
        cfg.c2 = 256;
    } else if (name == "vit_l") {
        cfg.backbone = BackboneConfig::preset("vit_l");
        cfg.c1 = 192;
        cfg.c2 = 256;
    } else if (name == "vit_h") {
        cfg.backbone = BackboneConfig::preset("vit_h");
        cfg.c1 = 240;
        cfg.c2 = 256;
    } else if (name == "vit_xtiny") {
        cfg.backbone = BackboneConfig::preset("vit_xtiny");
        cfg.c1 = 56;
        cfg.c2 = 192;
    } else if (name == "xtiny_desk") {
        cfg.backbone = BackboneConfig::preset("vit_xtiny");
        cfg.backbone.input_size = {128, 128};
        cfg.backbone.pretrain_grid = 8;
        cfg.backbone.window_size = 4;
        cfg.c1 = 56;
        cfg.c2 = 192;
    } else {
        throw ConfigError("unknown model preset '" + std::string(name) + "'");
    }
    return cfg;
}

ModelConfig ModelConfig::preset(std::string_view name, int input_size) {
    auto cfg = preset(name);
    cfg.backbone.input_size = {input_size, input_size};
    if (input_size % cfg.backbone.patch_size != 0) {
        throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by patch size " +
                          std::to_string(cfg.backbone.patch_size));
    }
    const int grid = input_size / cfg.backbone.patch_size;
    cfg.backbone.window_size = largest_divisor_at_most(grid, cfg.backbone.window_size);
    cfg.backbone.pretrain_grid = std::min(cfg.backbone.pretrain_grid, grid);
    return cfg;
}

void ModelConfig::apply_overrides(const nlohmann::json& flat) {
    for (const auto& [key, value] : flat.items()) {
        if (key == "model.preset") {
            continue;  // consumed by the caller before overrides apply
        } else if (key == "model.input_size") {
            const int s = value.get<int>();
            backbone.input_size = {s, s};
        } else if (key == "model.window_size") {
            backbone.window_size = value.get<int>();
        } else if (key == "model.pretrain_grid") {
            backbone.pretrain_grid = value.get<int>();
        } else if (key == "model.num_heads") {
            backbone.num_heads = value.get<int>();
        } else if (key == "model.global_blocks") {
            backbone.global_block_indices = value.get<std::vector<int>>();
        } else if (key == "model.drop_path") {
            backbone.drop_path = value.get<double>();
        } else if (key == "model.c1") {
            c1 = value.get<int>();
        } else if (key == "model.c2") {
            c2 = value.get<int>();
        } else if (key == "neck.kind") {
            neck = neck_kind_from_string(value.get<std::string>());
        } else if (key == "guidance.radius") {
            click_radius = value.get<int>();
        } else if (key == "guidance.prev_mask_mode") {
            prev_mask_mode = prev_mask_mode_from_string(value.get<std::string>());
        } else if (key.starts_with("model.") || key.starts_with("neck.") || key.starts_with("guidance.")) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    validate();
}

nlohmann::json ModelConfig::to_json() const {
    const auto& b = backbone;
    return {
        {"name", name},
        {"input_size", {b.input_size.height, b.input_size.width}},
        {"patch_size", b.patch_size},
        {"embed_dim", b.embed_dim},
        {"depth", b.depth},
        {"num_heads", b.num_heads},
        {"mlp_ratio", b.mlp_ratio},
        {"qkv_bias", b.qkv_bias},
        {"global_block_indices", b.global_block_indices},
        {"window_size", b.window_size},
        {"pretrain_grid", b.pretrain_grid},
        {"drop_path", b.drop_path},
        {"neck", to_string(neck)},
        {"c1", c1},
        {"c2", c2},
        {"click_radius", click_radius},
        {"prev_mask_mode", to_string(prev_mask_mode)},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.name = j.at("name").get<std::string>();
    auto& b = cfg.backbone;
    const auto size = j.at("input_size").get<std::vector<int>>();
    b.input_size = {size.at(0), size.at(1)};
    b.patch_size = j.at("patch_size").get<int>();
    b.embed_dim = j.at("embed_dim").get<int>();
    b.depth = j.at("depth").get<int>();
    b.num_heads = j.at("num_heads").get<int>();
    b.mlp_ratio = j.at("mlp_ratio").get<double>();
    b.qkv_bias = j.at("qkv_bias").get<bool>();
    b.global_block_indices = j.at("global_block_indices").get<std::vector<int>>();
    b.window_size = j.at("window_size").get<int>();
    b.pretrain_grid = j.at("pretrain_grid").get<int>();
    b.drop_path = j.value("drop_path", 0.0);
    cfg.neck = neck_kind_from_string(j.at("neck").get<std::string>());
    cfg.c1 = j.at("c1").get<int>();
    cfg.c2 = j.at("c2").get<int>();
    cfg.click_radius = j.value("click_radius", kDefaultClickRadius);
    cfg.prev_mask_mode = prev_mask_mode_from_string(j.value("prev_mask_mode", std::string("binary")));
    cfg.validate();
    return cfg;
}

ClickSegModelImpl::ClickSegModelImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    backbone = register_module("backbone", Backbone(cfg_.backbone));
    guidance_embed = register_module("guidance_embed", make_guidance_embed(backbone->patch_embed));
    neck = register_module("neck", SimpleFeaturePyramid(cfg_.backbone.embed_dim, cfg_.c1, cfg_.neck,
                                                        cfg_.backbone.patch_size, cfg_.backbone.input_size));
    head = register_module("head", MlpHead(neck->level_channels(), cfg_.c2));
}

torch::Tensor ClickSegModelImpl::fused_tokens(const torch::Tensor& image, const torch::Tensor& guidance) {
    auto tokens = backbone->embed_image(image);
    auto fused = fuse_tokens(tokens, guidance, guidance_embed, backbone->patch_embed);
    return fused + backbone->positional_encoding();
}

FeaturePyramid ClickSegModelImpl::pyramid(const torch::Tensor& image, const torch::Tensor& guidance) {
    auto fused = fused_tokens(image, guidance);
    if (cfg_.neck == NeckKind::parallel) {
        return neck->forward_taps(backbone->encode_with_taps(fused, parallel_tap_blocks(cfg_.backbone.depth)));
    }
    return neck->forward(backbone->encode(fused));
}

ModelOutput ClickSegModelImpl::forward(const torch::Tensor& image, const torch::Tensor& guidance) {
    auto out = head->forward(pyramid(image, guidance));
    return {out.logits, out.probs};
}

void ClickSegModelImpl::apply_trainability(bool freeze_backbone) {
    for (auto& p : parameters()) p.set_requires_grad(true);
    if (freeze_backbone) {
        backbone->freeze_all();
    } else if (cfg_.neck == NeckKind::partial) {
        backbone->freeze_blocks(cfg_.backbone.depth / 2, cfg_.backbone.depth);
    }
}

ParameterBreakdown ClickSegModelImpl::parameter_breakdown() const {
    ParameterBreakdown b;
    b.backbone = count_params(*backbone);
    b.guidance_embed = count_params(*guidance_embed);
    b.neck = count_params(*neck);
    b.head = count_params(*head);
    return b;
}

ClickSegModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
    torch::manual_seed(seed);
    ClickSegModel model(cfg);
    init_weights(*model);
    trunc_normal_(model->backbone->pos_embed, 0.02);
    {
        // Zero guidance projection: initial fused tokens equal the image tokens.
        torch::NoGradGuard no_grad;
        model->guidance_embed->proj->weight.zero_();
        model->guidance_embed->proj->bias.zero_();
    }
    return model;
}

torch::Tensor image_to_tensor(const RgbImage& image) {
    auto t = torch::from_blob(const_cast<std::uint8_t*>(image.data().data()), {image.height(), image.width(), 3},
                              torch::kUInt8)
                 .to(torch::kFloat32)
                 .div(255.0)
                 .permute({2, 0, 1});
    auto mean = torch::tensor({kImageMean[0], kImageMean[1], kImageMean[2]}).view({3, 1, 1});
    auto std = torch::tensor({kImageStd[0], kImageStd[1], kImageStd[2]}).view({3, 1, 1});
    return ((t - mean) / std).contiguous();
}

torch::Tensor mask_to_tensor(const BinaryMask& mask) {
    return torch::from_blob(const_cast<std::uint8_t*>(mask.data().data()), {mask.height(), mask.width()},
                            torch::kUInt8)
        .to(torch::kFloat32);
}

void save_model(const std::string& path, ClickSegModel& model) {
    torch::serialize::OutputArchive archive;
    archive.write("config", c10::IValue(model->config().to_json().dump()));
    torch::serialize::OutputArchive weights;
    model->save(weights);
    archive.write("model", weights);
    archive.save_to(path);
}

ClickSegModel load_model(const std::string& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path);
    c10::IValue config_value;
    if (!archive.try_read("config", config_value)) {
        throw std::runtime_error("checkpoint '" + path + "' has no model config");
    }
    auto cfg = ModelConfig::from_json(nlohmann::json::parse(config_value.toStringRef()));
    ClickSegModel model(cfg);
    torch::serialize::InputArchive weights;
    archive.read("model", weights);
    model->load(weights);
    model->eval();
    return model;
}

Predictor::Predictor(ClickSegModel model) : model_(std::move(model)) {
    model_->eval();
}

namespace {

cv::Mat to_mat(const RgbImage& image) {
    return cv::Mat(image.height(), image.width(), CV_8UC3, const_cast<std::uint8_t*>(image.data().data()));
}

}  // namespace

ProbabilityMap Predictor::predict(const RgbImage& image, const std::vector<Click>& clicks,
                                  const BinaryMask& prev_mask) const {
    const auto& cfg = model_->config();
    const ImageSize in = cfg.input_size();
    const ImageSize src = image.size();
    if (src.height <= 0 || src.width <= 0) throw std::invalid_argument("predict: empty image");
    if (!prev_mask.empty() && prev_mask.size() != src) {
        throw std::invalid_argument("predict: previous mask size does not match the image");
    }
    for (std::size_t i = 0; i < clicks.size(); ++i) {
        const auto& c = clicks[i];
        if (!(c.row >= 0 && c.col >= 0 && c.row < src.height && c.col < src.width)) {
            throw std::out_of_range("click " + std::to_string(i) + " lies outside the image");
        }
    }

    const bool identity = src == in;
    const double scale = identity ? 1.0
                                  : std::min(static_cast<double>(in.height) / src.height,
                                             static_cast<double>(in.width) / src.width);
    const int rh = identity ? in.height : std::clamp(static_cast<int>(std::lround(src.height * scale)), 1, in.height);
    const int rw = identity ? in.width : std::clamp(static_cast<int>(std::lround(src.width * scale)), 1, in.width);

    RgbImage model_image = image;
    BinaryMask model_prev = prev_mask.empty() ? BinaryMask(in) : prev_mask;
    std::vector<Click> model_clicks = clicks;
    if (!identity) {
        model_image = RgbImage(in.height, in.width, 0);
        cv::Mat dst(in.height, in.width, CV_8UC3, model_image.data().data());
        cv::resize(to_mat(image), dst(cv::Rect(0, 0, rw, rh)), cv::Size(rw, rh), 0, 0, cv::INTER_LINEAR);
        model_prev = BinaryMask(in);
        if (!prev_mask.empty()) {
            cv::Mat pm(src.height, src.width, CV_8UC1, const_cast<std::uint8_t*>(prev_mask.data().data()));
            cv::Mat pd(in.height, in.width, CV_8UC1, model_prev.data().data());
            cv::resize(pm, pd(cv::Rect(0, 0, rw, rh)), cv::Size(rw, rh), 0, 0, cv::INTER_NEAREST);
        }
        for (auto& c : model_clicks) {
            c.row = std::clamp(static_cast<int>(std::lround((c.row + 0.5) * rh / src.height - 0.5)), 0, rh - 1);
            c.col = std::clamp(static_cast<int>(std::lround((c.col + 0.5) * rw / src.width - 0.5)), 0, rw - 1);
        }
    }

    auto guidance = rasterize_clicks(model_clicks, model_prev, in, cfg.click_radius);
    torch::InferenceMode guard;
    auto model = model_;  // shared handle; forward does not mutate module state
    auto out = model->forward(image_to_tensor(model_image).unsqueeze(0), guidance.to_tensor().unsqueeze(0));
    auto probs = to_probability_map(out.probs);
    if (identity) return probs;

    cv::Mat pm(in.height, in.width, CV_32FC1, probs.data().data());
    cv::Mat back;
    cv::resize(pm(cv::Rect(0, 0, rw, rh)), back, cv::Size(src.width, src.height), 0, 0, cv::INTER_LINEAR);
    std::vector<float> values(back.begin<float>(), back.end<float>());
    for (auto& v : values) v = std::clamp(v, 0.0F, 1.0F);
    return ProbabilityMap(src, std::move(values));
}

PredictFn Predictor::as_function() const {
    auto self = *this;
    return [self](const RgbImage& image, const std::vector<Click>& clicks, const BinaryMask& prev) {
        return self.predict(image, clicks, prev);
    };
}

}  // namespace vitclick
