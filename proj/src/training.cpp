#include "vitclick/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include <opencv2/imgproc.hpp>

namespace vitclick {

namespace fs = std::filesystem;

namespace {

// Calls f(key, field) for every serialisable field except the model ones.
template <class Cfg, class F>
void visit_fields(Cfg& c, F&& f) {
    f("train.epochs", c.epochs);
    f("train.lr_initial", c.lr_initial);
    f("train.lr_final", c.lr_final);
    f("train.lr_drop_epoch", c.lr_drop_epoch);
    f("train.batch_size", c.batch_size);
    f("train.beta1", c.beta1);
    f("train.beta2", c.beta2);
    f("train.weight_decay", c.weight_decay);
    f("train.focal_gamma", c.focal_gamma);
    f("train.freeze_backbone", c.freeze_backbone);
    f("train.full_resolution_loss", c.full_resolution_loss);
    f("train.zero_prev_probability", c.zero_prev_probability);
    f("train.max_iterative_clicks", c.max_iterative_clicks);
    f("train.max_seconds", c.max_seconds);
    f("train.seed", c.seed);
    f("train.threads", c.threads);
    f("train.checkpoint_every", c.checkpoint_every);
    f("train.log_every", c.log_every);
    f("train.output_dir", c.output_dir);
    f("augment.enabled", c.augment.enabled);
    f("augment.scale_min", c.augment.scale_min);
    f("augment.scale_max", c.augment.scale_max);
    f("augment.flip_probability", c.augment.flip_probability);
    f("augment.max_rotation_deg", c.augment.max_rotation_deg);
    f("augment.brightness", c.augment.brightness);
    f("augment.contrast", c.augment.contrast);
    f("augment.max_tries", c.augment.max_tries);
    f("clicks.margin", c.clicks.margin);
    f("clicks.max_positive", c.clicks.max_positive);
    f("clicks.max_negative", c.clicks.max_negative);
    f("clicks.band_width", c.clicks.band_width);
    f("data.root", c.data_root);
    f("data.format", c.data_format);
    f("data.synth_seed", c.synth_seed);
    f("data.synth_count", c.synth_count);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid training config: " + what);
}

cv::Mat wrap(const RgbImage& im) {
    return {im.height(), im.width(), CV_8UC3, const_cast<std::uint8_t*>(im.data().data())};
}

cv::Mat wrap(const BinaryMask& m) {
    return {m.height(), m.width(), CV_8UC1, const_cast<std::uint8_t*>(m.data().data())};
}

BinaryMask warp_mask(const BinaryMask& m, const cv::Mat& affine, ImageSize out) {
    if (m.empty()) return m;
    BinaryMask dst(out);
    cv::Mat d = wrap(dst);
    cv::warpAffine(wrap(m), d, affine, d.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar(0));
    return dst;
}

// Forward map source pixel -> output pixel.
cv::Mat affine_for(const AugmentParams& p, ImageSize src, ImageSize out) {
    const double csy = (src.height - 1) / 2.0;
    const double csx = (src.width - 1) / 2.0;
    const double coy = (out.height - 1) / 2.0;
    const double cox = (out.width - 1) / 2.0;
    const double th = p.angle_deg * std::numbers::pi / 180.0;
    const double a = p.scale * std::cos(th);
    const double b = p.scale * std::sin(th);
    // q = F(x) - c - shift, F flips columns; out = s R q + c_out.
    const double fx = p.flip ? -1.0 : 1.0;
    const double qx0 = (p.flip ? src.width - 1 : 0) - csx - p.shift_col;
    const double qy0 = -csy - p.shift_row;
    cv::Mat m(2, 3, CV_64F);
    m.at<double>(0, 0) = a * fx;
    m.at<double>(0, 1) = -b;
    m.at<double>(0, 2) = a * qx0 - b * qy0 + cox;
    m.at<double>(1, 0) = b * fx;
    m.at<double>(1, 1) = a;
    m.at<double>(1, 2) = b * qx0 + a * qy0 + coy;
    return m;
}

std::vector<Click> renumber(std::vector<Click> clicks) {
    for (std::size_t i = 0; i < clicks.size(); ++i) clicks[i].ordinal = static_cast<int>(i);
    return clicks;
}

}  // namespace

void TrainingConfig::validate() const {
    model.validate();
    require(epochs >= 1, "train.epochs must be >= 1");
    require(lr_initial > 0 && lr_final > 0, "learning rates must be positive");
    require(lr_final < lr_initial, "train.lr_final must be below train.lr_initial");
    require(lr_drop_epoch >= 0, "train.lr_drop_epoch must be >= 0");
    require(batch_size >= 1, "train.batch_size must be >= 1");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must lie in [0, 1)");
    require(focal_gamma >= 0, "train.focal_gamma must be >= 0");
    require(zero_prev_probability >= 0 && zero_prev_probability <= 1, "train.zero_prev_probability must lie in [0, 1]");
    require(max_iterative_clicks >= 0, "train.max_iterative_clicks must be >= 0");
    require(max_seconds >= 0, "train.max_seconds must be >= 0");
    require(checkpoint_every >= 1, "train.checkpoint_every must be >= 1");
    require(augment.scale_min > 0 && augment.scale_min <= augment.scale_max, "augment scale range is empty");
    require(augment.flip_probability >= 0 && augment.flip_probability <= 1, "augment.flip_probability outside [0, 1]");
    require(augment.max_rotation_deg >= 0 && augment.brightness >= 0 && augment.contrast >= 0 &&
                augment.contrast < 1,
            "augment ranges must be nonnegative, contrast below 1");
    require(augment.max_tries >= 1, "augment.max_tries must be >= 1");
    require(clicks.margin >= 0 && clicks.max_positive >= 1 && clicks.max_negative >= 0 &&
                clicks.band_width > clicks.margin,
            "click sampler settings");
    require(synth_count >= 1, "data.synth_count must be >= 1");
}

nlohmann::json TrainingConfig::to_flat_json() const {
    nlohmann::json j = nlohmann::json::object();
    auto copy = *this;
    visit_fields(copy, [&](const char* key, auto& field) { j[key] = field; });
    j["model.preset"] = model_preset;
    j["model.input_size"] = model.backbone.input_size.height;
    j["model.window_size"] = model.backbone.window_size;
    j["model.pretrain_grid"] = model.backbone.pretrain_grid;
    j["model.num_heads"] = model.backbone.num_heads;
    j["model.global_blocks"] = model.backbone.global_block_indices;
    j["model.drop_path"] = model.backbone.drop_path;
    j["model.c1"] = model.c1;
    j["model.c2"] = model.c2;
    j["neck.kind"] = to_string(model.neck);
    j["guidance.radius"] = model.click_radius;
    j["guidance.prev_mask_mode"] = model.prev_mask_mode == PrevMaskMode::binary ? "binary" : "probability";
    return j;
}

TrainingConfig TrainingConfig::from_flat_json(const nlohmann::json& flat) {
    if (!flat.is_object()) throw ConfigError("training config must be a JSON object of dotted keys");
    TrainingConfig cfg;
    if (flat.contains("model.preset")) {
        cfg.model_preset = flat.at("model.preset").get<std::string>();
        cfg.model = ModelConfig::preset(cfg.model_preset);
    }
    for (const auto& [key, value] : flat.items()) {
        if (key.starts_with("model.") || key.starts_with("neck.") || key.starts_with("guidance.")) continue;
        bool known = false;
        visit_fields(cfg, [&](const char* name, auto& field) {
            if (key != name) return;
            known = true;
            try {
                field = value.get<std::decay_t<decltype(field)>>();
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("config key '" + key + "': " + e.what());
            }
        });
        if (!known) throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.model.apply_overrides(flat);
    cfg.validate();
    return cfg;
}

TrainingConfig TrainingConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    return from_flat_json(j);
}

torch::Tensor nfl_loss(const torch::Tensor& logits, const torch::Tensor& gt, double gamma, double eps) {
    if (logits.sizes() != gt.sizes()) throw std::invalid_argument("nfl_loss: logits and gt shapes differ");
    const auto batch = logits.dim() <= 2 ? 1 : logits.size(0);
    auto x = logits.reshape({batch, -1});
    auto y = gt.reshape({batch, -1}).to(logits.dtype());
    // p_t = sigmoid(+x) on foreground, sigmoid(-x) on background.
    auto pt = torch::sigmoid(x * (2 * y - 1)).clamp(eps, 1.0 - eps);
    auto beta = (1 - pt).pow(gamma);
    auto per_image = -(beta * pt.log()).sum(1) / (beta.sum(1) + eps);
    return per_image.mean();
}

AugmentParams draw_augment(std::mt19937_64& rng, const AugmentConfig& cfg, ImageSize source, ImageSize output) {
    AugmentParams p;
    if (!cfg.enabled) return p;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    p.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u(rng);
    p.flip = u(rng) < cfg.flip_probability;
    p.angle_deg = (2 * u(rng) - 1) * cfg.max_rotation_deg;
    const double slack_r = std::abs(source.height - output.height / p.scale) / 2.0;
    const double slack_c = std::abs(source.width - output.width / p.scale) / 2.0;
    p.shift_row = (2 * u(rng) - 1) * slack_r;
    p.shift_col = (2 * u(rng) - 1) * slack_c;
    p.brightness = (2 * u(rng) - 1) * cfg.brightness * 255.0;
    p.contrast = 1.0 + (2 * u(rng) - 1) * cfg.contrast;
    return p;
}

TrainSample apply_augment(const TrainSample& sample, const AugmentParams& p, ImageSize output) {
    if (p.is_identity() && sample.image.size() == output) return sample;
    const auto src = sample.image.size();
    const auto affine = affine_for(p, src, output);

    TrainSample out;
    out.image = RgbImage(output.height, output.width);
    cv::Mat dst = wrap(out.image);
    cv::warpAffine(wrap(sample.image), dst, affine, dst.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
    if (p.brightness != 0.0 || p.contrast != 1.0) {
        for (auto& v : out.image.data()) {
            v = static_cast<std::uint8_t>(std::clamp(std::lround((v - 128.0) * p.contrast + 128.0 + p.brightness), 0L, 255L));
        }
    }
    out.gt = warp_mask(sample.gt, affine, output);
    out.other_objects = warp_mask(sample.other_objects, affine, output);
    out.prev_mask = warp_mask(sample.prev_mask, affine, output);

    for (const auto& c : sample.clicks) {
        const double x = affine.at<double>(0, 0) * c.col + affine.at<double>(0, 1) * c.row + affine.at<double>(0, 2);
        const double y = affine.at<double>(1, 0) * c.col + affine.at<double>(1, 1) * c.row + affine.at<double>(1, 2);
        const int r = static_cast<int>(std::lround(y));
        const int q = static_cast<int>(std::lround(x));
        if (r >= 0 && q >= 0 && r < output.height && q < output.width) out.clicks.push_back({r, q, c.polarity, 0});
    }
    out.clicks = renumber(std::move(out.clicks));
    return out;
}

TrainSample fit_sample(const TrainSample& sample, ImageSize size) {
    const auto src = sample.image.size();
    if (src == size) return sample;
    AugmentParams p;
    p.scale = std::min(static_cast<double>(size.height) / src.height, static_cast<double>(size.width) / src.width);
    // Align the resized image with the top-left corner of the output.
    p.shift_row = ((size.height - 1) / 2.0 + 0.5) / p.scale - (src.height - 1) / 2.0 - 0.5;
    p.shift_col = ((size.width - 1) / 2.0 + 0.5) / p.scale - (src.width - 1) / 2.0 - 0.5;
    return apply_augment(sample, p, size);
}

TrainSample augment(const TrainSample& sample, std::mt19937_64& rng, const AugmentConfig& cfg, ImageSize output) {
    for (int t = 0; t < cfg.max_tries; ++t) {
        auto out = apply_augment(sample, draw_augment(rng, cfg, sample.image.size(), output), output);
        if (out.gt.any()) return out;
    }
    return fit_sample(sample, output);
}

NonFiniteLoss::NonFiniteLoss(const std::string& id, double value)
    : std::runtime_error("non-finite loss (" + std::to_string(value) + ") in batch " + id), batch_id(id) {}

Trainer::Trainer(TrainingConfig cfg, std::vector<InstanceRecord> data)
    : cfg_(std::move(cfg)), data_(std::move(data)), started_(std::chrono::steady_clock::now()) {
    cfg_.validate();
    if (data_.empty()) throw std::invalid_argument("Trainer: no training data");
    if (cfg_.threads > 0) torch::set_num_threads(cfg_.threads);
    model_ = build_model(cfg_.model, cfg_.seed);
    model_->apply_trainability(cfg_.freeze_backbone);
    model_->train();
    std::vector<torch::Tensor> trainable;
    for (auto& p : model_->parameters()) {
        if (p.requires_grad()) trainable.push_back(p);
    }
    optimizer_ = std::make_unique<torch::optim::Adam>(
        trainable, torch::optim::AdamOptions(cfg_.lr_initial)
                       .betas({cfg_.beta1, cfg_.beta2})
                       .weight_decay(cfg_.weight_decay));
}

double Trainer::learning_rate(int epoch) const { return epoch < cfg_.lr_drop_epoch ? cfg_.lr_initial : cfg_.lr_final; }

bool Trainer::out_of_time() const {
    if (cfg_.max_seconds <= 0) return false;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count() >= cfg_.max_seconds;
}

TrainSample Trainer::sample_for(std::size_t index, std::mt19937_64& rng) const {
    const auto& rec = data_[index];
    TrainSample s{rec.image, rec.gt_mask, rec.other_objects, {}, {}};
    return augment(s, rng, cfg_.augment, cfg_.model.input_size());
}

StepResult Trainer::train_step(const std::vector<TrainSample>& batch, std::mt19937_64& rng, const std::string& batch_id) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const auto size = cfg_.model.input_size();
    const auto n = batch.size();
    for (const auto& s : batch) {
        if (s.image.size() != size || s.gt.size() != size) {
            throw std::invalid_argument("train_step: batch " + batch_id + " is not at the model input size");
        }
    }

    std::vector<std::vector<Click>> clicks(n);
    std::vector<BinaryMask> prev(n, BinaryMask(size));
    std::vector<std::size_t> refine;  // samples whose previous mask comes from the model
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!batch[i].clicks.empty()) {
            clicks[i] = batch[i].clicks;
        } else {
            clicks[i] = sample_random_clicks(batch[i].gt, cfg_.clicks.max_positive + cfg_.clicks.max_negative, rng(),
                                             cfg_.clicks, batch[i].other_objects)
                            .clicks;
        }
        if (!batch[i].prev_mask.empty()) prev[i] = batch[i].prev_mask;
        if (u(rng) >= cfg_.zero_prev_probability && cfg_.max_iterative_clicks > 0) refine.push_back(i);
    }

    std::vector<torch::Tensor> images;
    images.reserve(n);
    for (const auto& s : batch) images.push_back(image_to_tensor(s.image));
    auto image_batch = torch::stack(images);

    auto guidance_for = [&](const std::vector<std::size_t>& idx) {
        std::vector<torch::Tensor> g;
        g.reserve(idx.size());
        for (auto i : idx) g.push_back(rasterize_clicks(clicks[i], prev[i], size, cfg_.model.click_radius).to_tensor());
        return torch::stack(g);
    };

    if (!refine.empty()) {
        const int iters = std::uniform_int_distribution<int>(1, cfg_.max_iterative_clicks)(rng);
        auto sub_images = image_batch.index_select(
            0, torch::tensor(std::vector<std::int64_t>(refine.begin(), refine.end()), torch::kLong));
        model_->eval();
        for (int t = 0; t < iters; ++t) {
            torch::Tensor probs;
            {
                torch::NoGradGuard no_grad;
                probs = model_->forward(sub_images, guidance_for(refine)).probs;
            }
            for (std::size_t k = 0; k < refine.size(); ++k) {
                const auto i = refine[k];
                prev[i] = binarize(to_probability_map(probs, static_cast<int>(k)));
                auto next = next_eval_click(prev[i], batch[i].gt, static_cast<int>(clicks[i].size()),
                                            ClickExclusion{clicks[i], cfg_.model.click_radius});
                if (next) clicks[i].push_back(*next);
            }
        }
        model_->train();
    }

    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    std::vector<torch::Tensor> gts;
    gts.reserve(n);
    for (const auto& s : batch) gts.push_back(mask_to_tensor(s.gt).unsqueeze(0));
    auto gt_full = torch::stack(gts);

    auto out = model_->forward(image_batch, guidance_for(all));
    torch::Tensor loss;
    if (cfg_.full_resolution_loss) {
        namespace F = torch::nn::functional;
        auto up = F::interpolate(out.logits, F::InterpolateFuncOptions()
                                                 .size(std::vector<std::int64_t>{size.height, size.width})
                                                 .mode(torch::kBilinear)
                                                 .align_corners(false));
        loss = nfl_loss(up, gt_full, cfg_.focal_gamma);
    } else {
        namespace F = torch::nn::functional;
        auto target = F::interpolate(gt_full, F::InterpolateFuncOptions()
                                                  .size(std::vector<std::int64_t>{out.logits.size(2), out.logits.size(3)})
                                                  .mode(torch::kArea))
                          .ge(0.5)
                          .to(torch::kFloat32);
        loss = nfl_loss(out.logits, target, cfg_.focal_gamma);
    }
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw NonFiniteLoss(batch_id, value);

    optimizer_->zero_grad();
    loss.backward();
    optimizer_->step();

    StepResult r;
    r.loss = value;
    for (const auto& c : clicks) r.clicks_total += static_cast<int>(c.size());
    return r;
}

double Trainer::train_epoch(int epoch) {
    for (auto& group : optimizer_->param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(learning_rate(epoch));
    }
    std::mt19937_64 rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
    std::vector<std::size_t> order(data_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    int steps = 0;
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
        if (out_of_time()) break;
        std::vector<TrainSample> batch;
        for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(sample_for(order[k], rng));
        const auto id = "epoch " + std::to_string(epoch) + " step " + std::to_string(steps);
        total += train_step(batch, rng, id).loss;
        ++steps;
        if (cfg_.log_every > 0 && steps % cfg_.log_every == 0) {
            std::cerr << "epoch " << epoch << " step " << steps << " loss " << total / steps << "\n";
        }
    }
    return steps > 0 ? total / steps : 0.0;
}

void Trainer::fit(const std::function<void(int, double)>& on_epoch) {
    started_ = std::chrono::steady_clock::now();
    fs::create_directories(cfg_.output_dir);
    std::ofstream(fs::path(cfg_.output_dir) / "config.json") << cfg_.to_flat_json().dump(2) << "\n";
    while (epoch_ < cfg_.epochs) {
        const double loss = train_epoch(epoch_);
        ++epoch_;
        if (on_epoch) on_epoch(epoch_ - 1, loss);
        const bool stop = out_of_time();
        if (epoch_ % cfg_.checkpoint_every == 0 || epoch_ == cfg_.epochs || stop) {
            save_checkpoint(fs::path(cfg_.output_dir) / "checkpoint.pt");
        }
        if (stop) break;
    }
}

void Trainer::save_checkpoint(const fs::path& path) const {
    torch::serialize::OutputArchive archive;
    archive.write("config", c10::IValue(model_->config().to_json().dump()));
    archive.write("training_config", c10::IValue(cfg_.to_flat_json().dump()));
    archive.write("epoch", c10::IValue(static_cast<std::int64_t>(epoch_)));
    torch::serialize::OutputArchive weights;
    model_->save(weights);
    archive.write("model", weights);
    torch::serialize::OutputArchive opt;
    optimizer_->save(opt);
    archive.write("optimizer", opt);
    const auto tmp = path.string() + ".tmp";
    archive.save_to(tmp);
    fs::rename(tmp, path);
}

void Trainer::load_checkpoint(const fs::path& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue config_value;
    if (!archive.try_read("config", config_value)) throw std::runtime_error("checkpoint has no model config");
    const auto saved = nlohmann::json::parse(config_value.toStringRef());
    if (saved != model_->config().to_json()) {
        throw ConfigError("checkpoint " + path.string() + " was written for a different model config");
    }
    torch::serialize::InputArchive weights;
    archive.read("model", weights);
    model_->load(weights);
    model_->apply_trainability(cfg_.freeze_backbone);
    torch::serialize::InputArchive opt;
    if (archive.try_read("optimizer", opt)) optimizer_->load(opt);
    c10::IValue epoch_value;
    epoch_ = archive.try_read("epoch", epoch_value) ? static_cast<int>(epoch_value.toInt()) : 0;
}

std::vector<InstanceRecord> training_data(const TrainingConfig& cfg) {
    if (cfg.data_root.empty()) {
        SynthConfig sc;
        sc.image_size = cfg.model.input_size().height;
        return synth_benchmark(cfg.synth_seed, cfg.synth_count, sc);
    }
    const auto format =
        cfg.data_format.empty() ? detect_format(cfg.data_root) : dataset_format_from_string(cfg.data_format);
    auto loaded = load_dataset(cfg.data_root, format);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    return std::move(loaded.records);
}

}  // namespace vitclick
