#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vitclick/click_sim.hpp"
#include "vitclick/data_io.hpp"
#include "vitclick/model.hpp"

namespace vitclick {

struct AugmentConfig {
    bool enabled = true;
    double scale_min = 0.75;
    double scale_max = 1.25;
    double flip_probability = 0.5;
    double max_rotation_deg = 15.0;
    double brightness = 0.2;  // additive, fraction of 255
    double contrast = 0.2;    // multiplicative around 1
    int max_tries = 10;
};

/// Everything a training run needs. Serialised as one flat JSON object with
/// dotted keys (train.*, augment.*, clicks.*, data.*, plus the model keys of
/// ModelConfig::apply_overrides and "model.preset").
struct TrainingConfig {
    ModelConfig model = ModelConfig::preset("xtiny_desk");
    std::string model_preset = "xtiny_desk";

    int epochs = 55;
    double lr_initial = 5e-5;
    double lr_final = 5e-6;
    int lr_drop_epoch = 50;
    int batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double focal_gamma = 2.0;
    bool freeze_backbone = false;
    bool full_resolution_loss = false;
    double zero_prev_probability = 0.5;
    int max_iterative_clicks = 3;
    double max_seconds = 0.0;  // wall-clock cap, 0 = none
    std::uint64_t seed = 0;
    int threads = 0;            // 0 = leave torch's default
    int checkpoint_every = 1;   // epochs
    int log_every = 50;         // steps

    AugmentConfig augment;
    RandomClickConfig clicks;

    /// Training data: a directory (format auto-detected unless data.format is
    /// set) or, when data.root is empty, the synthetic benchmark.
    std::string data_root;
    std::string data_format;
    std::uint64_t synth_seed = 1;
    int synth_count = 200;

    std::string output_dir = "runs/default";

    void validate() const;
    [[nodiscard]] nlohmann::json to_flat_json() const;
    /// Starts from the defaults (with the model preset named by "model.preset"
    /// if present) and applies every key. Unknown keys throw ConfigError.
    static TrainingConfig from_flat_json(const nlohmann::json& flat);
    static TrainingConfig load(const std::filesystem::path& path);
};

/// Normalised focal loss, averaged over the batch. logits and gt are
/// [B, 1, H, W] (or [H, W]) with gt in {0, 1}. Per image:
/// -sum((1 - p_t)^gamma * log p_t) / (sum((1 - p_t)^gamma) + eps), with p_t
/// clamped to [eps, 1 - eps].
[[nodiscard]] torch::Tensor nfl_loss(const torch::Tensor& logits, const torch::Tensor& gt, double gamma = 2.0,
                                     double eps = 1e-8);

/// One training example before augmentation.
struct TrainSample {
    RgbImage image;
    BinaryMask gt;
    BinaryMask other_objects;
    std::vector<Click> clicks;
    BinaryMask prev_mask;
};

/// Geometric and photometric draw. The geometric part maps output pixel
/// coordinates to source ones through flip, rotation and scale about the source
/// center, then a shift of the crop window.
struct AugmentParams {
    double scale = 1.0;
    bool flip = false;
    double angle_deg = 0.0;
    double shift_row = 0.0;
    double shift_col = 0.0;
    double brightness = 0.0;  // added, in 0..255 units
    double contrast = 1.0;

    [[nodiscard]] bool is_identity() const {
        return scale == 1.0 && !flip && angle_deg == 0.0 && shift_row == 0.0 && shift_col == 0.0 &&
               brightness == 0.0 && contrast == 1.0;
    }
};

[[nodiscard]] AugmentParams draw_augment(std::mt19937_64& rng, const AugmentConfig& cfg, ImageSize source,
                                         ImageSize output);

/// Applies one draw to every spatial field. Clicks that leave the frame are
/// dropped and the rest renumbered.
[[nodiscard]] TrainSample apply_augment(const TrainSample& sample, const AugmentParams& params, ImageSize output);

/// Draws until the gt keeps some foreground (up to cfg.max_tries), otherwise
/// returns the sample fitted to `output` without augmentation.
[[nodiscard]] TrainSample augment(const TrainSample& sample, std::mt19937_64& rng, const AugmentConfig& cfg,
                                  ImageSize output);

/// Longest side to `size`, aspect kept, zero padding bottom/right.
[[nodiscard]] TrainSample fit_sample(const TrainSample& sample, ImageSize size);

struct StepResult {
    double loss = 0.0;
    int clicks_total = 0;
};

/// Thrown when a step produces a non-finite loss.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(const std::string& batch_id, double value);
    std::string batch_id;
};

/// Owns the model, optimizer and data of one run.
class Trainer {
public:
    Trainer(TrainingConfig cfg, std::vector<InstanceRecord> data);

    /// Builds the batch tensors (clicks, previous masks) for the given samples
    /// and takes one optimizer step. `batch_id` labels errors.
    StepResult train_step(const std::vector<TrainSample>& batch, std::mt19937_64& rng, const std::string& batch_id);

    /// One pass over the data in a seeded order.
    double train_epoch(int epoch);

    /// Runs epochs until cfg.epochs or the wall-clock cap; writes checkpoints
    /// into cfg.output_dir. `on_epoch(epoch, mean_loss)` is optional.
    void fit(const std::function<void(int, double)>& on_epoch = {});

    void save_checkpoint(const std::filesystem::path& path) const;
    /// Restores model, optimizer and epoch counter.
    void load_checkpoint(const std::filesystem::path& path);

    [[nodiscard]] double learning_rate(int epoch) const;
    [[nodiscard]] int epoch() const { return epoch_; }
    [[nodiscard]] ClickSegModel model() const { return model_; }
    [[nodiscard]] const TrainingConfig& config() const { return cfg_; }
    [[nodiscard]] bool out_of_time() const;

private:
    TrainSample sample_for(std::size_t index, std::mt19937_64& rng) const;

    TrainingConfig cfg_;
    std::vector<InstanceRecord> data_;
    ClickSegModel model_{nullptr};
    std::unique_ptr<torch::optim::Adam> optimizer_;
    int epoch_ = 0;
    std::chrono::steady_clock::time_point started_;
};

/// Data for a config: the directory named by data.root or the synthetic set.
[[nodiscard]] std::vector<InstanceRecord> training_data(const TrainingConfig& cfg);

}  // namespace vitclick
