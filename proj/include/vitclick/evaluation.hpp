#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vitclick/data_io.hpp"
#include "vitclick/model.hpp"
#include "vitclick/types.hpp"

namespace vitclick {

struct EvalProtocol {
    int budget = 20;
    std::vector<double> targets{0.85, 0.90};
    double threshold = 0.5;
    /// Stop clicking once every target is reached (the curve is then padded
    /// with its last value when aggregating).
    bool stop_when_reached = true;

    void validate() const;
};

struct EvaluationRecord {
    std::string instance_id;
    std::vector<double> iou_curve;  // IoU after click 1..K, K <= budget
    std::vector<int> noc;           // one per target, budget when never reached
    std::optional<double> failed_at;
    std::vector<Click> clicks;
    bool errored = false;
    std::string error;

    /// NoC for one of the protocol targets (matched to 1e-9).
    [[nodiscard]] int noc_at(const EvalProtocol& protocol, double target) const;
};

/// Runs the automatic clicker against `predict` until every target is met or
/// the budget is spent. A throwing predictor yields an errored record.
/// failed_at is the highest target the instance never reached.
[[nodiscard]] EvaluationRecord evaluate_instance(const PredictFn& predict, const RgbImage& image, const BinaryMask& gt,
                                                 const EvalProtocol& protocol = {}, const std::string& instance_id = "");

struct IouHistogram {
    int clicks = 0;
    std::vector<int> counts;  // bins [0, 0.1), ..., [0.9, 1.0]
};

struct EvaluationReport {
    std::string dataset;
    EvalProtocol protocol;
    int instances = 0;
    int errored = 0;
    std::vector<double> mean_noc;    // per target
    std::vector<int> failures;       // per target
    std::vector<double> miou_at_k;   // k = 1..budget
    std::vector<IouHistogram> histograms;
    std::vector<EvaluationRecord> records;

    [[nodiscard]] double noc_at(double target) const;
    [[nodiscard]] nlohmann::json to_json() const;
    static EvaluationReport from_json(const nlohmann::json& j);
    /// instance_id, noc per target, failed_at, errored, iou@1..budget.
    [[nodiscard]] std::string per_instance_csv() const;
    /// k, miou.
    [[nodiscard]] std::string miou_csv() const;
};

/// Means over non-errored records; failures count as the budget. Throws
/// std::invalid_argument when no record is usable.
[[nodiscard]] EvaluationReport aggregate(const std::vector<EvaluationRecord>& records, const EvalProtocol& protocol,
                                         const std::string& dataset = "");

/// evaluate_instance over every record, then aggregate.
[[nodiscard]] EvaluationReport evaluate_dataset(const PredictFn& predict, const std::vector<InstanceRecord>& data,
                                                const EvalProtocol& protocol = {}, const std::string& dataset = "");

/// report.json, per_instance.csv, miou.csv.
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);

/// Multiply-accumulate count of one forward pass times two. Counted: both
/// patch embeddings, qkv/proj/MLP linears, attention QK^T and AV, every neck
/// convolution, head convolutions. Not counted: normalisation, activations,
/// softmax, bias adds, interpolation, positional interpolation.
[[nodiscard]] std::int64_t forward_flops(const ModelConfig& cfg);

struct ComputeBudget {
    std::int64_t params = 0;
    std::int64_t flops = 0;
    double seconds_per_click = 0.0;  // median, single-threaded
    int timed_clicks = 0;
};

/// Parameter and FLOP counts; when timed_clicks > 0 also the median
/// single-threaded latency of that many clicks after `warmup` untimed ones.
[[nodiscard]] ComputeBudget compute_budget(ClickSegModel model, int timed_clicks = 20, int warmup = 3);

/// mIoU@k curves, one polyline per labelled report.
[[nodiscard]] std::string miou_svg(const std::vector<std::pair<std::string, EvaluationReport>>& reports);
/// Bar chart of the IoU histogram after `clicks` clicks.
[[nodiscard]] std::string histogram_svg(const EvaluationReport& report, int clicks);

}  // namespace vitclick
