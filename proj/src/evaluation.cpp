#include "vitclick/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "vitclick/click_sim.hpp"
#include "vitclick/seg_head.hpp"

namespace vitclick {

namespace {

constexpr double kTargetMatch = 1e-9;
const std::vector<int> kHistogramClicks = {1, 3, 5, 10, 20};

std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

void EvalProtocol::validate() const {
    if (budget < 1) throw ConfigError("evaluation budget must be >= 1");
    if (targets.empty()) throw ConfigError("evaluation needs at least one IoU target");
    for (double t : targets) {
        if (!(t > 0.0 && t <= 1.0)) throw ConfigError("IoU targets must lie in (0, 1]");
    }
    if (!std::is_sorted(targets.begin(), targets.end())) throw ConfigError("IoU targets must be ascending");
}

int EvaluationRecord::noc_at(const EvalProtocol& protocol, double target) const {
    for (std::size_t i = 0; i < protocol.targets.size(); ++i) {
        if (std::abs(protocol.targets[i] - target) < kTargetMatch) return noc.at(i);
    }
    throw std::invalid_argument("target " + format_number(target) + " is not part of the protocol");
}

EvaluationRecord evaluate_instance(const PredictFn& predict, const RgbImage& image, const BinaryMask& gt,
                                   const EvalProtocol& protocol, const std::string& instance_id) {
    protocol.validate();
    if (image.size() != gt.size()) throw std::invalid_argument("evaluate_instance: image and gt sizes differ");
    if (!gt.any()) throw ProtocolError("evaluate_instance: ground truth has no foreground");

    EvaluationRecord rec;
    rec.instance_id = instance_id;
    const auto n_targets = protocol.targets.size();
    rec.noc.assign(n_targets, protocol.budget);
    std::vector<bool> reached(n_targets, false);

    BinaryMask pred(gt.size());
    try {
        for (int k = 1; k <= protocol.budget; ++k) {
            const auto click = next_eval_click(pred, gt, k - 1);
            if (!click) break;
            rec.clicks.push_back(*click);
            const auto probs = predict(image, rec.clicks, pred);
            if (probs.size() != gt.size()) throw std::runtime_error("predictor returned a map of the wrong size");
            pred = binarize(probs, static_cast<float>(protocol.threshold));
            const double v = iou(pred, gt);
            rec.iou_curve.push_back(v);
            for (std::size_t t = 0; t < n_targets; ++t) {
                if (!reached[t] && v >= protocol.targets[t]) {
                    reached[t] = true;
                    rec.noc[t] = k;
                }
            }
            if (protocol.stop_when_reached && std::all_of(reached.begin(), reached.end(), [](bool b) { return b; })) {
                break;
            }
        }
    } catch (const std::exception& e) {
        rec.errored = true;
        rec.error = e.what();
    }
    for (std::size_t t = n_targets; t-- > 0;) {
        if (!reached[t]) {
            rec.failed_at = protocol.targets[t];
            break;
        }
    }
    return rec;
}

EvaluationReport aggregate(const std::vector<EvaluationRecord>& records, const EvalProtocol& protocol,
                           const std::string& dataset) {
    protocol.validate();
    EvaluationReport rep;
    rep.dataset = dataset;
    rep.protocol = protocol;
    rep.records = records;
    const auto n_targets = protocol.targets.size();
    rep.mean_noc.assign(n_targets, 0.0);
    rep.failures.assign(n_targets, 0);
    rep.miou_at_k.assign(static_cast<std::size_t>(protocol.budget), 0.0);
    for (int k : kHistogramClicks) {
        if (k <= protocol.budget) rep.histograms.push_back({k, std::vector<int>(10, 0)});
    }

    for (const auto& r : records) {
        if (r.errored || r.iou_curve.empty()) {
            ++rep.errored;
            continue;
        }
        if (r.noc.size() != n_targets) throw std::invalid_argument("record " + r.instance_id + " has the wrong target count");
        ++rep.instances;
        for (std::size_t t = 0; t < n_targets; ++t) {
            rep.mean_noc[t] += r.noc[t];
            if (r.iou_curve.size() < static_cast<std::size_t>(r.noc[t]) ||
                r.iou_curve[static_cast<std::size_t>(r.noc[t]) - 1] < protocol.targets[t]) {
                ++rep.failures[t];
            }
        }
        for (int k = 1; k <= protocol.budget; ++k) {
            const auto idx = std::min(static_cast<std::size_t>(k), r.iou_curve.size()) - 1;
            rep.miou_at_k[static_cast<std::size_t>(k) - 1] += r.iou_curve[idx];
        }
        for (auto& h : rep.histograms) {
            const auto idx = std::min(static_cast<std::size_t>(h.clicks), r.iou_curve.size()) - 1;
            const int bin = std::clamp(static_cast<int>(r.iou_curve[idx] * 10.0), 0, 9);
            ++h.counts[static_cast<std::size_t>(bin)];
        }
    }
    if (rep.instances == 0) throw std::invalid_argument("aggregate: no usable evaluation record");
    for (auto& v : rep.mean_noc) v /= rep.instances;
    for (auto& v : rep.miou_at_k) v /= rep.instances;
    return rep;
}

EvaluationReport evaluate_dataset(const PredictFn& predict, const std::vector<InstanceRecord>& data,
                                  const EvalProtocol& protocol, const std::string& dataset) {
    std::vector<EvaluationRecord> records;
    records.reserve(data.size());
    for (const auto& rec : data) records.push_back(evaluate_instance(predict, rec.image, rec.gt_mask, protocol, rec.instance_id));
    return aggregate(records, protocol, dataset);
}

double EvaluationReport::noc_at(double target) const {
    for (std::size_t i = 0; i < protocol.targets.size(); ++i) {
        if (std::abs(protocol.targets[i] - target) < kTargetMatch) return mean_noc.at(i);
    }
    throw std::invalid_argument("target " + format_number(target) + " is not part of the report");
}

nlohmann::json EvaluationReport::to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset;
    j["protocol"] = {{"budget", protocol.budget},
                     {"targets", protocol.targets},
                     {"threshold", protocol.threshold},
                     {"stop_when_reached", protocol.stop_when_reached}};
    j["instances"] = instances;
    j["errored"] = errored;
    nlohmann::json noc = nlohmann::json::object();
    for (std::size_t t = 0; t < protocol.targets.size(); ++t) {
        const auto key = std::to_string(static_cast<int>(std::lround(protocol.targets[t] * 100)));
        noc[key] = {{"mean", mean_noc[t]}, {"failures", failures[t]}};
    }
    j["noc"] = noc;
    j["miou_at_k"] = miou_at_k;
    j["histograms"] = nlohmann::json::array();
    for (const auto& h : histograms) j["histograms"].push_back({{"clicks", h.clicks}, {"counts", h.counts}});
    j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json jr = {{"instance_id", r.instance_id},
                             {"iou_curve", r.iou_curve},
                             {"noc", r.noc},
                             {"clicks", clicks_to_json(r.clicks)},
                             {"errored", r.errored}};
        jr["failed_at"] = r.failed_at ? nlohmann::json(*r.failed_at) : nlohmann::json(nullptr);
        if (r.errored) jr["error"] = r.error;
        j["records"].push_back(std::move(jr));
    }
    return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
    EvaluationReport rep;
    rep.dataset = j.value("dataset", "");
    const auto& p = j.at("protocol");
    rep.protocol.budget = p.at("budget").get<int>();
    rep.protocol.targets = p.at("targets").get<std::vector<double>>();
    rep.protocol.threshold = p.value("threshold", 0.5);
    rep.protocol.stop_when_reached = p.value("stop_when_reached", true);
    rep.instances = j.at("instances").get<int>();
    rep.errored = j.value("errored", 0);
    for (double t : rep.protocol.targets) {
        const auto& entry = j.at("noc").at(std::to_string(static_cast<int>(std::lround(t * 100))));
        rep.mean_noc.push_back(entry.at("mean").get<double>());
        rep.failures.push_back(entry.at("failures").get<int>());
    }
    rep.miou_at_k = j.at("miou_at_k").get<std::vector<double>>();
    for (const auto& h : j.value("histograms", nlohmann::json::array())) {
        rep.histograms.push_back({h.at("clicks").get<int>(), h.at("counts").get<std::vector<int>>()});
    }
    for (const auto& jr : j.value("records", nlohmann::json::array())) {
        EvaluationRecord r;
        r.instance_id = jr.at("instance_id").get<std::string>();
        r.iou_curve = jr.at("iou_curve").get<std::vector<double>>();
        r.noc = jr.at("noc").get<std::vector<int>>();
        r.clicks = clicks_from_json(jr.at("clicks"));
        r.errored = jr.value("errored", false);
        r.error = jr.value("error", "");
        if (!jr.at("failed_at").is_null()) r.failed_at = jr.at("failed_at").get<double>();
        rep.records.push_back(std::move(r));
    }
    return rep;
}

std::string EvaluationReport::per_instance_csv() const {
    std::ostringstream os;
    os << "instance_id";
    for (double t : protocol.targets) os << ",noc" << std::lround(t * 100);
    os << ",failed_at,errored";
    for (int k = 1; k <= protocol.budget; ++k) os << ",iou@" << k;
    os << "\n";
    for (const auto& r : records) {
        os << r.instance_id;
        for (int n : r.noc) os << "," << n;
        os << "," << (r.failed_at ? format_number(*r.failed_at) : "") << "," << (r.errored ? 1 : 0);
        for (int k = 1; k <= protocol.budget; ++k) {
            os << ",";
            if (static_cast<std::size_t>(k) <= r.iou_curve.size()) os << format_number(r.iou_curve[static_cast<std::size_t>(k) - 1]);
        }
        os << "\n";
    }
    return os.str();
}

std::string EvaluationReport::miou_csv() const {
    std::ostringstream os;
    os << "k,miou\n";
    for (std::size_t k = 0; k < miou_at_k.size(); ++k) os << k + 1 << "," << format_number(miou_at_k[k]) << "\n";
    return os.str();
}

void write_report(const EvaluationReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.json") << report.to_json().dump(2) << "\n";
    std::ofstream(dir / "per_instance.csv") << report.per_instance_csv();
    std::ofstream(dir / "miou.csv") << report.miou_csv();
}

std::int64_t forward_flops(const ModelConfig& cfg) {
    cfg.validate();
    const auto& b = cfg.backbone;
    const std::int64_t c0 = b.embed_dim;
    const std::int64_t p = b.patch_size;
    const std::int64_t gh = b.input_size.height / p;
    const std::int64_t gw = b.input_size.width / p;
    const std::int64_t t = gh * gw;
    const auto hidden = static_cast<std::int64_t>(std::llround(c0 * b.mlp_ratio));

    std::int64_t macs = 2 * t * c0 * 3 * p * p;  // image + guidance patch embeddings
    const std::int64_t linear = t * (4 * c0 * c0 + 2 * c0 * hidden);
    const auto n_global = static_cast<std::int64_t>(b.global_block_indices.size());
    const std::int64_t win_tokens = std::int64_t{b.window_size} * b.window_size;
    const std::int64_t attn_global = 2 * t * t * c0;
    const std::int64_t attn_window = 2 * t * win_tokens * c0;
    macs += b.depth * linear + n_global * attn_global + (b.depth - n_global) * attn_window;

    const std::int64_t c1 = cfg.c1;
    const std::int64_t c2 = cfg.c2;
    const std::int64_t ch[4] = {c1, 2 * c1, 4 * c1, 8 * c1};
    std::int64_t level_tokens[4];
    if (cfg.neck == NeckKind::single_scale) {
        for (int i = 0; i < 4; ++i) {
            macs += t * c0 * ch[i];
            level_tokens[i] = t;
        }
    } else {
        const std::int64_t d4 = std::max(2 * c1, c0 / 2);
        const std::int64_t d8 = std::max(2 * c1, c0 / 2);
        const std::int64_t d32 = std::max(8 * c1, 2 * c0);
        macs += 4 * t * c0 * d4 + 16 * t * d4 * (d4 / 2) + 16 * t * (d4 / 2) * ch[0];
        macs += 4 * t * c0 * d8 + 4 * t * d8 * ch[1];
        macs += t * c0 * ch[2];
        macs += (t / 4) * 4 * c0 * d32 + (t / 4) * d32 * ch[3];
        level_tokens[0] = 16 * t;
        level_tokens[1] = 4 * t;
        level_tokens[2] = t;
        level_tokens[3] = t / 4;
    }
    const std::int64_t head_tokens = 16 * t;
    for (int i = 0; i < 4; ++i) macs += level_tokens[i] * ch[i] * c2;
    macs += head_tokens * 4 * c2 * c2 + head_tokens * c2;
    return 2 * macs;
}

ComputeBudget compute_budget(ClickSegModel model, int timed_clicks, int warmup) {
    ComputeBudget out;
    out.params = model->parameter_breakdown().total();
    out.flops = forward_flops(model->config());
    if (timed_clicks <= 0) return out;

    const int saved_threads = torch::get_num_threads();
    torch::set_num_threads(1);
    const auto size = model->config().input_size();
    RgbImage image(size.height, size.width, 128);
    for (std::size_t i = 0; i < image.data().size(); ++i) image.data()[i] = static_cast<std::uint8_t>((i * 37) % 251);
    BinaryMask prev(size);
    Predictor predictor(model);
    std::vector<double> times;
    std::vector<Click> clicks;
    for (int k = 0; k < warmup + timed_clicks; ++k) {
        clicks.push_back({(k * 13) % size.height, (k * 29) % size.width,
                          k % 3 == 2 ? Polarity::negative : Polarity::positive, k});
        const auto t0 = std::chrono::steady_clock::now();
        prev = binarize(predictor.predict(image, clicks, prev));
        const auto t1 = std::chrono::steady_clock::now();
        if (k >= warmup) times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    torch::set_num_threads(saved_threads);
    std::sort(times.begin(), times.end());
    const auto m = times.size();
    out.seconds_per_click = m % 2 == 1 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
    out.timed_clicks = timed_clicks;
    return out;
}

namespace {

constexpr double kW = 640;
constexpr double kH = 400;
constexpr double kLeft = 60;
constexpr double kRight = 150;
constexpr double kTop = 30;
constexpr double kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

void svg_axes(std::ostringstream& os, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kW / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">"
       << svg_escape(xlabel) << "</text>\n";
    os << "<text x=\"15\" y=\"" << (kTop + kH - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
       << (kTop + kH - kBottom) / 2 << ")\">" << svg_escape(ylabel) << "</text>\n";
}

}  // namespace

std::string miou_svg(const std::vector<std::pair<std::string, EvaluationReport>>& reports) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    svg_axes(os, "mIoU@k", "clicks", "mIoU");
    int kmax = 1;
    for (const auto& [label, r] : reports) kmax = std::max(kmax, static_cast<int>(r.miou_at_k.size()));
    const double pw = kW - kLeft - kRight;
    const double ph = kH - kTop - kBottom;
    auto x_of = [&](int k) { return kLeft + (kmax == 1 ? 0.0 : pw * (k - 1) / (kmax - 1)); };
    auto y_of = [&](double v) { return kTop + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
    for (int i = 0; i <= 10; i += 2) {
        const double v = i / 10.0;
        os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y_of(v) << "\" x2=\"" << kW - kRight << "\" y2=\"" << y_of(v)
           << "\" stroke=\"#ddd\"/>\n<text x=\"" << kLeft - 8 << "\" y=\"" << y_of(v) + 4 << "\" text-anchor=\"end\">"
           << v << "</text>\n";
    }
    for (int k = 1; k <= kmax; ++k) {
        if (k == 1 || k % 5 == 0) {
            os << "<text x=\"" << x_of(k) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">" << k
               << "</text>\n";
        }
    }
    for (std::size_t s = 0; s < reports.size(); ++s) {
        const auto* color = kPalette[s % std::size(kPalette)];
        const auto& curve = reports[s].second.miou_at_k;
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t k = 0; k < curve.size(); ++k) os << x_of(static_cast<int>(k) + 1) << "," << y_of(curve[k]) << " ";
        os << "\"/>\n";
        const double ly = kTop + 16 + 18 * static_cast<double>(s);
        os << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 30 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n<text x=\"" << kW - kRight + 36 << "\" y=\"" << ly + 4
           << "\">" << svg_escape(reports[s].first) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string histogram_svg(const EvaluationReport& report, int clicks) {
    const auto it = std::find_if(report.histograms.begin(), report.histograms.end(),
                                 [&](const IouHistogram& h) { return h.clicks == clicks; });
    if (it == report.histograms.end()) {
        throw std::invalid_argument("report has no histogram for " + std::to_string(clicks) + " clicks");
    }
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    svg_axes(os, "IoU after " + std::to_string(clicks) + " clicks", "IoU", "instances");
    const int peak = std::max(1, *std::max_element(it->counts.begin(), it->counts.end()));
    const double pw = kW - kLeft - kRight;
    const double ph = kH - kTop - kBottom;
    const double bw = pw / 10.0;
    for (int b = 0; b < 10; ++b) {
        const double h = ph * it->counts[static_cast<std::size_t>(b)] / peak;
        const double x = kLeft + bw * b;
        os << "<rect x=\"" << x + 2 << "\" y=\"" << kTop + ph - h << "\" width=\"" << bw - 4 << "\" height=\"" << h
           << "\" fill=\"" << kPalette[0] << "\"/>\n";
        os << "<text x=\"" << x + bw / 2 << "\" y=\"" << kTop + ph - h - 4 << "\" text-anchor=\"middle\">"
           << it->counts[static_cast<std::size_t>(b)] << "</text>\n";
        os << "<text x=\"" << x << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">" << b / 10.0
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace vitclick
