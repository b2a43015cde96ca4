// vitclick command-line tool: train, evaluate, serve, bench, plot, synth.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vitclick/annotation_service.hpp"
#include "vitclick/data_io.hpp"
#include "vitclick/evaluation.hpp"
#include "vitclick/training.hpp"

namespace fs = std::filesystem;
using namespace vitclick;

namespace {

std::vector<double> parse_targets(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double v = std::stod(item);
        if (v > 1.0) v /= 100.0;
        out.push_back(v);
    }
    return out;
}

// "synth:<seed>:<n>[:convex]" or a directory.
std::vector<InstanceRecord> load_records(const std::string& source, const std::string& format, int image_size) {
    if (source.rfind("synth:", 0) == 0) {
        std::stringstream ss(source.substr(6));
        std::string seed;
        std::string n;
        std::string flag;
        std::getline(ss, seed, ':');
        std::getline(ss, n, ':');
        std::getline(ss, flag, ':');
        SynthConfig sc;
        sc.image_size = image_size;
        sc.convex_only = flag == "convex";
        return synth_benchmark(std::stoull(seed), std::stoi(n), sc);
    }
    const auto fmt = format.empty() ? detect_format(source) : dataset_format_from_string(format);
    auto loaded = load_dataset(source, fmt);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    return std::move(loaded.records);
}

std::function<void()> g_stop;

void on_signal(int) {
    if (g_stop) g_stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ViT click-based interactive segmentation"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train a model from a flat JSON config");
    std::string config_path;
    std::string resume;
    std::string output_dir;
    train->add_option("--config", config_path, "Config file (flat dotted keys)")->required()->check(CLI::ExistingFile);
    train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
    train->add_option("--output", output_dir, "Override train.output_dir");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "NoC / mIoU evaluation with the automatic clicker");
    std::string model_path;
    std::string dataset;
    std::string dataset_format;
    int budget = 20;
    std::string targets = "85,90";
    std::string report_dir;
    int threads = 0;
    evaluate->add_option("--model", model_path, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--dataset", dataset, "Dataset directory or synth:<seed>:<n>[:convex]")->required();
    evaluate->add_option("--format", dataset_format, "grabcut | sbd_like | coco_like | generic_pairs (default: detect)");
    evaluate->add_option("--budget", budget, "Click budget")->check(CLI::PositiveNumber);
    evaluate->add_option("--targets", targets, "Comma-separated IoU targets, percent or fraction");
    evaluate->add_option("--report", report_dir, "Write report.json and CSVs here");
    evaluate->add_option("--threads", threads, "Torch intra-op threads (0 = default)");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP annotation service");
    std::string serve_model;
    int port = 8080;
    std::string host = "0.0.0.0";
    std::string static_dir;
    std::string model_id = "default";
    serve->add_option("--model", serve_model, "Model checkpoint")->envname("VITCLICK_MODEL")->required();
    serve->add_option("--port", port, "Port")->envname("VITCLICK_PORT");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--static", static_dir, "UI bundle directory to mount at /")->envname("VITCLICK_STATIC");
    serve->add_option("--model-id", model_id, "Id the model is registered under");

    // bench
    auto* bench = app.add_subcommand("bench", "Parameter, FLOP and latency accounting");
    std::string bench_preset = "vit_xtiny";
    int bench_size = 0;
    std::string bench_model;
    int bench_clicks = 20;
    bench->add_option("--preset", bench_preset, "vit_b | vit_l | vit_h | vit_xtiny | xtiny_desk");
    bench->add_option("--input-size", bench_size, "Square input size (default: preset)");
    bench->add_option("--model", bench_model, "Use a checkpoint instead of a preset")->check(CLI::ExistingFile);
    bench->add_option("--clicks", bench_clicks, "Timed clicks (0 skips timing)");

    // plot
    auto* plot = app.add_subcommand("plot", "Render mIoU@k curves and IoU histograms as SVG");
    std::vector<std::string> reports;
    std::string plot_out = "plots";
    plot->add_option("--report", reports, "report.json[=label], repeatable")->required();
    plot->add_option("--out", plot_out, "Output directory");

    // synth
    auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark as a generic_pairs tree");
    std::uint64_t synth_seed = 0;
    int synth_n = 200;
    int synth_size = 128;
    bool synth_convex = false;
    std::string synth_out;
    synth->add_option("--seed", synth_seed);
    synth->add_option("--n", synth_n)->check(CLI::PositiveNumber);
    synth->add_option("--size", synth_size);
    synth->add_flag("--convex", synth_convex, "Squares and ellipses only");
    synth->add_option("--out", synth_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            auto cfg = TrainingConfig::load(config_path);
            if (!output_dir.empty()) cfg.output_dir = output_dir;
            Trainer trainer(cfg, training_data(cfg));
            if (!resume.empty()) {
                trainer.load_checkpoint(resume);
                std::cerr << "resumed at epoch " << trainer.epoch() << "\n";
            }
            trainer.fit([](int epoch, double loss) { std::cerr << "epoch " << epoch << " mean loss " << loss << "\n"; });
            std::cout << (fs::path(cfg.output_dir) / "checkpoint.pt").string() << "\n";
        } else if (*evaluate) {
            if (threads > 0) torch::set_num_threads(threads);
            auto model = load_model(model_path);
            EvalProtocol protocol;
            protocol.budget = budget;
            protocol.targets = parse_targets(targets);
            const auto data = load_records(dataset, dataset_format, model->config().input_size().height);
            if (data.empty()) throw std::runtime_error("dataset has no usable instances");
            Predictor predictor(model);
            const auto report = evaluate_dataset(predictor.as_function(), data, protocol, dataset);
            for (std::size_t t = 0; t < protocol.targets.size(); ++t) {
                std::cout << "NoC@" << std::lround(protocol.targets[t] * 100) << " " << report.mean_noc[t]
                          << " (failures " << report.failures[t] << "/" << report.instances << ")\n";
            }
            for (int k : {1, 3, 5, 10, 20}) {
                if (k <= budget) std::cout << "mIoU@" << k << " " << report.miou_at_k[static_cast<std::size_t>(k) - 1] << "\n";
            }
            if (report.errored > 0) std::cout << "errored " << report.errored << "\n";
            if (!report_dir.empty()) write_report(report, report_dir);
        } else if (*serve) {
            auto registry = std::make_shared<ModelRegistry>();
            registry->add(model_id, load_model(serve_model));
            auto sessions = std::make_shared<SessionManager>(registry);
            AnnotationServer server(sessions, {host, port, static_dir});
            g_stop = [&server] { server.stop(); };
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "serving " << serve_model << " as '" << model_id << "' on " << host << ":" << port << "\n";
            if (!server.listen()) {
                std::cerr << "cannot bind " << host << ":" << port << "\n";
                return 1;
            }
        } else if (*bench) {
            ClickSegModel model{nullptr};
            if (!bench_model.empty()) {
                model = load_model(bench_model);
            } else {
                model = build_model(bench_size > 0 ? ModelConfig::preset(bench_preset, bench_size)
                                                   : ModelConfig::preset(bench_preset));
            }
            const auto b = model->parameter_breakdown();
            const auto budget_info = compute_budget(model, bench_clicks);
            const auto& cfg = model->config();
            std::cout << "model " << cfg.name << " @" << cfg.input_size().height << "x" << cfg.input_size().width << "\n"
                      << "params " << budget_info.params << " (backbone share " << b.backbone_share() << ")\n"
                      << "flops " << budget_info.flops << " (" << budget_info.flops / 1e9 << " G)\n";
            if (budget_info.timed_clicks > 0) {
                std::cout << "seconds_per_click " << budget_info.seconds_per_click << " (median of "
                          << budget_info.timed_clicks << ", 1 thread)\n";
            }
        } else if (*plot) {
            std::vector<std::pair<std::string, EvaluationReport>> loaded;
            for (const auto& arg : reports) {
                const auto eq = arg.find('=');
                const auto path = arg.substr(0, eq);
                const auto label = eq == std::string::npos ? fs::path(path).parent_path().filename().string() : arg.substr(eq + 1);
                std::ifstream in(path);
                if (!in) throw std::runtime_error("cannot open " + path);
                loaded.emplace_back(label, EvaluationReport::from_json(nlohmann::json::parse(in)));
            }
            fs::create_directories(plot_out);
            std::ofstream(fs::path(plot_out) / "miou.svg") << miou_svg(loaded);
            for (const auto& [label, rep] : loaded) {
                for (const auto& h : rep.histograms) {
                    std::ofstream(fs::path(plot_out) / (label + "_iou_at_" + std::to_string(h.clicks) + ".svg"))
                        << histogram_svg(rep, h.clicks);
                }
            }
            std::cout << plot_out << "\n";
        } else if (*synth) {
            SynthConfig sc;
            sc.image_size = synth_size;
            sc.convex_only = synth_convex;
            export_generic_pairs(synth_benchmark(synth_seed, synth_n, sc), synth_out);
            std::cout << synth_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
