#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vitclick/annotation_service.hpp"
#include "vitclick/click_sim.hpp"
#include "vitclick/data_io.hpp"
#include "vitclick/evaluation.hpp"
#include "vitclick/training.hpp"

namespace py = pybind11;
using namespace vitclick;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

BinaryMask to_mask(const U8Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("mask must be 2-D");
    BinaryMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    const auto* p = a.data();
    for (std::size_t i = 0; i < m.data().size(); ++i) m.data()[i] = p[i] != 0 ? 1 : 0;
    return m;
}

U8Array from_mask(const BinaryMask& m) {
    U8Array out({m.height(), m.width()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

RgbImage to_image(const U8Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("image must be HxWx3 uint8");
    RgbImage im(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), im.data().begin());
    return im;
}

U8Array from_image(const RgbImage& im) {
    U8Array out({im.height(), im.width(), 3});
    std::copy(im.data().begin(), im.data().end(), out.mutable_data());
    return out;
}

F32Array from_probs(const ProbabilityMap& p) {
    F32Array out({p.height(), p.width()});
    std::copy(p.data().begin(), p.data().end(), out.mutable_data());
    return out;
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_vitclick, m) {
    m.doc() = "Click-guided ViT segmentation";

    py::enum_<Polarity>(m, "Polarity").value("positive", Polarity::positive).value("negative", Polarity::negative);

    py::class_<Click>(m, "Click")
        .def(py::init<int, int, Polarity, int>(), py::arg("row"), py::arg("col"),
             py::arg("polarity") = Polarity::positive, py::arg("ordinal") = 0)
        .def_readwrite("row", &Click::row)
        .def_readwrite("col", &Click::col)
        .def_readwrite("polarity", &Click::polarity)
        .def_readwrite("ordinal", &Click::ordinal)
        .def("__eq__", [](const Click& a, const Click& b) { return a == b; })
        .def("__repr__", [](const Click& c) {
            return "Click(" + std::to_string(c.row) + ", " + std::to_string(c.col) + ", " + to_string(c.polarity) +
                   ", " + std::to_string(c.ordinal) + ")";
        });

    m.def(
        "next_eval_click",
        [](const U8Array& pred, const U8Array& gt, int ordinal, const std::vector<Click>& prior, int radius) {
            return next_eval_click(to_mask(pred), to_mask(gt), ordinal, {prior, radius});
        },
        py::arg("pred"), py::arg("gt"), py::arg("ordinal") = 0, py::arg("prior") = std::vector<Click>{},
        py::arg("radius") = 0, "Next automatic evaluation click, or None once pred equals gt.");

    m.def(
        "sample_random_clicks",
        [](const U8Array& gt, int budget, std::uint64_t seed) {
            return sample_random_clicks(to_mask(gt), budget, seed).clicks;
        },
        py::arg("gt"), py::arg("budget"), py::arg("seed") = 0);

    m.def(
        "nfl_loss",
        [](const F32Array& logits, const F32Array& gt, double gamma) {
            auto opts = torch::TensorOptions().dtype(torch::kFloat32);
            std::vector<std::int64_t> shape(logits.shape(), logits.shape() + logits.ndim());
            auto x = torch::from_blob(const_cast<float*>(logits.data()), shape, opts).clone();
            auto y = torch::from_blob(const_cast<float*>(gt.data()), shape, opts).clone();
            return nfl_loss(x, y, gamma).item<double>();
        },
        py::arg("logits"), py::arg("gt"), py::arg("gamma") = 2.0);

    m.def("encode_rle", [](const U8Array& mask) { return to_py(encode_rle(to_mask(mask))); });
    m.def("decode_rle", [](const py::object& rle) { return from_mask(decode_rle(from_py(rle))); });

    m.def(
        "synth_benchmark",
        [](std::uint64_t seed, int n, bool convex_only) {
            SynthConfig cfg;
            cfg.convex_only = convex_only;
            py::list out;
            for (const auto& r : synth_benchmark(seed, n, cfg)) {
                out.append(py::make_tuple(r.instance_id, from_image(r.image), from_mask(r.gt_mask)));
            }
            return out;
        },
        py::arg("seed"), py::arg("n"), py::arg("convex_only") = false);

    m.def("forward_flops", [](const std::string& preset, int input_size) {
        return forward_flops(ModelConfig::preset(preset, input_size));
    });

    py::class_<Predictor, std::shared_ptr<Predictor>>(m, "Model")
        .def_static(
            "build",
            [](const std::string& preset, std::uint64_t seed) {
                return std::make_shared<Predictor>(build_model(ModelConfig::preset(preset), seed));
            },
            py::arg("preset") = "xtiny_desk", py::arg("seed") = 0)
        .def_static("load", [](const std::string& path) { return std::make_shared<Predictor>(load_model(path)); })
        .def("save", [](const Predictor& p, const std::string& path) {
            auto model = p.model();
            save_model(path, model);
        })
        .def_property_readonly("config", [](const Predictor& p) { return to_py(p.config().to_json()); })
        .def("parameter_counts",
             [](const Predictor& p) {
                 const auto b = p.model()->parameter_breakdown();
                 py::dict d;
                 d["backbone"] = b.backbone;
                 d["guidance_embed"] = b.guidance_embed;
                 d["neck"] = b.neck;
                 d["head"] = b.head;
                 d["total"] = b.total();
                 return d;
             })
        .def(
            "predict",
            [](const Predictor& p, const U8Array& image, const std::vector<Click>& clicks, py::object prev) {
                const auto im = to_image(image);
                const auto prev_mask = prev.is_none() ? BinaryMask(im.size()) : to_mask(prev.cast<U8Array>());
                ProbabilityMap out;
                {
                    py::gil_scoped_release release;
                    out = p.predict(im, clicks, prev_mask);
                }
                return from_probs(out);
            },
            py::arg("image"), py::arg("clicks"), py::arg("prev_mask") = py::none())
        .def(
            "evaluate",
            [](const Predictor& p, const std::string& root, int budget, const std::vector<double>& targets) {
                EvalProtocol protocol;
                protocol.budget = budget;
                protocol.targets = targets;
                std::vector<InstanceRecord> data;
                if (root.empty()) {
                    data = synth_benchmark(1000, 20);
                } else {
                    data = load_dataset(root, detect_format(root)).records;
                }
                EvaluationReport report;
                {
                    py::gil_scoped_release release;
                    report = evaluate_dataset(p.as_function(), data, protocol, root);
                }
                return to_py(report.to_json());
            },
            py::arg("dataset") = "", py::arg("budget") = 20, py::arg("targets") = std::vector<double>{0.85, 0.90});

    m.def(
        "train",
        [](const py::object& overrides) {
            auto cfg = TrainingConfig::from_flat_json(from_py(overrides));
            auto data = training_data(cfg);
            py::gil_scoped_release release;
            Trainer trainer(cfg, std::move(data));
            trainer.fit();
            return std::make_shared<Predictor>(trainer.model());
        },
        py::arg("config"), "Trains from a flat dotted-key config dict and returns the model.");
}
