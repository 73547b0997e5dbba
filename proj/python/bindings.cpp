#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aosa/errors.hpp"
#include "aosa/external_model.hpp"
#include "aosa/metrics.hpp"
#include "aosa/model.hpp"
#include "aosa/saliency.hpp"
#include "aosa/synthetic.hpp"
#include "aosa/tensor.hpp"

namespace py = pybind11;
using namespace aosa;

namespace {

VideoTensor video_from_array(const py::array& arr) {
    auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a) throw ValidationError("video must be a float-convertible array");
    if (a.ndim() == 3) {
        VideoTensor v(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                      static_cast<int>(a.shape(2)), 1);
        std::copy(a.data(), a.data() + a.size(), v.data.begin());
        return v;
    }
    if (a.ndim() == 4) {
        VideoTensor v(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                      static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3)));
        std::copy(a.data(), a.data() + a.size(), v.data.begin());
        return v;
    }
    throw ValidationError("video array must have shape (T, H, W) or (T, H, W, C)");
}

py::array_t<float> video_to_array(const VideoTensor& v) {
    py::array_t<float> a({v.T, v.H, v.W, v.C});
    std::copy(v.data.begin(), v.data.end(), a.mutable_data());
    return a;
}

py::array_t<double> map_to_array(const SaliencyMap& m) {
    py::array_t<double> a({m.T, m.H, m.W});
    std::copy(m.data.begin(), m.data.end(), a.mutable_data());
    return a;
}

SaliencyMap map_from_array(const py::array& arr) {
    auto a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() != 3) throw ValidationError("saliency map array must have shape (T, H, W)");
    SaliencyMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                  static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

// Adapts an arbitrary Python callable (video array -> per-class scores) to the
// ScoreModel interface. Gradients are unavailable, so only the exact method
// works with it.
class CallableModel : public ScoreModel {
public:
    explicit CallableModel(py::function fn) : fn_(std::move(fn)) {}

    int num_classes() const override { return classes_; }
    Dims4 expected_dims() const override { return {}; }

protected:
    std::vector<double> score_impl(const VideoTensor& v) override {
        py::gil_scoped_acquire gil;
        py::object out = fn_(video_to_array(v));
        auto scores = out.cast<std::vector<double>>();
        if (scores.empty()) throw ModelError("callable model returned no scores");
        if (classes_ == 0) classes_ = static_cast<int>(scores.size());
        if (static_cast<int>(scores.size()) != classes_)
            throw ModelError("callable model changed its class count");
        return scores;
    }

    GradTensor gradient_impl(const VideoTensor&, int) override {
        throw ModelError("callable models expose no gradient; use method='exact'");
    }

private:
    py::function fn_;
    int classes_ = 0;
};

SaliencyConfig make_config(const std::string& method, const std::string& fill,
                           double fill_value, int s, int occ_h, int occ_w, int K, int target,
                           const std::string& score, bool normalize_coverage, int mc_samples,
                           std::uint64_t seed, bool adjust) {
    SaliencyConfig cfg;
    if (method == "exact")
        cfg.method = SaliencyConfig::Method::Exact;
    else if (method == "approx")
        cfg.method = SaliencyConfig::Method::Approx;
    else
        throw ValidationError("unknown method: " + method);
    if (fill == "const" || fill == "constant")
        cfg.fill = SaliencyConfig::Fill::Constant;
    else if (fill == "cond" || fill == "conditional")
        cfg.fill = SaliencyConfig::Fill::Conditional;
    else
        throw ValidationError("unknown fill: " + fill);
    cfg.fill_value = fill_value;
    cfg.mask.s = s;
    cfg.mask.occ_h = occ_h;
    cfg.mask.occ_w = occ_w;
    cfg.mask.K = K;
    cfg.target_class = target;
    cfg.score_mode = score_mode_from_name(score);
    cfg.normalize_coverage = normalize_coverage;
    cfg.mc_samples = mc_samples;
    cfg.seed = seed;
    cfg.adjust = adjust;
    return cfg;
}

py::dict result_to_dict(const SaliencyResult& r) {
    py::dict d;
    d["map"] = map_to_array(r.map);
    py::dict meta;
    for (const auto& [k, v] : r.map.meta) meta[py::str(k)] = v;
    d["meta"] = meta;
    d["target"] = r.target_class;
    d["base_score"] = r.base_score;
    d["forwards"] = r.forwards;
    d["backwards"] = r.backwards;
    py::list records;
    for (const auto& rec : r.records) {
        py::dict e;
        e["mask_id"] = rec.mask_id;
        e["score"] = rec.score;
        e["difference"] = rec.difference;
        e["adjusted"] = rec.adjusted;
        records.append(e);
    }
    d["records"] = records;
    return d;
}

ScoreModel& resolve_model(const py::object& model, std::unique_ptr<CallableModel>& owned) {
    if (py::isinstance<ScoreModel>(model)) return model.cast<ScoreModel&>();
    if (py::isinstance<py::function>(model)) {
        owned = std::make_unique<CallableModel>(model.cast<py::function>());
        return *owned;
    }
    throw ValidationError("model must be a Tiny3DCNN, ExternalModel, or callable");
}

py::dict curve_to_dict(const DeletionInsertionResult& r) {
    py::dict d;
    d["mode"] = r.mode == DeletionInsertionResult::Mode::Deletion ? "deletion" : "insertion";
    d["steps"] = r.steps;
    d["baseline"] = r.baseline;
    d["curve"] = r.curve;
    d["auc"] = r.auc;
    return d;
}

GroundTruthBoxes boxes_from_py(const py::object& boxes) {
    GroundTruthBoxes gt;
    for (const auto& item : boxes.cast<py::list>()) {
        if (item.is_none()) {
            gt.per_frame.push_back(std::nullopt);
            continue;
        }
        auto t = item.cast<std::vector<int>>();
        if (t.size() != 4) throw ValidationError("box must be (top, left, height, width)");
        gt.per_frame.push_back(Box{t[0], t[1], t[2], t[3]});
    }
    return gt;
}

}  // namespace

PYBIND11_MODULE(_aosa, mod) {
    mod.doc() = "Flow-adaptive occlusion saliency for video classifiers";

    py::register_exception<ValidationError>(mod, "ValidationError", PyExc_ValueError);
    py::register_exception<IoError>(mod, "IoError", PyExc_OSError);
    py::register_exception<ModelError>(mod, "ModelError", PyExc_RuntimeError);
    py::register_exception<ProtocolError>(mod, "ProtocolError", PyExc_RuntimeError);

    py::class_<ScoreModel>(mod, "ScoreModel")
        .def_property_readonly("num_classes", &ScoreModel::num_classes)
        .def_property("score_mode",
                      [](const ScoreModel& m) { return score_mode_name(m.mode()); },
                      [](ScoreModel& m, const std::string& s) {
                          m.set_mode(score_mode_from_name(s));
                      })
        .def("forward",
             [](ScoreModel& m, const py::array& video) {
                 return m.forward(video_from_array(video));
             })
        .def("argmax_class",
             [](ScoreModel& m, const py::array& video) {
                 return m.argmax_class(video_from_array(video));
             })
        .def_property_readonly("forwards",
                               [](const ScoreModel& m) { return m.counter().forwards(); })
        .def_property_readonly("backwards",
                               [](const ScoreModel& m) { return m.counter().backwards(); })
        .def("reset_counter", [](ScoreModel& m) { m.counter().reset(); });

    py::class_<Tiny3DCNN, ScoreModel>(mod, "Tiny3DCNN")
        .def(py::init<int, int, std::uint64_t>(), py::arg("in_channels"),
             py::arg("n_classes"), py::arg("seed"))
        .def("save", &Tiny3DCNN::save, py::arg("path"))
        .def_static("load", &Tiny3DCNN::load, py::arg("path"));

    py::class_<ExternalModel, ScoreModel>(mod, "ExternalModel")
        .def(py::init<std::vector<std::string>, int>(), py::arg("argv"),
             py::arg("timeout_ms") = 10000);

    mod.def(
        "train_toy",
        [](const std::vector<std::pair<py::array, int>>& data, int n_classes, double lr,
           int epochs, int batch, std::uint64_t seed) {
            std::vector<std::pair<VideoTensor, int>> ds;
            ds.reserve(data.size());
            for (const auto& [arr, label] : data)
                ds.emplace_back(video_from_array(arr), label);
            TrainHyper h;
            h.lr = lr;
            h.epochs = epochs;
            h.batch = batch;
            h.seed = seed;
            TrainResult r = train_toy(ds, n_classes, h);
            py::dict d;
            d["model"] = py::cast(std::move(r.model));
            d["loss_trace"] = r.loss_trace;
            d["train_accuracy"] = r.train_accuracy;
            return d;
        },
        py::arg("data"), py::arg("n_classes"), py::arg("lr") = 0.01, py::arg("epochs") = 20,
        py::arg("batch") = 8, py::arg("seed") = 0);

    mod.def(
        "compute_map",
        [](const py::array& video, const py::object& model, const std::string& method,
           const std::string& fill, double fill_value, int s, int occ_h, int occ_w, int K,
           int target, const std::string& score, bool normalize_coverage, int mc_samples,
           std::uint64_t seed, bool adjust) {
            const VideoTensor v = video_from_array(video);
            const SaliencyConfig cfg =
                make_config(method, fill, fill_value, s, occ_h, occ_w, K, target, score,
                            normalize_coverage, mc_samples, seed, adjust);
            std::unique_ptr<CallableModel> owned;
            ScoreModel& m = resolve_model(model, owned);
            const SaliencyResult r = cfg.method == SaliencyConfig::Method::Exact
                                         ? aosa_map(v, m, cfg)
                                         : approx_map(v, m, cfg);
            return result_to_dict(r);
        },
        py::arg("video"), py::arg("model"), py::kw_only(), py::arg("method") = "exact",
        py::arg("fill") = "const", py::arg("fill_value") = 0.0, py::arg("s") = 8,
        py::arg("occ_h") = 16, py::arg("occ_w") = 16, py::arg("K") = 5,
        py::arg("target") = -1, py::arg("score") = "prob",
        py::arg("normalize_coverage") = false, py::arg("mc_samples") = 1,
        py::arg("seed") = 0, py::arg("adjust") = true);

    mod.def(
        "deletion_auc",
        [](const py::array& video, const py::array& smap, const py::object& model, int target,
           int steps, double baseline) {
            std::unique_ptr<CallableModel> owned;
            ScoreModel& m = resolve_model(model, owned);
            return curve_to_dict(deletion_auc(video_from_array(video), map_from_array(smap), m,
                                              target, steps, baseline));
        },
        py::arg("video"), py::arg("map"), py::arg("model"), py::arg("target"),
        py::arg("steps") = kDefaultCurveSteps, py::arg("baseline") = 0.0);

    mod.def(
        "insertion_auc",
        [](const py::array& video, const py::array& smap, const py::object& model, int target,
           int steps, double baseline) {
            std::unique_ptr<CallableModel> owned;
            ScoreModel& m = resolve_model(model, owned);
            return curve_to_dict(insertion_auc(video_from_array(video), map_from_array(smap), m,
                                               target, steps, baseline));
        },
        py::arg("video"), py::arg("map"), py::arg("model"), py::arg("target"),
        py::arg("steps") = kDefaultCurveSteps, py::arg("baseline") = 0.0);

    mod.def(
        "spt_score",
        [](const py::array& smap, const py::object& boxes, int radius) {
            const SPTResult r = spt_video(map_from_array(smap), boxes_from_py(boxes), radius);
            py::dict d;
            d["hits"] = r.hits;
            d["frames_with_boxes"] = r.frames_with_boxes;
            d["hit_count"] = r.hit_count;
            d["hit_rate"] = r.hit_rate;
            return d;
        },
        py::arg("map"), py::arg("boxes"), py::arg("radius") = kDefaultSPTRadius);

    mod.def(
        "direction_sample",
        [](int cls, int frames, int size, int channels, std::uint64_t seed) {
            const SyntheticSample s = direction_sample(cls, frames, size, channels, seed);
            py::dict d;
            d["video"] = video_to_array(s.video);
            d["label"] = s.label;
            py::list boxes;
            for (const auto& b : s.boxes.per_frame) {
                if (!b)
                    boxes.append(py::none());
                else
                    boxes.append(py::make_tuple(b->top, b->left, b->height, b->width));
            }
            d["boxes"] = boxes;
            return d;
        },
        py::arg("cls"), py::arg("frames") = 16, py::arg("size") = 32, py::arg("channels") = 1,
        py::arg("seed") = 0);

    mod.def(
        "random_saliency",
        [](int T, int H, int W, std::uint64_t seed) {
            return map_to_array(random_saliency(T, H, W, seed));
        },
        py::arg("T"), py::arg("H"), py::arg("W"), py::arg("seed"));

    mod.def("load_video",
            [](const std::string& path) { return video_to_array(load_video(path)); },
            py::arg("path"));
    mod.def(
        "save_video",
        [](const py::array& video, const std::string& path) {
            save_video(video_from_array(video), path);
        },
        py::arg("video"), py::arg("path"));
    mod.def("load_map", [](const std::string& path) { return map_to_array(load_map(path)); },
            py::arg("path"));
    mod.def(
        "save_map",
        [](const py::array& smap, const std::string& path) {
            save_map(map_from_array(smap), path);
        },
        py::arg("map"), py::arg("path"));
}
