#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kanfpn/config.hpp"
#include "kanfpn/gradcheck.hpp"
#include "kanfpn/kagn.hpp"
#include "kanfpn/ops.hpp"
#include "kanfpn/pose.hpp"
#include "kanfpn/stem.hpp"
#include "kanfpn/synth.hpp"
#include "kanfpn/train.hpp"

namespace py = pybind11;
using namespace kanfpn;

namespace {

Shape shape_of(const py::buffer_info& info) {
    return Shape(info.shape.begin(), info.shape.end());
}

Tensor from_numpy(const py::array& a) {
    if (py::isinstance<py::array_t<float>>(a)) {
        auto c = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(a);
        const auto info = c.request();
        const auto* p = static_cast<const float*>(info.ptr);
        return Tensor::from_buffer(std::vector<float>(p, p + info.size), shape_of(info));
    }
    auto c = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(a);
    if (!c) {
        throw py::type_error("expected a numeric array");
    }
    const auto info = c.request();
    const auto* p = static_cast<const double*>(info.ptr);
    return Tensor::from_buffer(std::vector<double>(p, p + info.size), shape_of(info));
}

py::array to_numpy(const Tensor& t) {
    return dispatch(t.dtype(), [&](auto tag) -> py::array {
        using T = decltype(tag);
        std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
        py::array_t<T> out(shape);
        auto src = t.template data<T>();
        std::copy(src.begin(), src.end(), out.mutable_data());
        return out;
    });
}

std::vector<pose::Keypoints> keypoints_from(const py::array& a) {
    // [B,K,2] or [B,K,3] with an optional visibility column.
    auto c = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(a);
    const auto info = c.request();
    if (info.ndim != 3 || (info.shape[2] != 2 && info.shape[2] != 3)) {
        throw py::value_error("keypoints must have shape [B,K,2] or [B,K,3]");
    }
    const auto* p = static_cast<const double*>(info.ptr);
    const auto cols = info.shape[2];
    std::vector<pose::Keypoints> out(static_cast<std::size_t>(info.shape[0]));
    for (py::ssize_t b = 0; b < info.shape[0]; ++b) {
        for (py::ssize_t k = 0; k < info.shape[1]; ++k) {
            const double* row = p + (b * info.shape[1] + k) * cols;
            out[static_cast<std::size_t>(b)].push_back({row[0], row[1], cols == 2 || row[2] != 0.0, 0.0});
        }
    }
    return out;
}

py::array keypoints_to(const std::vector<pose::Keypoints>& kps, bool score) {
    const auto b = static_cast<py::ssize_t>(kps.size());
    const auto k = b == 0 ? 0 : static_cast<py::ssize_t>(kps.front().size());
    py::array_t<double> out({b, k, py::ssize_t{3}});
    auto* dst = out.mutable_data();
    for (const auto& sample : kps) {
        for (const auto& kp : sample) {
            *dst++ = kp.x;
            *dst++ = kp.y;
            *dst++ = score ? kp.score : (kp.visible ? 1.0 : 0.0);
        }
    }
    return out;
}

train::RunConfig run_config(const std::string& path) {
    return path.empty() ? train::RunConfig{} : config::load(path);
}

class PyPoseModel {
public:
    PyPoseModel(const std::string& variant, std::int64_t embed_dim, std::int64_t depth, std::int64_t heads,
                std::int64_t height, std::int64_t width, std::uint64_t seed)
        : model_(make_config(variant, embed_dim, depth, heads, height, width), seed) {}

    py::array forward(const py::array& images) const {
        auto x = from_numpy(images).to(DType::f32);
        NoGradGuard guard;
        return to_numpy(model_.forward(x));
    }
    std::int64_t param_count() const { return model_.param_count(); }
    std::vector<std::string> param_names() const { return model_.params().names(); }
    void save(const std::filesystem::path& p) const { nn::save_checkpoint(p, model_.params()); }
    void load(const std::filesystem::path& p) { nn::load_checkpoint(p, model_.params()); }

private:
    static pose::PoseModelConfig make_config(const std::string& variant, std::int64_t embed_dim, std::int64_t depth,
                                             std::int64_t heads, std::int64_t height, std::int64_t width) {
        pose::PoseModelConfig cfg;
        cfg.stem.variant = stem::parse_variant(variant);
        cfg.embed_dim = embed_dim;
        cfg.depth = depth;
        cfg.heads = heads;
        cfg.height = height;
        cfg.width = width;
        return cfg;
    }
    pose::PoseModel model_;
};

} // namespace

PYBIND11_MODULE(_kanfpn, m) {
    m.doc() = "KAN-enhanced FPN stem for heatmap pose estimation";

    py::register_exception<Error>(m, "KanfpnError", PyExc_RuntimeError);

    m.def("conv2d",
          [](const py::array& x, const py::array& w, std::optional<py::array> bias, std::int64_t stride,
             std::int64_t padding, std::int64_t groups) {
              return to_numpy(ops::conv2d(from_numpy(x), from_numpy(w), bias ? from_numpy(*bias) : Tensor{}, stride,
                                          padding, groups));
          },
          py::arg("x"), py::arg("w"), py::arg("bias") = py::none(), py::arg("stride") = 1, py::arg("padding") = 0,
          py::arg("groups") = 1);
    m.def("gram_basis", [](const py::array& s, int degree) { return to_numpy(kagn::gram_basis(from_numpy(s), degree)); },
          py::arg("s"), py::arg("degree"));
    m.def("kagn_param_count",
          [](std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, int degree, std::int64_t groups,
             std::int64_t bottleneck_ratio) {
              auto cfg = kagn::KagnConvConfig::same(in_ch, out_ch, kernel, degree, bottleneck_ratio);
              cfg.groups = groups;
              return kagn::kagn_param_count(cfg);
          },
          py::arg("in_ch"), py::arg("out_ch"), py::arg("kernel") = 3, py::arg("degree") = 3, py::arg("groups") = 1,
          py::arg("bottleneck_ratio") = 1);

    m.def("variants", [] {
        std::vector<std::string> out;
        for (auto v : stem::kAllVariants) out.emplace_back(stem::variant_key(v));
        return out;
    });
    m.def("variant_label", [](const std::string& v) { return std::string(stem::variant_label(stem::parse_variant(v))); });
    m.def("stem_param_count",
          [](const std::string& variant, std::int64_t embed_dim) {
              stem::StemConfig cfg;
              cfg.variant = stem::parse_variant(variant);
              cfg.embed_dim = embed_dim;
              return stem::stem_param_count(cfg);
          },
          py::arg("variant"), py::arg("embed_dim") = 64);
    m.def("paper_ap", [](const std::string& v) { return train::paper_ap(stem::parse_variant(v)); });

    m.def("render_targets",
          [](const py::array& kps, std::int64_t h, std::int64_t w, double stride, double sigma) {
              return to_numpy(pose::render_targets(keypoints_from(kps), h, w, stride, sigma, DType::f64));
          },
          py::arg("keypoints"), py::arg("height"), py::arg("width"), py::arg("stride") = 4.0, py::arg("sigma") = 2.0);
    m.def("decode_keypoints",
          [](const py::array& hm, double stride) {
              return keypoints_to(pose::decode_keypoints(from_numpy(hm), stride), true);
          },
          py::arg("heatmaps"), py::arg("stride") = 4.0, "Returns [B,K,3] rows of (x, y, score).");
    m.def("pck",
          [](const py::array& pred, const py::array& gt, double tau, double height, double width) {
              return pose::pck(keypoints_from(pred), keypoints_from(gt), tau, height, width);
          },
          py::arg("pred"), py::arg("gt"), py::arg("tau"), py::arg("height"), py::arg("width"));

    m.def("lr_at",
          [](std::int64_t step, std::int64_t epoch, const std::string& config) {
              return train::lr_at(step, epoch, run_config(config).train);
          },
          py::arg("step"), py::arg("epoch"), py::arg("config") = "");

    m.def("generate",
          [](std::int64_t index, std::uint64_t seed, std::int64_t height, std::int64_t width, double scale_min,
             double scale_max, double rotation_deg, double noise) {
              synth::SceneSpec spec;
              spec.seed = seed;
              spec.height = height;
              spec.width = width;
              spec.scale_min = scale_min;
              spec.scale_max = scale_max;
              spec.rotation_deg = rotation_deg;
              spec.noise = noise;
              auto s = synth::generate(spec, index);
              py::dict out;
              out["image"] = to_numpy(s.image);
              out["keypoints"] = keypoints_to({s.keypoints}, false)[py::int_(0)];
              out["scale"] = s.scale;
              out["rotation"] = s.rotation;
              return out;
          },
          py::arg("index"), py::arg("seed") = 0, py::arg("height") = 64, py::arg("width") = 64,
          py::arg("scale_min") = 0.2, py::arg("scale_max") = 0.9, py::arg("rotation_deg") = 30.0,
          py::arg("noise") = 0.05);

    m.def("gradcheck_scopes", [] {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& s : gradcheck::scopes()) out.emplace_back(s.name, s.kind);
        return out;
    });
    m.def("gradcheck",
          [](const std::string& scope, std::uint64_t seed) {
              const auto r = gradcheck::run(scope, seed);
              py::dict out;
              out["scope"] = r.scope;
              out["seed"] = r.seed;
              out["tolerance"] = r.tolerance;
              out["max_rel_err"] = r.max_rel_err;
              out["passed"] = r.passed();
              py::dict groups;
              for (const auto& g : r.groups) groups[py::str(g.name)] = g.max_rel_err;
              out["groups"] = groups;
              return out;
          },
          py::arg("scope"), py::arg("seed") = 1);

    m.def("train_stage",
          [](const std::string& variant, const std::string& config, bool smoke, bool overfit,
             std::optional<std::filesystem::path> out_dir) {
              auto cfg = run_config(config);
              if (smoke) cfg = train::smoke_config(cfg);
              if (overfit) cfg = train::overfit_config(cfg);
              if (out_dir) cfg.out_dir = *out_dir;
              train::StageResult res;
              {
                  py::gil_scoped_release release;
                  res = train::run_stage(stem::parse_variant(variant), cfg);
              }
              py::list rows;
              for (const auto& r : res.records) {
                  py::dict d;
                  d["stage"] = r.stage;
                  d["epoch"] = r.epoch;
                  d["loss"] = r.loss;
                  d["pck05"] = r.pck05;
                  d["pck10"] = r.pck10;
                  d["params"] = r.params;
                  d["seconds"] = r.seconds;
                  rows.append(d);
              }
              py::dict out;
              out["records"] = rows;
              out["metrics"] = res.metrics;
              out["checkpoint"] = res.checkpoint;
              out["steps"] = res.steps;
              return out;
          },
          py::arg("variant"), py::arg("config") = "", py::arg("smoke") = false, py::arg("overfit") = false,
          py::arg("out_dir") = py::none());

    py::class_<PyPoseModel>(m, "PoseModel")
        .def(py::init<const std::string&, std::int64_t, std::int64_t, std::int64_t, std::int64_t, std::int64_t,
                      std::uint64_t>(),
             py::arg("variant") = "s4", py::arg("embed_dim") = 64, py::arg("depth") = 4, py::arg("heads") = 4,
             py::arg("height") = 64, py::arg("width") = 64, py::arg("seed") = 0)
        .def("forward", &PyPoseModel::forward, py::arg("images"), "[B,3,H,W] -> heatmaps [B,K,H/4,W/4]")
        .def_property_readonly("param_count", &PyPoseModel::param_count)
        .def("param_names", &PyPoseModel::param_names)
        .def("save", &PyPoseModel::save)
        .def("load", &PyPoseModel::load);
}
