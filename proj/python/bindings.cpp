#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "moe_depth/cli.hpp"
#include "moe_depth/cloud.hpp"
#include "moe_depth/evalkit.hpp"
#include "moe_depth/mixture.hpp"
#include "moe_depth/seed.hpp"
#include "moe_depth/synthscene.hpp"

namespace py = pybind11;
using namespace moe_depth;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using BoolArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;

Grid to_grid(const Array& a) {
    if (a.ndim() != 2)
        throw py::value_error("expected a 2-D array");
    const auto h = static_cast<int>(a.shape(0));
    const auto w = static_cast<int>(a.shape(1));
    return Grid(h, w, std::vector<double>(a.data(), a.data() + a.size()));
}

GridStack to_stack(const Array& a) {
    if (a.ndim() != 3)
        throw py::value_error("expected a 3-D array (K, H, W)");
    GridStack s(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), s.values().begin());
    return s;
}

MaskGrid to_mask(const BoolArray& a) {
    if (a.ndim() != 2)
        throw py::value_error("expected a 2-D boolean array");
    MaskGrid m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    for (py::ssize_t i = 0; i < a.size(); ++i)
        m.set(static_cast<std::size_t>(i), a.data()[i]);
    return m;
}

Array from_grid(const Grid& g) {
    Array out({g.height(), g.width()});
    std::copy(g.data().begin(), g.data().end(), out.mutable_data());
    return out;
}

Array from_stack(const GridStack& s) {
    Array out({s.channels(), s.height(), s.width()});
    std::copy(s.values().begin(), s.values().end(), out.mutable_data());
    return out;
}

BoolArray from_mask(const MaskGrid& m) {
    BoolArray out({m.height(), m.width()});
    for (std::size_t i = 0; i < m.size(); ++i)
        out.mutable_data()[i] = m[i];
    return out;
}

Intrinsics intrinsics_from(double fx, double fy, double cx, double cy) { return {fx, fy, cx, cy}; }

}  // namespace

PYBIND11_MODULE(_moe_depth, m) {
    m.doc() = "Mixture-of-experts depth estimation core";
    m.attr("__version__") = MOE_DEPTH_VERSION;

    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
    py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
    py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);

    m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("purpose"), py::arg("index") = 0);

    m.def(
        "gate_softmax",
        [](const Array& logits, double tau) { return from_stack(gate_softmax(to_stack(logits), tau).weights); },
        py::arg("logits"), py::arg("tau"), "Per-pixel softmax over the expert axis of a (K, H, W) array.");

    m.def(
        "mixture_nll",
        [](const Array& mu, const Array& logits, double tau, const Array& gt, double sigma) {
            const auto out = make_mixture_output(to_stack(mu), gate_softmax(to_stack(logits), tau));
            LossConfig cfg;
            cfg.sigma = sigma;
            const auto r = mixture_nll(out, to_grid(gt), cfg);
            return py::make_tuple(r.loss, from_stack(r.grad_mu), from_stack(r.grad_logits));
        },
        py::arg("mu"), py::arg("logits"), py::arg("tau"), py::arg("gt"), py::arg("sigma") = 1.0,
        "Returns (loss, d loss / d mu, d loss / d logits). NaN ground truth pixels are ignored.");

    m.def(
        "gate_entropy",
        [](const Array& logits, double tau) {
            const auto gate = gate_softmax(to_stack(logits), tau);
            const auto r = gating_entropy(gate);
            return py::make_tuple(r.loss, from_stack(r.grad_logits), from_grid(gate_entropy_map(gate)));
        },
        py::arg("logits"), py::arg("tau"), "Returns (mean entropy, gradient, per-pixel entropy map).");

    m.def(
        "generate_scene",
        [](std::uint64_t seed, int height, int width, int num_objects, double noise) {
            SceneSpec spec;
            spec.seed = seed;
            spec.height = height;
            spec.width = width;
            spec.num_objects = num_objects;
            spec.noise_std = noise;
            const Scene s = generate(spec);
            py::dict d;
            d["input"] = from_stack(s.input);
            d["depth"] = from_grid(s.gt_depth);
            d["edges"] = from_mask(s.gt_edges);
            py::array_t<int> labels({s.labels.height, s.labels.width});
            std::copy(s.labels.data.begin(), s.labels.data.end(), labels.mutable_data());
            d["labels"] = labels;
            d["intrinsics"] = py::make_tuple(s.intrinsics.fx, s.intrinsics.fy, s.intrinsics.cx, s.intrinsics.cy);
            d["num_objects"] = s.num_objects;
            return d;
        },
        py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64, py::arg("num_objects") = -1,
        py::arg("noise") = 0.05);

    m.def(
        "sobel_magnitude",
        [](const Array& depth, bool scale_to_255) {
            return from_grid(sobel_magnitude(to_grid(depth), EdgeConfig{50.0, scale_to_255}));
        },
        py::arg("depth"), py::arg("scale_to_255") = true);

    m.def(
        "extract_edges",
        [](const Array& depth, double threshold, bool scale_to_255) {
            return from_mask(extract_edges(to_grid(depth), EdgeConfig{threshold, scale_to_255}));
        },
        py::arg("depth"), py::arg("threshold") = 50.0, py::arg("scale_to_255") = true);

    m.def(
        "boundary_metrics",
        [](const BoolArray& pred, const BoolArray& gt) {
            const auto r = boundary_metrics(to_mask(pred), to_mask(gt));
            py::dict d;
            d["miou"] = r.miou;
            d["precision"] = r.precision;
            d["recall"] = r.recall;
            d["f1"] = r.f1;
            return d;
        },
        py::arg("pred_edges"), py::arg("gt_edges"));

    m.def(
        "depth_metrics",
        [](const Array& pred, const Array& gt, bool median_scaling) {
            const auto r = depth_metrics(to_grid(pred), to_grid(gt), median_scaling);
            py::dict d;
            d["abs_rel"] = r.abs_rel;
            d["delta1"] = r.delta1;
            d["delta2"] = r.delta2;
            d["delta3"] = r.delta3;
            d["scale"] = r.scale;
            return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("median_scaling") = true);

    m.def(
        "unproject",
        [](const Array& depth, double fx, double fy, double cx, double cy) {
            const auto cloud = unproject(to_grid(depth), intrinsics_from(fx, fy, cx, cy));
            py::array_t<double> pts({static_cast<py::ssize_t>(cloud.size()), py::ssize_t{3}});
            auto* p = pts.mutable_data();
            for (const auto& v : cloud.points)
                for (double c : v)
                    *p++ = c;
            return pts;
        },
        py::arg("depth"), py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"),
        "(N, 3) camera-space points for the finite pixels, row-major.");

    m.def(
        "detect_flying_points",
        [](const Array& depth, double fx, double fy, double cx, double cy, int k, double ratio) {
            const auto r = detect_flying_points(unproject(to_grid(depth), intrinsics_from(fx, fy, cx, cy)), k, ratio);
            return py::make_tuple(r.count, r.median);
        },
        py::arg("depth"), py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("k") = 8,
        py::arg("ratio") = 3.0, "Returns (flying count, median neighbour distance).");

    // Same verbs and exit codes as the command-line tool.
    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Returns (exit code, stdout text, stderr text).");
}
