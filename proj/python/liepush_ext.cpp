#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "liepush/errors.hpp"
#include "liepush/groups.hpp"
#include "liepush/liflow.hpp"
#include "liepush/pushforward.hpp"
#include "liepush/volume.hpp"

namespace py = pybind11;
using namespace liepush;

namespace {

GroupDescriptor group_of(const std::string& tag) { return GroupDescriptor::from_string(tag); }

double jacobian(const std::string& tag, const linalg::Vector& coords, const std::string& method) {
    const auto G = group_of(tag);
    const auto v = G.vector(coords);
    if (method == "closed") return jacobian_closed(G, v);
    if (method == "series") return jacobian_series(G, v);
    if (method == "spectrum") return jacobian_spectrum(G, v);
    if (method == "numeric") return jacobian_numeric(G, v);
    throw InvalidArgument("jacobian: method must be closed, series, spectrum or numeric");
}

PushforwardDistribution make_pushforward(const std::string& tag, double sigma, const linalg::Vector& loc, int k_trunc) {
    const auto G = group_of(tag);
    const GroupElement location = loc.size() == 0 ? G.identity() : exp_map(G, G.vector(loc));
    return PushforwardDistribution(G, linalg::Vector::Constant(1, sigma), location, k_trunc);
}

py::tuple draw(const PushforwardDistribution& dist, int n, std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("sample: n must be >= 1");
    Rng rng(seed);
    const auto& G = dist.group();
    linalg::Matrix eps(n, G.algebra_dim());
    std::vector<linalg::Matrix> elements;
    linalg::Vector log_density(n);
    for (int i = 0; i < n; ++i) {
        const auto rec = sample(dist, rng);
        eps.row(i) = rec.algebra_noise.coords.transpose();
        elements.push_back(rec.group_element.matrix);
        log_density[i] = rec.log_density;
    }
    return py::make_tuple(eps, elements, log_density);
}

} // namespace

PYBIND11_MODULE(_liepush, m) {
    m.doc() = "Pushforward densities and locally invertible flows on Lie groups";

    auto base = py::register_exception<Error>(m, "LiepushError", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
    py::register_exception<InvalidElement>(m, "InvalidElement", base.ptr());
    py::register_exception<BoundaryError>(m, "BoundaryError", base.ptr());
    py::register_exception<SingularElement>(m, "SingularElement", base.ptr());
    py::register_exception<SingularShell>(m, "SingularShell", base.ptr());
    py::register_exception<OutOfSupport>(m, "OutOfSupport", base.ptr());

    m.def(
        "exp_map",
        [](const std::string& group, const linalg::Vector& coords) {
            const auto G = group_of(group);
            return exp_map(G, G.vector(coords)).matrix;
        },
        py::arg("group"), py::arg("coords"));
    m.def(
        "log_map",
        [](const std::string& group, const linalg::Matrix& element) {
            const auto G = group_of(group);
            return log_principal(G, G.element(element)).coords;
        },
        py::arg("group"), py::arg("element"), "Principal logarithm.");
    m.def(
        "preimages",
        [](const std::string& group, const linalg::Matrix& element, int k_trunc) {
            const auto G = group_of(group);
            std::vector<linalg::Vector> out;
            for (const auto& v : preimage(G, G.element(element), k_trunc)) out.push_back(v.coords);
            return out;
        },
        py::arg("group"), py::arg("element"), py::arg("k_trunc") = kDefaultTruncation);
    m.def("jacobian", &jacobian, py::arg("group"), py::arg("coords"), py::arg("method") = "closed",
          "Volume factor J of exp at the algebra point.");
    m.def(
        "killing_form",
        [](const std::string& group, const linalg::Vector& a, const linalg::Vector& b) {
            const auto G = group_of(group);
            return killing_form(G, G.vector(a), G.vector(b));
        },
        py::arg("group"), py::arg("a"), py::arg("b"));

    py::class_<PushforwardDistribution>(m, "Pushforward")
        .def(py::init(&make_pushforward), py::arg("group"), py::arg("sigma"),
             py::arg("loc") = linalg::Vector(), py::arg("k_trunc") = kDefaultTruncation)
        .def_property_readonly("group", [](const PushforwardDistribution& d) { return d.group().tag().str(); })
        .def_property_readonly("truncation", &PushforwardDistribution::truncation)
        .def("sample", &draw, py::arg("n"), py::arg("seed") = 0,
             "Returns (algebra noise, group elements, log densities).")
        .def(
            "log_density",
            [](const PushforwardDistribution& d, const linalg::Matrix& g) {
                return log_density(d, d.group().element(g));
            },
            py::arg("element"))
        .def(
            "normalization",
            [](const PushforwardDistribution& d, int resolution) { return normalization_quadrature(d, resolution); },
            py::arg("resolution"));

    py::class_<FlowModel>(m, "Flow")
        .def(py::init([](double r_squash, int layers, int hidden_width, std::uint64_t seed, double weight_scale) {
                 FlowConfig config;
                 config.r_squash = r_squash;
                 config.layers = layers;
                 config.hidden_width = hidden_width;
                 Rng rng(seed);
                 FlowModel model(GroupDescriptor::so3(), config, rng);
                 if (weight_scale > 0.0) model.randomize(rng, weight_scale);
                 return model;
             }),
             py::arg("r_squash") = 0.9 * 3.141592653589793, py::arg("layers") = 4, py::arg("hidden_width") = 32,
             py::arg("seed") = 0, py::arg("weight_scale") = 0.0)
        .def_static(
            "from_checkpoint", [](const std::string& json) { return load_checkpoint(json); }, py::arg("json"))
        .def("checkpoint", [](const FlowModel& f) { return save_checkpoint(f); })
        .def_property_readonly("num_parameters", [](const FlowModel& f) { return f.parameters().size(); })
        .def(
            "sample",
            [](const FlowModel& f, int n, std::uint64_t seed) {
                if (n < 1) throw InvalidArgument("sample: n must be >= 1");
                Rng rng(seed);
                std::vector<linalg::Matrix> elements;
                linalg::Vector log_prob(n);
                for (int i = 0; i < n; ++i) {
                    const auto s = flow_sample(f, {}, rng);
                    elements.push_back(s.element.matrix);
                    log_prob[i] = s.log_prob;
                }
                return py::make_tuple(elements, log_prob);
            },
            py::arg("n"), py::arg("seed") = 0, "Returns (rotations, log probabilities).")
        .def(
            "log_prob",
            [](const FlowModel& f, const linalg::Matrix& g) { return flow_log_prob(f, f.group().element(g), {}); },
            py::arg("element"));
}
