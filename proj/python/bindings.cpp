#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "relux/errors.hpp"
#include "relux/eval.hpp"
#include "relux/extract.hpp"
#include "relux/hardness.hpp"
#include "relux/hybrid.hpp"
#include "relux/linearity.hpp"
#include "relux/model_io.hpp"
#include "relux/net.hpp"
#include "relux/random.hpp"

namespace py = pybind11;
using namespace relux;

namespace {

py::dict ledger_dict(const LedgerSnapshot& s) {
  py::dict d;
  for (Phase p : kAllPhases) d[py::str(std::string(to_string(p)))] = s[p];
  d["total"] = s.total();
  return d;
}

py::dict extract_local(const TwoLayerNet& victim, std::size_t h, std::uint64_t seed, std::uint64_t budget) {
  OracleHandle oracle = OracleHandle::local(victim);
  ExtractConfig cfg;
  cfg.seed = seed;
  cfg.budget = budget;
  ExtractionResult r = extract(oracle, victim.d(), h, cfg);
  py::dict out;
  out["net"] = r.net;
  out["ledger"] = ledger_dict(r.ledger);
  out["distinct_found"] = r.distinct_found;
  out["shortfall"] = r.shortfall;
  out["last_layer_residual"] = r.last_layer_residual;
  return out;
}

void bind_net(py::module_& m) {
  py::class_<InputBox>(m, "InputBox")
      .def_static("uniform", &InputBox::uniform, py::arg("d"), py::arg("lo"), py::arg("hi"))
      .def_static("unit", &InputBox::unit, py::arg("d"))
      .def_readonly("lo", &InputBox::lo)
      .def_readonly("hi", &InputBox::hi);

  py::class_<TwoLayerNet>(m, "TwoLayerNet")
      .def(py::init<Matrix, Vector, Matrix, Vector>(), py::arg("a0"), py::arg("b0"), py::arg("a1"), py::arg("b1"))
      .def_static("zeros", &TwoLayerNet::zeros, py::arg("d"), py::arg("h"), py::arg("k"))
      .def_property_readonly("d", &TwoLayerNet::d)
      .def_property_readonly("h", &TwoLayerNet::h)
      .def_property_readonly("k", &TwoLayerNet::k)
      .def_property_readonly("a0", &TwoLayerNet::a0)
      .def_property_readonly("b0", &TwoLayerNet::b0)
      .def_property_readonly("a1", &TwoLayerNet::a1)
      .def_property_readonly("b1", &TwoLayerNet::b1)
      .def("logits", &TwoLayerNet::forward_logits, py::arg("x"))
      .def("probs", &TwoLayerNet::forward_probs, py::arg("x"), py::arg("temperature") = 1.0)
      .def("identical", &TwoLayerNet::identical)
      .def("__repr__", [](const TwoLayerNet& n) {
        return "<TwoLayerNet d=" + std::to_string(n.d()) + " h=" + std::to_string(n.h()) +
               " k=" + std::to_string(n.k()) + ">";
      });

  m.def("random_net", &random_net, py::arg("d"), py::arg("h"), py::arg("k"), py::arg("seed"),
        py::arg("bias_stddev") = 0.1);
  m.def("scale_neuron", &scale_neuron);
  m.def("permute_neurons", [](const TwoLayerNet& n, const std::vector<std::size_t>& perm) {
    return permute_neurons(n, perm);
  });
  m.def("serialize", &serialize);
  m.def("deserialize", [](const std::string& s) { return deserialize(s); });
  m.def("save_model", [](const TwoLayerNet& n, const std::string& p) { save_model(n, p); });
  m.def("load_model", [](const std::string& p) { return load_model(p); });
}

void bind_analysis(py::module_& m) {
  m.def("extract", &extract_local, py::arg("victim"), py::arg("h"), py::arg("seed"), py::arg("budget") = 0,
        "Extract `victim` through a metered local oracle.");
  m.def(
      "fidelity",
      [](const TwoLayerNet& a, const TwoLayerNet& b, std::size_t n, std::uint64_t seed) {
        return fidelity(logits_of(a), logits_of(b), InputBox::unit(a.d()), n, seed);
      },
      py::arg("a"), py::arg("b"), py::arg("n"), py::arg("seed"));
  m.def(
      "precision_bits",
      [](const TwoLayerNet& victim, const TwoLayerNet& extracted) {
        const PrecisionReport r = align_and_precision(victim, extracted);
        return py::make_tuple(r.mean_bits, r.min_bits, r.alignment.unmatched);
      },
      py::arg("victim"), py::arg("extracted"));

  py::enum_<LinearityOutcome>(m, "LinearityOutcome")
      .value("single_kink", LinearityOutcome::single_kink)
      .value("more_than_one", LinearityOutcome::more_than_one)
      .value("no_kink", LinearityOutcome::no_kink);
  m.def(
      "two_linear_test",
      [](const std::function<double(double)>& f, double t1, double t2, double eps) {
        const TwoLinearResult r = two_linear_test(f, t1, t2, eps);
        return py::make_tuple(r.outcome, r.location);
      },
      py::arg("f"), py::arg("t1"), py::arg("t2"), py::arg("eps"));

  m.def(
      "rectangle_net",
      [](std::size_t d, std::size_t p, const std::vector<std::optional<std::size_t>>& cells) {
        return build_rectangle_net(rectangle_from_cells(d, p, cells)).inner();
      },
      py::arg("d"), py::arg("p"), py::arg("cells"), "Inner net; the output is relu of its logit.");
  m.def(
      "rectangle_fraction",
      [](std::size_t d, std::size_t p, const std::vector<std::optional<std::size_t>>& cells) {
        const RectangleNet net = build_rectangle_net(rectangle_from_cells(d, p, cells));
        const Fraction f = nonzero_fraction([&net](const Vector& x) { return net(x); }, d, p).reduced();
        return py::make_tuple(f.numerator, f.denominator);
      },
      py::arg("d"), py::arg("p"), py::arg("cells"));
  m.def("subsetsum_net", &build_subsetsum_net, py::arg("weights"), py::arg("target"), py::arg("p"));
  m.def(
      "brute_force_equiv",
      [](const TwoLayerNet& a, const TwoLayerNet& b, double tol) -> py::object {
        const EquivalenceResult r = brute_force_equiv(a, b, tol);
        if (r.equivalent) return py::none();
        return py::cast(*r.witness);
      },
      py::arg("a"), py::arg("b"), py::arg("tol") = 1e-9, "None when equivalent, else the first differing corner.");
  m.def("inject_weight_error", &inject_weight_error, py::arg("net"), py::arg("neuron"), py::arg("coord"),
        py::arg("magnitude"), py::arg("witness") = std::nullopt);
}

}  // namespace

PYBIND11_MODULE(_relux, m) {
  m.doc() = "Two-layer ReLU network extraction toolkit";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<OracleError>(m, "OracleError", base.ptr());
  py::register_exception<BudgetExhausted>(m, "BudgetExhausted", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  bind_net(m);
  bind_analysis(m);
}
