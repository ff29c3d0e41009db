#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "latnas/errors.hpp"
#include "latnas/evaluators.hpp"
#include "latnas/latency_model.hpp"
#include "latnas/optimizer.hpp"
#include "latnas/report.hpp"
#include "latnas/sampler.hpp"
#include "latnas/sobol.hpp"
#include "latnas/wire.hpp"

namespace py = pybind11;
using namespace latnas;

namespace {

using Digits = std::vector<int>;

std::vector<Digits> as_lists(const std::vector<NetworkEncoding>& encs) {
  std::vector<Digits> out;
  out.reserve(encs.size());
  for (const auto& e : encs) out.push_back(e.digits);
  return out;
}

// Estimator bound to one space; latencies in microseconds.
class PyEstimator {
 public:
  explicit PyEstimator(const SearchSpaceSpec& space)
      : space_(space), est_(make_analytic_estimator()), fn_(latency_function(est_, space_)) {}
  double latency_us(const Digits& d) { return est_->estimate_us(NetworkEncoding(d), space_); }
  std::size_t table_size() const { return est_->table().size(); }
  std::string table_text() const { return serialize_table(est_->table()); }
  const LatencyFunction& fn() const { return fn_; }
  const SearchSpaceSpec& space() const { return space_; }

 private:
  SearchSpaceSpec space_;
  std::shared_ptr<LatencyEstimator> est_;
  LatencyFunction fn_;
};

std::vector<CandidateRecord> history_from(const std::vector<std::pair<Digits, double>>& h, const PyEstimator& est) {
  std::vector<CandidateRecord> out;
  for (const auto& [d, y] : h) {
    NetworkEncoding e(d);
    out.push_back({e, est.fn()(e), y, {}});
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Latency-bucketed architecture search core";
  m.attr("__version__") = "0.3.0";
  m.attr("ENCODING_LENGTH") = kEncodingLength;

  // Later registrations are tried first, so the base class goes first.
  py::register_exception<Error>(m, "LatnasError", PyExc_RuntimeError);
  py::register_exception<InvalidEncoding>(m, "InvalidEncoding", PyExc_ValueError);
  py::register_exception<ExhaustedRegion>(m, "ExhaustedRegion", PyExc_RuntimeError);
  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_ValueError);

  py::class_<SearchSpaceSpec>(m, "SearchSpace")
      .def_static("standard", &SearchSpaceSpec::standard)
      .def("digit_values", [](const SearchSpaceSpec& s, std::size_t i) { return s.digits().at(i).values; })
      .def("digit_names",
           [](const SearchSpaceSpec& s) {
             std::vector<std::string> out;
             for (const auto& d : s.digits()) out.push_back(d.name);
             return out;
           })
      .def("restricted", &SearchSpaceSpec::restricted, py::arg("digit"), py::arg("values"))
      .def("cardinality", [](const SearchSpaceSpec& s) { return space_cardinality(s).str(); },
           "Number of encodings, as a decimal string")
      .def("__len__", [](const SearchSpaceSpec& s) { return s.digits().size(); });

  py::class_<Violation>(m, "Violation")
      .def_property_readonly("kind",
                             [](const Violation& v) {
                               switch (v.kind) {
                                 case Violation::Kind::LengthMismatch: return "length";
                                 case Violation::Kind::OutOfRange: return "out_of_range";
                                 case Violation::Kind::OffGrid: return "off_grid";
                               }
                               return "unknown";
                             })
      .def_readonly("digit", &Violation::digit)
      .def_readonly("value", &Violation::value)
      .def("__repr__", &Violation::describe);

  m.def("validate", [](const Digits& d, const SearchSpaceSpec& s) { return validate(NetworkEncoding(d), s); },
        py::arg("digits"), py::arg("space") = SearchSpaceSpec::standard());

  m.def("encode_roundtrip",
        [](const Digits& d, const SearchSpaceSpec& s) { return encode(decode(NetworkEncoding(d), s), s).digits; },
        py::arg("digits"), py::arg("space") = SearchSpaceSpec::standard());

  m.def("decode_layers",
        [](const Digits& d, const SearchSpaceSpec& s) {
          std::vector<py::dict> out;
          for (const auto& l : decode(NetworkEncoding(d), s).layers) {
            py::dict x;
            x["stage"] = l.stage;
            x["type"] = to_string(l.type);
            x["kernel"] = l.kernel;
            x["stride"] = l.stride;
            x["in_filters"] = l.in_filters;
            x["out_filters"] = l.out_filters;
            x["expansion"] = l.expansion;
            x["se"] = l.se;
            x["activation"] = to_string(l.activation);
            out.push_back(std::move(x));
          }
          return out;
        },
        py::arg("digits"), py::arg("space") = SearchSpaceSpec::standard());

  m.def("sobol_points", &sobol_points, py::arg("n"), py::arg("dim"), py::arg("skip") = 1);
  m.def("sample_encodings",
        [](std::size_t n, const SearchSpaceSpec& s, std::uint64_t skip) { return as_lists(sample_encodings(n, s, skip)); },
        py::arg("n"), py::arg("space") = SearchSpaceSpec::standard(), py::arg("skip") = 1);

  py::class_<PyEstimator>(m, "LatencyEstimator")
      .def(py::init<const SearchSpaceSpec&>(), py::arg("space") = SearchSpaceSpec::standard())
      .def("latency_us", &PyEstimator::latency_us, py::arg("digits"))
      .def("latency_ms", [](PyEstimator& e, const Digits& d) { return e.latency_us(d) / 1000.0; }, py::arg("digits"))
      .def_property_readonly("table_size", &PyEstimator::table_size)
      .def("table_text", &PyEstimator::table_text);

  m.def("structured_surrogate",
        [](const Digits& d, const SearchSpaceSpec& s, std::optional<std::uint64_t> noise_seed) {
          return structured_surrogate(NetworkEncoding(d), s, {}, noise_seed);
        },
        py::arg("digits"), py::arg("space") = SearchSpaceSpec::standard(), py::arg("noise_seed") = py::none());
  m.def("synthetic_ackley",
        [](const Digits& d, const SearchSpaceSpec& s) { return synthetic_ackley(NetworkEncoding(d), s); },
        py::arg("digits"), py::arg("space") = SearchSpaceSpec::standard());

  py::class_<Proposal>(m, "Proposal")
      .def_property_readonly("digits", [](const Proposal& p) { return p.encoding.digits; })
      .def_readonly("latency_us", &Proposal::latency_us)
      .def_readonly("acquisition", &Proposal::acquisition)
      .def_readonly("cold_start", &Proposal::cold_start)
      .def_readonly("path", &Proposal::path);

  m.def("propose",
        [](const std::vector<std::pair<Digits, double>>& history, double lower_ms, double upper_ms, std::uint64_t seed,
           PyEstimator& est, const std::vector<Digits>& exclude) {
          std::vector<NetworkEncoding> ex;
          for (const auto& d : exclude) ex.emplace_back(d);
          ProposalContext ctx{est.space(), {lower_ms, upper_ms}, est.fn(), {}};
          py::gil_scoped_release release;
          return propose_detailed(history_from(history, est), ex, ctx, seed);
        },
        py::arg("history"), py::arg("lower_ms"), py::arg("upper_ms"), py::arg("seed"), py::arg("estimator"),
        py::arg("exclude") = std::vector<Digits>{},
        "Next encoding for a bucket given [(digits, objective), ...]");

  m.def("random_propose",
        [](double lower_ms, double upper_ms, std::uint64_t seed, PyEstimator& est) {
          return random_propose(est.space(), {lower_ms, upper_ms}, est.fn(), seed).digits;
        },
        py::arg("lower_ms"), py::arg("upper_ms"), py::arg("seed"), py::arg("estimator"));

  m.def("pareto_front",
        [](const std::vector<std::pair<double, double>>& pts) {
          std::vector<ParetoPoint> p;
          for (const auto& [lat, obj] : pts) p.push_back({lat, obj});
          return pareto_front(p);
        },
        py::arg("points"), "Indices of non-dominated (latency, objective) pairs");

  m.def("parse_message",
        [](const std::string& line) {
          auto msg = parse_message(line);
          return py::make_tuple(message_type(msg), serialize_message(msg));
        },
        py::arg("line"), "(type, canonical line) of one wire message; raises ProtocolError");
  m.def("serialize_message",
        [](const std::string& type, const std::string& client_id) -> std::string {
          if (type == "HELLO") return serialize_message(HelloMsg{client_id, kProtocolVersion});
          if (type == "REQUEST_WORK") return serialize_message(RequestWorkMsg{client_id});
          throw Error("only HELLO and REQUEST_WORK can be built from a client id");
        },
        py::arg("type"), py::arg("client_id"));
}
