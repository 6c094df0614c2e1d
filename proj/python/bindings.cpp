#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mrfalign/aligner.hpp"
#include "mrfalign/error.hpp"
#include "mrfalign/gauss.hpp"
#include "mrfalign/ggl.hpp"
#include "mrfalign/io.hpp"
#include "mrfalign/mrf.hpp"
#include "mrfalign/msa.hpp"
#include "mrfalign/search.hpp"

namespace py = pybind11;
using namespace mrfalign;

namespace {

// Node potentials come in as an (m+1) x (n+1) x 3 nested list or array, states M, It, Is.
AlignProblem make_align_problem(const std::vector<std::vector<std::vector<double>>>& node,
                                const std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, double>>& edges) {
  if (node.size() < 2 || node[0].size() < 2) throw ArgumentError("node potentials need shape (m+1, n+1, 3) with m, n >= 1");
  const std::size_t m = node.size() - 1, n = node[0].size() - 1;
  AlignProblem prob{m, n, NodePotentialTable(m, n), EdgePotentialTable{m, n, {}}};
  for (std::size_t x = 0; x <= m; ++x) {
    if (node[x].size() != n + 1) throw ArgumentError("node potentials: ragged rows");
    for (std::size_t y = 0; y <= n; ++y) {
      if (node[x][y].size() != kNumStates) throw ArgumentError("node potentials: last axis must have 3 states");
      for (State s : {State::M, State::It, State::Is}) prob.node(x, y, s) = node[x][y][index(s)];
    }
  }
  for (const auto& [i, k, j, l, theta] : edges) prob.edge.terms.push_back({i, k, j, l, theta});
  std::sort(prob.edge.terms.begin(), prob.edge.terms.end(), [](const EdgeTerm& a, const EdgeTerm& b) {
    return std::tie(a.i, a.k, a.j, a.l) < std::tie(b.i, b.k, b.j, b.l);
  });
  validate_problem(prob);
  return prob;
}

py::dict align_result(const AlignResult& r) {
  py::dict d;
  d["states"] = path_states(r.path);
  d["objective"] = r.objective;
  d["iterations"] = r.iterations;
  d["converged"] = r.converged;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MRF-MRF alignment, homology search statistics, and joint contact prediction";
  m.attr("__version__") = std::string(kToolkitVersion);

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<ArgumentError>(m, "ArgumentError", error.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", error.ptr());

  py::class_<Msa>(m, "Msa")
      .def_property_readonly("depth", &Msa::depth)
      .def_property_readonly("length", &Msa::length)
      .def_readonly("ids", &Msa::ids)
      .def("row", &Msa::row_string, py::arg("r"));
  m.def("parse_msa", py::overload_cast<std::string_view>(&parse_msa), py::arg("text"),
        "Aligned FASTA or Stockholm text.");
  m.def("make_msa", &make_msa, py::arg("sequences"), py::arg("ids") = std::vector<std::string>{});
  m.def("read_msa_file", [](const std::string& path) { return read_msa_file(path); }, py::arg("path"));
  m.def("sequence_weights", &sequence_weights, py::arg("msa"), py::arg("identity_threshold") = 0.62);
  m.def("meff", &meff, py::arg("msa"), py::arg("hamming_threshold") = 0.3);
  m.def("summarize", [](const Msa& msa) {
    const auto s = summarize(msa);
    py::dict d;
    d["rows"] = s.rows;
    d["columns"] = s.columns;
    d["meff"] = s.meff;
    d["neff"] = s.neff;
    d["mean_gap_fraction"] = s.mean_gap_fraction;
    d["gappy_columns"] = s.gappy_columns;
    return d;
  }, py::arg("msa"));

  m.def("apc", [](const Eigen::MatrixXd& s) { return apc(CouplingMap{s, false}).s; }, py::arg("scores"));
  m.def("sp1_eigenvalue", &sp1_eigenvalue, py::arg("m"), py::arg("rho"));
  m.def("soft_threshold", &soft_threshold, py::arg("x"), py::arg("c"));
  m.def("glasso_contacts", [](const Msa& msa, double lambda1, std::size_t min_sep, std::size_t max_iter) {
    const auto w = sequence_weights(msa);
    GglConfig cfg;
    cfg.max_iter = max_iter;
    const auto r = solve_glasso(shrink(empirical_covariance(msa, w)), lambda1, cfg);
    std::vector<std::tuple<std::size_t, std::size_t, double>> out;
    for (const auto& c : contacts_from_precision(r.precision[0], true, min_sep).entries) out.emplace_back(c.i, c.j, c.score);
    return py::make_tuple(out, r.iterations, r.converged);
  }, py::arg("msa"), py::arg("lambda1") = 0.01, py::arg("min_sep") = 6, py::arg("max_iter") = 100,
     "Single-family graphical lasso; returns ([(i, j, score)], iterations, converged), 0-based pairs.");

  m.def("dp_align", [](const std::vector<std::vector<std::vector<double>>>& node) {
    return path_states(dp_align(make_align_problem(node, {}).node));
  }, py::arg("node"));
  m.def("admm_align", [](const std::vector<std::vector<std::vector<double>>>& node,
                         const std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, double>>& edges,
                         double rho, std::size_t max_iter) {
    return align_result(admm_align(make_align_problem(node, edges), AdmmAlignConfig{rho, max_iter}));
  }, py::arg("node"), py::arg("edges") = py::list(), py::arg("rho") = 0.5, py::arg("max_iter") = 50,
     "Edges are (i, k, j, l, theta) with 1-based i < k on the template and j < l on the query.");
  m.def("brute_force_align", [](const std::vector<std::vector<std::vector<double>>>& node,
                                const std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, double>>& edges) {
    return align_result(brute_force_align(make_align_problem(node, edges)));
  }, py::arg("node"), py::arg("edges") = py::list());
  m.def("alignment_accuracy", [](std::size_t rows, std::size_t cols, const std::string& pred, const std::string& ref,
                                 std::size_t offset) {
    const auto a = alignment_accuracy(path_from_states(rows, cols, pred), path_from_states(rows, cols, ref), offset);
    return py::make_tuple(a.precision, a.recall);
  }, py::arg("m"), py::arg("n"), py::arg("pred"), py::arg("ref"), py::arg("offset") = 0);

  m.def("fit_evd", [](const std::vector<double>& scores) {
    const auto f = fit_evd(scores);
    return py::make_tuple(f.mu, f.beta);
  }, py::arg("scores"), "Gumbel maximum-likelihood fit; returns (mu, beta).");
  m.def("pvalue", [](double score, double mu, double beta) { return pvalue(score, EvdFit{mu, beta, 0}); },
        py::arg("score"), py::arg("mu"), py::arg("beta"));

  m.def("mrf_summary", [](const py::bytes& data) {
    const auto mrf = load_mrf(std::string(data));
    py::dict d;
    d["id"] = mrf.id;
    d["length"] = mrf.length();
    d["edges"] = mrf.edges.size();
    d["provenance"] = mrf.provenance;
    d["distance_schema"] = mrf.distance_schema;
    return d;
  }, py::arg("data"), "Reads a binary MRF (as written by mrf-build).");
}
