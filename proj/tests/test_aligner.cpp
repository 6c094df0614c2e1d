#include <cmath>
#include <limits>
#include <random>

#include "align_oracles.hpp"
#include "doctest.h"
#include "mrfalign/error.hpp"

using namespace mrfalign;
using namespace mrfalign::testing;
using doctest::Approx;

namespace {

double node_sum(const AlignmentPath& path, const NodePotentialTable& node) {
  double s = 0.0;
  for (const auto& st : path.steps) s += node(st.x, st.y, st.state);
  return s;
}

AlignProblem empty_problem(std::size_t m, std::size_t n) {
  return {m, n, NodePotentialTable(m, n), EdgePotentialTable{m, n, {}}};
}

}  // namespace

TEST_CASE("node DP matches enumeration") {
  std::mt19937_64 rng(1);
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{3, 3}, {4, 3}, {2, 5}, {1, 1}}) {
    for (int rep = 0; rep < 10; ++rep) {
      const auto prob = random_problem(rng, m, n, 0, 0.0);
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& p : enumerate_paths(m, n)) best = std::max(best, node_sum(p, prob.node));
      const auto path = dp_align(prob.node);
      CHECK(is_valid_path(path));
      CHECK(node_sum(path, prob.node) == Approx(best).epsilon(1e-12));
    }
  }
  CHECK(path_states(dp_align(NodePotentialTable(3, 2))) == "TMM");
}

TEST_CASE("objective by hand") {
  auto prob = empty_problem(3, 4);
  prob.node(1, 1, State::M) = 1.0;
  prob.edge.terms = {{1, 3, 1, 4, 2.0}, {2, 3, 2, 3, 7.0}};
  const auto path = path_from_states(3, 4, "MMSM");
  // Node 1; the first term has both vertices on the path, the second does not: 1 + 2 / 4.
  CHECK(objective(path, prob) == Approx(1.5));
  CHECK_THROWS_AS(objective(path_from_states(3, 3, "MMM"), prob), ArgumentError);
}

TEST_CASE("edgeless problems reduce to the node DP") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 200; ++rep) {
    const auto prob = random_problem(rng, 6, 6, 0, 0.0);
    const auto res = admm_align(prob);
    CHECK(res.path == dp_align(prob.node));
    CHECK(res.converged);
    CHECK(res.iterations == 1);
    CHECK(res.objective == Approx(node_sum(res.path, prob.node)).epsilon(1e-12));
  }
}

TEST_CASE("hand-set 4x4 instance where the pair term changes the path") {
  // Zero node potentials, so the node DP takes the diagonal MMMM; one pair term
  // links (1, 1) and (3, 4). Any path through both has length >= 5, so the
  // optimum is 20 / 5 = 4.
  auto prob = empty_problem(4, 4);
  prob.edge.terms = {{1, 3, 1, 4, 20.0}};
  const auto brute = brute_force_align(prob);
  CHECK(brute.objective == Approx(4.0));
  const auto res = admm_align(prob);
  CHECK(res.objective == Approx(4.0));
  CHECK(res.converged);
  const auto& steps = res.path.steps;
  CHECK(std::count_if(steps.begin(), steps.end(), [](const AlignmentStep& s) {
          return s.state == State::M && ((s.x == 1 && s.y == 1) || (s.x == 3 && s.y == 4));
        }) == 2);
  CHECK(res.path.length() == 5);

  // A repulsive term on the diagonal: the optimum avoids one of its vertices.
  auto repel = empty_problem(4, 4);
  repel.edge.terms = {{1, 3, 1, 3, -20.0}};
  CHECK(brute_force_align(repel).objective == Approx(0.0));
  CHECK(admm_align(repel).objective == Approx(0.0));
}

TEST_CASE("brute force bounds ADMM and ADMM never loses to its start") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 60; ++rep) {
    const auto prob = random_problem(rng, 5, 5, 4, 6.0);
    const auto res = admm_align(prob);
    const auto brute = brute_force_align(prob);
    CHECK(brute.objective >= res.objective - 1e-12);
    CHECK(res.objective >= objective(dp_align(prob.node), prob) - 1e-12);
    CHECK(res.objective == Approx(objective(res.path, prob)).epsilon(1e-12));
    CHECK(is_valid_path(res.path));
    CHECK(is_valid_path(res.final_path));
  }
}

TEST_CASE("trace bookkeeping and determinism") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 40; ++rep) {
    const auto prob = random_problem(rng, 6, 5, 4, 25.0);
    AdmmAlignConfig cfg;
    cfg.max_iter = 8;
    const auto a = admm_align(prob, cfg), b = admm_align(prob, cfg);
    CHECK(a.path == b.path);
    CHECK(a.objective == b.objective);
    CHECK(a.iterations == b.iterations);
    REQUIRE(a.trace.size() == a.iterations);
    CHECK(a.iterations <= 8);
    double best = objective(dp_align(prob.node), prob);
    for (const auto& t : a.trace) best = std::max(best, t.objective);
    CHECK(a.objective == best);
    CHECK(a.trace.back().objective == Approx(objective(a.final_path, prob)).epsilon(1e-12));
    if (a.converged) {
      CHECK(a.trace.back().disagreement == 0.0);
    } else {
      CHECK(a.iterations == 8);
      CHECK(a.trace.back().disagreement > 0.0);
    }
  }
}

TEST_CASE("problem validation") {
  auto prob = empty_problem(3, 3);
  AdmmAlignConfig bad_rho;
  bad_rho.rho = 0.0;
  CHECK_THROWS_AS(admm_align(prob, bad_rho), ArgumentError);
  AdmmAlignConfig no_iter;
  no_iter.max_iter = 0;
  CHECK_THROWS_AS(admm_align(prob, no_iter), ArgumentError);
  auto outside = prob;
  outside.edge.terms = {{1, 4, 1, 2, 1.0}};
  CHECK_THROWS_AS(admm_align(outside), ArgumentError);
  auto unordered = prob;
  unordered.edge.terms = {{2, 1, 1, 2, 1.0}};
  CHECK_THROWS_AS(validate_problem(unordered), ArgumentError);
  auto nan = prob;
  nan.node(1, 1, State::M) = std::nan("");
  CHECK_THROWS_AS(admm_align(nan), ArgumentError);
  auto shape = prob;
  shape.node = NodePotentialTable(3, 4);
  CHECK_THROWS_AS(validate_problem(shape), ArgumentError);
  CHECK_THROWS_AS(brute_force_align(empty_problem(8, 3)), ArgumentError);
}

TEST_CASE("output formats") {
  const auto path = path_from_states(2, 2, "MTS");
  CHECK(format_paired_fasta(path, "t", "AC", "s", "DE") == ">t\nAC-\n>s\nD-E\n");
  CHECK_THROWS_AS(format_paired_fasta(path, "t", "ACD", "s", "DE"), ArgumentError);

  std::mt19937_64 rng(5);
  const auto prob = random_problem(rng, 6, 4, 3, 10.0);
  const auto res = admm_align(prob);
  const auto text = format_triples(res);
  CHECK(text.rfind("# lattice 6 4\n", 0) == 0);
  CHECK(text.find("# objective ") != std::string::npos);
  CHECK(parse_triples(text) == res.path);
  CHECK_THROWS_AS(parse_triples("1 1 M\n"), FormatError);
  CHECK_THROWS_AS(parse_triples("# lattice 2 2\n1 1 M\n2 1 Q\n"), FormatError);
  CHECK_THROWS_AS(parse_triples("# lattice 2 2\n1 1 M\n"), FormatError);
  CHECK_THROWS_AS(parse_triples("# lattice 2 2\n1 1 M\n2 2\n"), FormatError);
}

TEST_CASE("reference triples with distances") {
  const auto ref = parse_reference_triples("# lattice 3 2\n1 1 M 0.5\n2 1 T\n3 2 M 2.25\n");
  CHECK(path_states(ref.path) == "MTM");
  CHECK(ref.distances == std::vector<double>{0.5, 2.25});
  CHECK(parse_reference_triples("# lattice 1 1\n1 1 M\n").distances.empty());
  CHECK_THROWS_AS(parse_reference_triples("# lattice 3 2\n1 1 M 0.5\n2 1 T\n3 2 M\n"), FormatError);
  CHECK_THROWS_AS(parse_reference_triples("# lattice 2 1\n1 1 M 0.5\n2 1 T 1.0\n"), FormatError);
  CHECK_THROWS_AS(parse_reference_triples("# lattice 1 1\n1 1 M -1\n"), FormatError);
  CHECK_THROWS_AS(parse_triples("# lattice 1 1\n1 1 M 0.5\n"), FormatError);
}

TEST_CASE("profile alignment recovers an offset copy") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> aa(0, 19);
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(12, 21, 0.01);
  for (Eigen::Index c = 0; c < 12; ++c) {
    a(c, 20) = 0.0;
    a(c, aa(rng)) += 0.8;
  }
  // b = a without its first three columns.
  const Eigen::MatrixXd b = a.bottomRows(9);
  const auto al = align_profiles(a, b);
  CHECK(al.mag.rows() == 12);
  CHECK(al.mag.cols() == 9);
  CHECK(al.mag.minCoeff() >= 0.0);
  CHECK(al.mag.maxCoeff() <= 1.0);
  for (Eigen::Index x = 0; x < 12; ++x) CHECK(al.mag.row(x).sum() <= 1.0 + 1e-9);
  std::size_t on_offset = 0;
  for (const auto& s : al.path.steps) {
    if (s.state == State::M) on_offset += s.x == s.y + 3;
  }
  CHECK(on_offset >= 8);
  CHECK_THROWS_AS(align_profiles(a, Eigen::MatrixXd(0, 21)), ArgumentError);
}
