#pragma once

// Random alignment problems for the aligner tests and the acceptance suite.

#include <algorithm>
#include <random>
#include <tuple>

#include "mrfalign/aligner.hpp"

namespace mrfalign::testing {

// Match potentials ~ N(0, 1); gap potentials ~ N(0, 1) - 0.5 per template row
// (It) or target column (Is); between 1 and max_terms pair terms with
// theta ~ U(-edge_scale, edge_scale). max_terms = 0 gives an edgeless problem.
inline AlignProblem random_problem(std::mt19937_64& rng, std::size_t m, std::size_t n, int max_terms,
                                   double edge_scale) {
  std::normal_distribution<double> g(0.0, 1.0);
  AlignProblem p{m, n, NodePotentialTable(m, n), EdgePotentialTable{m, n, {}}};
  std::vector<double> it(m + 1), is(n + 1);
  for (auto& v : it) v = g(rng) - 0.5;
  for (auto& v : is) v = g(rng) - 0.5;
  for (std::size_t x = 0; x <= m; ++x) {
    for (std::size_t y = 0; y <= n; ++y) {
      if (x > 0 && y > 0) p.node(x, y, State::M) = g(rng);
      if (x > 0) p.node(x, y, State::It) = it[x];
      if (y > 0) p.node(x, y, State::Is) = is[y];
    }
  }
  if (max_terms == 0) return p;
  std::uniform_int_distribution<int> count(1, max_terms);
  std::uniform_int_distribution<std::size_t> pm(1, m), pn(1, n);
  std::uniform_real_distribution<double> theta(-edge_scale, edge_scale);
  for (int t = count(rng); t > 0;) {
    std::size_t i = pm(rng), k = pm(rng), j = pn(rng), l = pn(rng);
    if (i == k || j == l) continue;
    if (i > k) std::swap(i, k);
    if (j > l) std::swap(j, l);
    p.edge.terms.push_back({i, k, j, l, theta(rng)});
    --t;
  }
  std::sort(p.edge.terms.begin(), p.edge.terms.end(),
            [](const EdgeTerm& a, const EdgeTerm& b) { return std::tie(a.i, a.k, a.j, a.l) < std::tie(b.i, b.k, b.j, b.l); });
  return p;
}

}  // namespace mrfalign::testing
