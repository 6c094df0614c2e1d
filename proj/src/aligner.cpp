#include "mrfalign/aligner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mrfalign/alphabet.hpp"
#include "mrfalign/cnf.hpp"
#include "mrfalign/error.hpp"
#include "mrfalign/io.hpp"

namespace mrfalign {

namespace {

// Partner records of match vertices, sorted by the owning vertex key.
struct Partner {
  std::size_t vertex = 0;   // x * (n + 1) + y
  std::size_t partner = 0;  // same encoding
  double theta = 0.0;
};

struct PairIndex {
  std::vector<Partner> records;

  PairIndex(const EdgePotentialTable& table, std::size_t n) {
    records.reserve(2 * table.terms.size());
    for (const auto& t : table.terms) {
      const std::size_t a = t.i * (n + 1) + t.j, b = t.k * (n + 1) + t.l;
      records.push_back({a, b, t.theta});
      records.push_back({b, a, t.theta});
    }
    std::stable_sort(records.begin(), records.end(), [](const Partner& p, const Partner& q) { return p.vertex < q.vertex; });
  }

  auto range(std::size_t vertex) const {
    return std::equal_range(records.begin(), records.end(), Partner{vertex, 0, 0.0},
                            [](const Partner& p, const Partner& q) { return p.vertex < q.vertex; });
  }
};

std::vector<std::uint8_t> indicators(const AlignmentPath& path) {
  std::vector<std::uint8_t> ind((path.m + 1) * (path.n + 1) * kNumStates, 0);
  for (const auto& s : path.steps) ind[(s.x * (path.n + 1) + s.y) * kNumStates + index(s.state)] = 1;
  return ind;
}

double disagreement(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t diff = 0;
  for (std::size_t k = 0; k < a.size(); ++k) diff += a[k] != b[k];
  return std::sqrt(static_cast<double>(diff));
}

// Adds scale * theta at the partners of every match vertex on the path. Each
// stored term stands for the two ordered pairs of the objective's double sum,
// so each direction carries half of it.
void add_pair_terms(NodePotentialTable& out, const AlignmentPath& path, const PairIndex& index_, double scale) {
  const std::size_t n = path.n;
  for (const auto& s : path.steps) {
    if (s.state != State::M) continue;
    const auto [lo, hi] = index_.range(s.x * (n + 1) + s.y);
    for (auto it = lo; it != hi; ++it) out.theta[it->partner * kNumStates + index(State::M)] += it->theta * scale;
  }
}

}  // namespace

void validate_problem(const AlignProblem& prob) {
  if (prob.m == 0 || prob.n == 0) throw ArgumentError("align problem: lattice dimensions must be positive");
  if (prob.node.m != prob.m || prob.node.n != prob.n) throw ArgumentError("align problem: node table does not match (m, n)");
  for (double v : prob.node.theta) {
    if (!std::isfinite(v)) throw ArgumentError("align problem: non-finite node potential");
  }
  if (prob.edge.m != prob.m || prob.edge.n != prob.n) throw ArgumentError("align problem: edge table does not match (m, n)");
  for (const auto& t : prob.edge.terms) {
    if (!(1 <= t.i && t.i < t.k && t.k <= prob.m && 1 <= t.j && t.j < t.l && t.l <= prob.n)) {
      throw ArgumentError("align problem: edge term outside the lattice");
    }
    if (!std::isfinite(t.theta)) throw ArgumentError("align problem: non-finite edge potential");
  }
}

AlignmentPath dp_align(const NodePotentialTable& scores) {
  return viterbi(scores.m, scores.n, [&](std::size_t x, std::size_t y, State, State v) { return scores(x, y, v); });
}

double objective(const AlignmentPath& path, const AlignProblem& prob) {
  if (path.m != prob.m || path.n != prob.n) throw ArgumentError("objective: path does not match the problem");
  validate_path(path);
  double node = 0.0;
  std::vector<std::size_t> partner(prob.m + 1, 0);
  for (const auto& s : path.steps) {
    node += prob.node(s.x, s.y, s.state);
    if (s.state == State::M) partner[s.x] = s.y;
  }
  double edge = 0.0;
  for (const auto& t : prob.edge.terms) {
    if (partner[t.i] == t.j && partner[t.k] == t.l) edge += t.theta;
  }
  return node + edge / static_cast<double>(path.length());
}

AlignResult admm_align(const AlignProblem& prob, const AdmmAlignConfig& cfg) {
  validate_problem(prob);
  if (!(cfg.rho > 0.0)) throw ArgumentError("admm_align: rho must be positive");
  if (cfg.max_iter == 0) throw ArgumentError("admm_align: max_iter must be at least 1");
  const PairIndex pairs(prob.edge, prob.n);
  const double half_rho = 0.5 * cfg.rho;

  AlignResult res;
  AlignmentPath z = dp_align(prob.node);
  res.path = z;
  res.objective = objective(z, prob);
  res.final_path = z;
  std::vector<double> lambda(prob.node.theta.size(), 0.0);
  double len = static_cast<double>(z.length());

  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    const auto zi = indicators(z);
    NodePotentialTable c(prob.m, prob.n);
    for (std::size_t k = 0; k < c.theta.size(); ++k) c.theta[k] = -lambda[k] - half_rho * (1.0 - 2.0 * zi[k]);
    add_pair_terms(c, z, pairs, 0.5 / len);
    const AlignmentPath y = dp_align(c);

    const auto yi = indicators(y);
    NodePotentialTable d(prob.m, prob.n);
    for (std::size_t k = 0; k < d.theta.size(); ++k) {
      d.theta[k] = prob.node.theta[k] + lambda[k] - half_rho * (1.0 - 2.0 * yi[k]);
    }
    add_pair_terms(d, y, pairs, 0.5 / len);
    const AlignmentPath z_new = dp_align(d);

    const auto zn = indicators(z_new);
    for (std::size_t k = 0; k < lambda.size(); ++k) {
      lambda[k] -= cfg.rho * (static_cast<double>(zn[k]) - static_cast<double>(yi[k]));
    }
    len = static_cast<double>(z_new.length());
    const double obj = objective(z_new, prob);
    res.trace.push_back({obj, disagreement(zn, yi)});
    res.iterations = it;
    if (obj > res.objective) {
      res.objective = obj;
      res.path = z_new;
    }
    z = z_new;
    if (z_new == y) {
      res.converged = true;
      break;
    }
  }
  res.final_path = z;
  return res;
}

AlignResult brute_force_align(const AlignProblem& prob) {
  validate_problem(prob);
  AlignResult res;
  res.objective = -std::numeric_limits<double>::infinity();
  for (const auto& p : enumerate_paths(prob.m, prob.n)) {
    const double obj = objective(p, prob);
    if (obj > res.objective) {
      res.objective = obj;
      res.path = p;
    }
  }
  res.converged = true;
  res.final_path = res.path;
  return res;
}

std::string format_paired_fasta(const AlignmentPath& path, const std::string& template_id,
                                const std::string& template_seq, const std::string& target_id,
                                const std::string& target_seq) {
  validate_path(path);
  if (template_seq.size() != path.m || target_seq.size() != path.n) {
    throw ArgumentError("format_paired_fasta: sequence lengths do not match the path");
  }
  std::string t, s;
  for (const auto& st : path.steps) {
    t.push_back(step_x(st.state) ? template_seq[st.x - 1] : '-');
    s.push_back(step_y(st.state) ? target_seq[st.y - 1] : '-');
  }
  return ">" + template_id + "\n" + t + "\n>" + target_id + "\n" + s + "\n";
}

std::string format_triples(const AlignResult& res) {
  std::string out = "# lattice " + std::to_string(res.path.m) + " " + std::to_string(res.path.n) + "\n";
  for (const auto& s : res.path.steps) {
    out += std::to_string(s.x) + " " + std::to_string(s.y) + " " + state_char(s.state) + "\n";
  }
  out += "# objective " + format_double(res.objective) + "\n";
  out += "# iterations " + std::to_string(res.iterations) + " converged " + (res.converged ? "1" : "0") + "\n";
  for (std::size_t k = 0; k < res.trace.size(); ++k) {
    out += "# trace " + std::to_string(k + 1) + " " + format_double(res.trace[k].objective) + " " +
           format_double(res.trace[k].disagreement) + "\n";
  }
  return out;
}

namespace {

ReferenceTriples parse_triples_impl(std::string_view text, bool allow_distances) {
  ReferenceTriples out;
  auto& path = out.path;
  bool header = false;
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.rfind("# lattice", 0) == 0) {
      const auto parts = tokenize_lines(line.substr(1));
      if (parts.empty() || parts.front().tokens.size() != 3) throw FormatError("triples: malformed '# lattice' header");
      path.m = static_cast<std::size_t>(parse_integer(parts.front().tokens[1], 1));
      path.n = static_cast<std::size_t>(parse_integer(parts.front().tokens[2], 1));
      header = true;
      break;
    }
  }
  if (!header) throw FormatError("triples: missing '# lattice m n' header");
  std::size_t with_distance = 0, matches = 0;
  for (const auto& line : tokenize_lines(text)) {
    const std::size_t width = line.tokens.size();
    if ((width != 3 && !(allow_distances && width == 4)) || line.tokens[2].size() != 1) {
      throw FormatError("triples: line " + std::to_string(line.number) + " must read 'x y state" +
                        (allow_distances ? " [distance]'" : "'"));
    }
    const auto x = parse_integer(line.tokens[0], line.number), y = parse_integer(line.tokens[1], line.number);
    if (x < 0 || y < 0) throw FormatError("triples: negative coordinate on line " + std::to_string(line.number));
    State state;
    try {
      state = parse_state(line.tokens[2][0]);
    } catch (const ArgumentError& e) {
      throw FormatError("triples: line " + std::to_string(line.number) + ": " + e.what());
    }
    path.steps.push_back({static_cast<std::size_t>(x), static_cast<std::size_t>(y), state});
    if (state == State::M) ++matches;
    if (width == 4) {
      if (state != State::M) throw FormatError("triples: distance on a gap step, line " + std::to_string(line.number));
      const double d = parse_double(line.tokens[3], line.number);
      if (!(d >= 0.0) || !std::isfinite(d)) throw FormatError("triples: bad distance on line " + std::to_string(line.number));
      out.distances.push_back(d);
      ++with_distance;
    }
  }
  if (with_distance != 0 && with_distance != matches) {
    throw FormatError("triples: distances must be given on every match line or none");
  }
  try {
    validate_path(path);
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("triples: ") + e.what());
  }
  return out;
}

}  // namespace

AlignmentPath parse_triples(std::string_view text) { return parse_triples_impl(text, false).path; }

ReferenceTriples parse_reference_triples(std::string_view text) { return parse_triples_impl(text, true); }

ProfileAlignment align_profiles(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double gap_score) {
  if (a.rows() == 0 || b.rows() == 0 || a.cols() != b.cols()) {
    throw ArgumentError("align_profiles: profiles must be non-empty with the same alphabet");
  }
  if (!std::isfinite(gap_score)) throw ArgumentError("align_profiles: gap score must be finite");
  const auto m = static_cast<std::size_t>(a.rows()), n = static_cast<std::size_t>(b.rows());
  const Eigen::MatrixXd sim = a.leftCols(kNumAminoAcids) * b.leftCols(kNumAminoAcids).transpose();
  LatticeScores scores(m, n);
  for (std::size_t x = 0; x <= m; ++x) {
    for (std::size_t y = 0; y <= n; ++y) {
      for (State u : kStates) {
        for (State v : kStates) {
          double e = gap_score;
          if (v == State::M) {
            if (x == 0 || y == 0) continue;
            e = std::log(20.0 * sim(static_cast<Eigen::Index>(x - 1), static_cast<Eigen::Index>(y - 1)) + 0.05);
          }
          scores(x, y, u, v) = e;
        }
      }
    }
  }
  ProfileAlignment out;
  out.mag = marginals(scores, forward(scores), backward(scores));
  out.path = mea_decode(out.mag);
  return out;
}

}  // namespace mrfalign
