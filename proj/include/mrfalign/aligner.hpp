#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mrfalign/lattice.hpp"
#include "mrfalign/potentials.hpp"

namespace mrfalign {

struct AlignProblem {
  std::size_t m = 0;
  std::size_t n = 0;
  NodePotentialTable node;
  EdgePotentialTable edge;
};

// Throws ArgumentError if the tables disagree with (m, n), an edge term leaves
// the lattice, or a value is not finite.
void validate_problem(const AlignProblem& prob);

struct AdmmAlignConfig {
  double rho = 0.5;
  std::size_t max_iter = 50;
};

struct AlignTraceEntry {
  double objective = 0.0;     // of the z iterate
  double disagreement = 0.0;  // |z - y| over vertex indicators
};

struct AlignResult {
  AlignmentPath path;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<AlignTraceEntry> trace;
  AlignmentPath final_path;  // last z iterate, whatever its objective
};

// Path maximizing the sum of vertex scores (laid out like NodePotentialTable).
// Ties prefer M, then It, then Is at every cell.
AlignmentPath dp_align(const NodePotentialTable& scores);

// Node sum plus (1 / |path|) times the edge terms whose two match vertices are
// both on the path.
double objective(const AlignmentPath& path, const AlignProblem& prob);

AlignResult admm_align(const AlignProblem& prob, const AdmmAlignConfig& cfg = {});

// Exhaustive search; refuses m or n above kMaxEnumeration.
AlignResult brute_force_align(const AlignProblem& prob);

// Paired FASTA; residues are taken from the two sequences and gaps inserted per the path.
std::string format_paired_fasta(const AlignmentPath& path, const std::string& template_id,
                                const std::string& template_seq, const std::string& target_id,
                                const std::string& target_seq);
// "# lattice m n" header, "x y state" triples (1-based, state M/T/S), and a
// footer with the objective and per-iteration trace.
std::string format_triples(const AlignResult& res);
AlignmentPath parse_triples(std::string_view text);

// Triples that may carry a fourth column on match lines: the distance (in
// Angstrom) between the aligned residues after superposition.
struct ReferenceTriples {
  AlignmentPath path;
  std::vector<double> distances;  // one per match step in path order, or empty
};
ReferenceTriples parse_reference_triples(std::string_view text);

// Posterior alignment of two profiles (rows are columns of the family, 21
// symbols). Match score log(20 p.q + 0.05) over the amino acids, every gap
// vertex scores gap_score; decoded by maximum expected accuracy.
struct ProfileAlignment {
  AlignmentPath path;
  Eigen::MatrixXd mag;  // m x n marginal match probabilities
};
ProfileAlignment align_profiles(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double gap_score = -1.0);

}  // namespace mrfalign
