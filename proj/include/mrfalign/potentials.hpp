#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "mrfalign/cnf.hpp"
#include "mrfalign/mrf.hpp"

namespace mrfalign {

// theta[x][y][u] for 0 <= x <= m, 0 <= y <= n. Entries a state cannot reach
// (M on row or column 0) are 0.
struct NodePotentialTable {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<double> theta;

  NodePotentialTable() = default;
  NodePotentialTable(std::size_t m_, std::size_t n_) : m(m_), n(n_), theta((m_ + 1) * (n_ + 1) * kNumStates, 0.0) {}

  std::size_t offset(std::size_t x, std::size_t y, State u) const { return (x * (n + 1) + y) * kNumStates + index(u); }
  double& operator()(std::size_t x, std::size_t y, State u) { return theta[offset(x, y, u)]; }
  double operator()(std::size_t x, std::size_t y, State u) const { return theta[offset(x, y, u)]; }
};

// Node-level energy of state v at a vertex: the mean of the three transition
// networks entering (x, y, v).
double vertex_energy(const CnfModel& model, std::span<const double> f, State v);

struct BackgroundModel {
  std::vector<SequenceFeatures> library;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 1;
};

struct BackgroundExpectation {
  std::array<double, kNumStates> mean{};
  std::array<double, kNumStates> standard_error{};
  std::size_t samples = 0;
};

// Monte Carlo mean of the vertex energies. Each sample composes a pseudo
// template of length m and a pseudo target of length n from columns drawn
// uniformly over the pooled library, picks a uniform vertex (x, y), and
// evaluates all three states there.
BackgroundExpectation background_expectation(const CnfModel& model, std::size_t m, std::size_t n,
                                             const BackgroundModel& bg);

// Mean of the vertex energies over every vertex of the (T, S) pair itself.
BackgroundExpectation background_exhaustive(const CnfModel& model, const SequenceFeatures& templ,
                                            const SequenceFeatures& target);

inline constexpr std::size_t kShapeBucket = 50;

// Caches expectations per (model, length bucket) with buckets of 50 residues;
// each bucket is sampled at its midpoint length.
class BackgroundCache {
 public:
  explicit BackgroundCache(BackgroundModel bg) : bg_(std::move(bg)) {}
  BackgroundExpectation get(const CnfModel& model, std::size_t m, std::size_t n);
  static std::size_t bucket_length(std::size_t length);
  std::size_t size() const;

 private:
  BackgroundModel bg_;
  mutable std::mutex mutex_;
  std::map<std::tuple<std::uint64_t, std::size_t, std::size_t>, BackgroundExpectation> cache_;
};

// Throws ArgumentError unless the model was trained on the built-in schema with
// the given number of extra columns.
void check_scorer_schema(const CnfModel& model, std::size_t extra_columns);

// theta = vertex energy - expectation of its state.
NodePotentialTable node_potentials(const CnfModel& model, const SequenceFeatures& templ,
                                   const SequenceFeatures& target, const BackgroundExpectation& bg);

struct EdgePotentialModel {
  DistanceSchema schema;
  Eigen::MatrixXd lo;  // bins x bins, template bin by target bin
};

// Implementation default for the two-bin schema: contact-contact 1, mismatch -0.5, else 0.
EdgePotentialModel default_two_bin_lo();
// "# bins <schema>" header, then one row of log-odds per bin.
EdgePotentialModel parse_lo(std::string_view text);
std::string format_lo(const EdgePotentialModel& lo);

double edge_potential(std::span<const double> dist_t, std::span<const double> dist_s, const EdgePotentialModel& lo);

// Match-match pair term between template edge (i, k) and target edge (j, l).
struct EdgeTerm {
  std::size_t i = 0;  // i < k, 1-based lattice coordinates
  std::size_t k = 0;
  std::size_t j = 0;  // j < l
  std::size_t l = 0;
  double theta = 0.0;
  bool operator==(const EdgeTerm&) const = default;
};

struct EdgePotentialTable {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<EdgeTerm> terms;  // sorted by (i, k, j, l)
};

EdgePotentialTable build_edge_potentials(const Mrf& templ, const Mrf& target, const EdgePotentialModel& lo,
                                         double prune_below = 0.0);

}  // namespace mrfalign
