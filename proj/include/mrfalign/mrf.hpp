#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mrfalign/cnf.hpp"
#include "mrfalign/ggl.hpp"
#include "mrfalign/msa.hpp"

namespace mrfalign {

inline constexpr std::size_t kContextHalfWidth = 5;
inline constexpr std::size_t kContextWidth = 2 * kContextHalfWidth + 1;

struct MrfNode {
  std::size_t index = 0;
  Eigen::MatrixXd context;  // 21 x 11; column c holds profile column index + c - 5, zero outside
  Eigen::VectorXd marginal;
  bool operator==(const MrfNode&) const = default;
};

// Distance bins by upper edge; the last edge is +inf.
struct DistanceSchema {
  std::string name;
  std::vector<double> upper;

  std::size_t bins() const { return upper.size(); }
  bool operator==(const DistanceSchema&) const = default;
};

// [0,4), [4,5), ..., [14,15), [15,inf): 13 bins.
DistanceSchema epad_schema();
// {contact (< 8 A), non-contact}.
DistanceSchema two_bin_schema();
DistanceSchema schema_by_name(std::string_view name);

struct MrfEdge {
  std::size_t i = 0;  // i < k
  std::size_t k = 0;
  double strength = 0.0;
  std::vector<double> dist;  // empty when absent
  bool operator==(const MrfEdge&) const = default;
};

struct Mrf {
  std::string id;
  std::string provenance;  // coupling source tag
  std::vector<MrfNode> nodes;
  std::vector<MrfEdge> edges;  // sorted by (i, k)
  std::string distance_schema;  // empty when no edge carries a distribution
  Eigen::MatrixXd extra;        // optional per-residue features (L x E)

  std::size_t length() const { return nodes.size(); }
  bool has_distances() const { return !distance_schema.empty(); }
  bool operator==(const Mrf& other) const;
};

// Throws FormatError naming the first broken invariant.
void validate_mrf(const Mrf& mrf, std::size_t min_sep = 0);

enum class CouplingSource { MutualInformation, MiPowerSum, Ggl, File };
CouplingSource parse_coupling_source(std::string_view name);
std::string coupling_source_name(CouplingSource source);

struct EdgeBudget {
  enum class Kind { Threshold, TopK };
  Kind kind = Kind::TopK;
  double threshold = 0.1;
  std::size_t top_k = 10;
};

struct MrfBuildConfig {
  CouplingSource source = CouplingSource::MutualInformation;
  EdgeBudget budget;
  std::size_t min_sep = 6;
  int max_power = 3;  // highest MI power in the power-sum source
  double pseudocount = 1.0;
  double lambda1 = 0.01;  // glasso penalty for the ggl source
  GglConfig ggl;
  std::string id;
};

// L x L symmetric coupling scores with zero diagonal (APC applied for the
// computed sources). file_scores is used only by the file source.
Eigen::MatrixXd coupling_scores(const Msa& msa, std::span<const double> weights, const MrfBuildConfig& cfg,
                                const Eigen::MatrixXd* file_scores = nullptr);

// Pairs with |i - k| >= min_sep and positive score, chosen by the budget. With
// top_k every node nominates its k best partners (ties by index) and the union
// is kept.
std::vector<MrfEdge> select_edges(const Eigen::MatrixXd& scores, const EdgeBudget& budget, std::size_t min_sep);

Mrf build_mrf(const Msa& msa, std::span<const double> weights, const MrfBuildConfig& cfg,
              const Eigen::MatrixXd* file_scores = nullptr);

// Node contexts from a profile (rows are columns).
std::vector<MrfNode> build_nodes(const Profile& profile);

// Score matrix from a contact-format file ("i j score", 1-based).
Eigen::MatrixXd parse_coupling_file(std::string_view text, std::size_t L);

// "# bins <schema>" header, then "i k p1 ... pB" rows (1-based). Every edge of
// the MRF must be covered; rows for other pairs are ignored.
Mrf attach_distance_distributions(Mrf mrf, std::string_view text);
// p(contact) = logistic(a * strength + b) on the two-bin schema.
Mrf attach_two_bin(Mrf mrf, double a, double b);
std::string format_distance_distributions(const Mrf& mrf);

std::string serialize_mrf(const Mrf& mrf);
Mrf load_mrf(std::string_view bytes);

// Per-residue inputs for the built-in CNF feature generator.
SequenceFeatures mrf_features(const Mrf& mrf);

}  // namespace mrfalign
