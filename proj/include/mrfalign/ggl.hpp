#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mrfalign/gauss.hpp"
#include "mrfalign/msa.hpp"

namespace mrfalign {

// Covariances of K related families; index target_index is the prediction target.
struct FamilySet {
  std::vector<BlockCovariance> covariances;
  std::size_t target_index = 0;
};

struct AlignedColumn {
  std::size_t column = 0;
  double probability = 1.0;  // marginal alignment probability, in (0, 1]
};

// For each auxiliary family, the partner (if any) of every target column.
// Auxiliary family n is family n + 1 in group specs built from this mapping.
struct ColumnMapping {
  std::size_t target_length = 0;
  std::vector<std::vector<std::optional<AlignedColumn>>> aux;

  std::size_t families() const { return aux.size(); }
};

struct GroupMember {
  std::size_t family = 0;
  std::size_t i = 0;  // i < j
  std::size_t j = 0;
  bool operator==(const GroupMember&) const = default;
};

struct Group {
  std::vector<GroupMember> members;
  double lambda = 0.0;
};

struct GroupSpec {
  std::vector<Group> groups;
};

struct GglConfig {
  double lambda1 = 0.01;
  double alpha = 0.001;
  double lambda2 = 0.005;
  double rho = 0.1;
  std::size_t max_iter = 100;
  double tol = 1e-5;
  double prior_floor = 0.3;
  std::size_t threads = 1;
};

// Predicted contact probabilities for the target family. Diagonal is 1.
struct PriorMatrix {
  Eigen::MatrixXd p;
};

struct GglResult {
  std::vector<BlockPrecision> precision;  // positive-definite iterate
  std::vector<BlockPrecision> sparse;     // thresholded copy
  std::size_t iterations = 0;
  bool converged = false;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  std::vector<std::pair<double, double>> trace;  // (primal, dual) per iteration
};

// One group per target column pair (i < j); lambda follows the conservation rule
// alpha * sqrt(N - 1) * geometric_mean(P_n), P_n = P_i * P_j, N = group size.
GroupSpec build_groups(const ColumnMapping& mapping, double alpha);

GglResult solve_glasso(const BlockCovariance& cov, double lambda1, const GglConfig& cfg);
GglResult solve_ggl(const FamilySet& fams, const GroupSpec& groups, const GglConfig& cfg,
                    const PriorMatrix* prior = nullptr);

// Per-block l1 weights for one family: lambda1 + lambda2 / max(P_ij, floor).
Eigen::MatrixXd block_penalties(std::size_t L, const GglConfig& cfg, const PriorMatrix* prior);

// Closed-form minimizer of -log|O| + tr(O M) ... : returns V diag(d) V^T with
// d = (-m + sqrt(m^2 + 4 rho)) / (2 rho) over the eigenpairs of M. The matrix is
// split into connected components of its nonzero pattern first.
Eigen::MatrixXd sp1_update(const Eigen::MatrixXd& M, double rho);

// Scalar form of the eigenvalue map.
double sp1_eigenvalue(double m, double rho);

// Proximal step for the l1 + group penalty. block_lambda[k] holds the l1 weight
// of every block of family k; thresholds are block_lambda / rho.
std::vector<BlockMatrix> sp2_update(const std::vector<BlockMatrix>& A,
                                    const std::vector<Eigen::MatrixXd>& block_lambda,
                                    const GroupSpec& groups, double rho);

double soft_threshold(double x, double c);

// Penalized negative log-likelihood of one family (minimization form).
double glasso_objective(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& sigma, double lambda1);

struct Contact {
  std::size_t i = 0;
  std::size_t j = 0;
  double score = 0.0;
  bool operator==(const Contact&) const = default;
};

struct ContactList {
  std::size_t L = 0;
  std::vector<Contact> entries;  // i < j, descending score, ties by (i, j)
};

// Ranks pairs with |i - j| >= min_sep by descending score.
ContactList rank_contacts(const Eigen::MatrixXd& scores, std::size_t min_sep);
ContactList contacts_from_precision(const BlockPrecision& prec, bool apply_apc = true,
                                    std::size_t min_sep = 6);

// Weighted vote over per-family contact lists. lists[0] is the target family
// (identity mapping); lists[n + 1] belongs to mapping.aux[n].
ContactList majority_vote(const std::vector<ContactList>& lists, const ColumnMapping& mapping,
                          const std::vector<double>& family_weights);

// Appends auxiliary rows re-indexed onto target columns; unmapped columns are gaps.
Msa merge_families(const Msa& target, const std::vector<Msa>& aux, const ColumnMapping& mapping);

// "i j p" lines, 1-based; unlisted pairs get probability 0.
PriorMatrix parse_prior(std::string_view text, std::size_t L);
// "aux target_col aux_col prob" lines, all indices 1-based.
ColumnMapping parse_column_mapping(std::string_view text, std::size_t target_length,
                                   const std::vector<std::size_t>& aux_lengths);

std::string format_contacts(const ContactList& list, std::string_view header = {});
ContactList parse_contacts(std::string_view text);

}  // namespace mrfalign
