#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mrfalign/lattice.hpp"

namespace mrfalign {

inline constexpr std::size_t kNumTransitions = kNumStates * kNumStates;
constexpr std::size_t transition_index(State u, State v) { return index(u) * kNumStates + index(v); }

// Feature vectors f(x, y, v) for every lattice vertex and destination state.
// All nine transition networks entering (x, y, v) read the same vector.
struct FeatureTable {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t F = 0;
  std::vector<double> values;

  FeatureTable() = default;
  FeatureTable(std::size_t m_, std::size_t n_, std::size_t F_)
      : m(m_), n(n_), F(F_), values((m_ + 1) * (n_ + 1) * kNumStates * F_, 0.0) {}

  std::size_t offset(std::size_t x, std::size_t y, State v) const {
    return ((x * (n + 1) + y) * kNumStates + index(v)) * F;
  }
  std::span<const double> at(std::size_t x, std::size_t y, State v) const {
    return {values.data() + offset(x, y, v), F};
  }
  std::span<double> at(std::size_t x, std::size_t y, State v) {
    return {values.data() + offset(x, y, v), F};
  }
};

// Per-residue inputs of the built-in feature generator.
struct SequenceFeatures {
  Eigen::MatrixXd profile;  // L x 21 marginals, gap last
  Eigen::MatrixXd extra;    // L x E optional per-residue values (E may be 0)

  std::size_t length() const { return static_cast<std::size_t>(profile.rows()); }
};

// Built-in generator. Per vertex: bias, log profile similarity at the pair and
// averaged over a +-2 diagonal window, conservation and gap fraction of each
// consumed residue, a terminal indicator, then the extra columns of the template
// and target residues. Sides not consumed by the move are zero.
struct ProfileFeatures {
  static constexpr std::size_t kBase = 8;
  static constexpr int kWindow = 2;

  static std::size_t dimension(std::size_t extra_columns) { return kBase + 2 * extra_columns; }
  static std::string schema(std::size_t extra_columns);
  // Largest absolute feature value for the given inputs.
  static double bound(const SequenceFeatures& templ, const SequenceFeatures& target);
  static FeatureTable build(const SequenceFeatures& templ, const SequenceFeatures& target);
  static void vertex(const SequenceFeatures& templ, const SequenceFeatures& target, std::size_t x,
                     std::size_t y, State v, std::span<double> out);
};

// Parses an optional per-residue feature file: a header "# columns name..."
// and one row per residue.
Eigen::MatrixXd parse_residue_features(std::string_view text, std::size_t length);

// Nine single-hidden-layer networks, one per ordered transition (u, v):
// E = sum_j lambda_j * sigmoid(w_j . f).
struct CnfModel {
  std::size_t hidden = 12;
  std::size_t features = 0;
  double l2 = 0.0;
  std::string schema;
  std::array<Eigen::MatrixXd, kNumTransitions> w;       // hidden x features
  std::array<Eigen::VectorXd, kNumTransitions> lambda;  // hidden

  static CnfModel zeros(std::size_t features, std::size_t hidden = 12, std::string schema = {});

  std::size_t parameter_count() const { return kNumTransitions * hidden * (features + 1); }
  // Order: for each transition, w column-major then lambda.
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& theta);
  bool operator==(const CnfModel& other) const;
};

double sigmoid(double a);
double transition_score(const CnfModel& model, std::span<const double> f, State u, State v);

// Transition scores E(x, y, u, v) of entering (x, y, v) from state u. Moves
// leaving the origin use u = M.
struct LatticeScores {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<double> e;

  LatticeScores() = default;
  LatticeScores(std::size_t m_, std::size_t n_) : m(m_), n(n_), e((m_ + 1) * (n_ + 1) * kNumTransitions, 0.0) {}

  std::size_t offset(std::size_t x, std::size_t y, State u, State v) const {
    return (x * (n + 1) + y) * kNumTransitions + transition_index(u, v);
  }
  double& operator()(std::size_t x, std::size_t y, State u, State v) { return e[offset(x, y, u, v)]; }
  double operator()(std::size_t x, std::size_t y, State u, State v) const { return e[offset(x, y, u, v)]; }
};

LatticeScores score_lattice(const CnfModel& model, const FeatureTable& feat);

// Log-space messages. fwd(x, y, v) sums paths ending at (x, y) in state v;
// bwd(x, y, u) sums completions leaving (x, y) in state u.
struct Messages {
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<double> table;
  double logZ = 0.0;

  std::size_t offset(std::size_t x, std::size_t y, State s) const { return (x * (n + 1) + y) * kNumStates + index(s); }
  double operator()(std::size_t x, std::size_t y, State s) const { return table[offset(x, y, s)]; }
};

Messages forward(const LatticeScores& scores);
Messages backward(const LatticeScores& scores);

double path_score(const LatticeScores& scores, const AlignmentPath& path);

// Match marginals: entry (x - 1, y - 1) is P(path matches x with y).
Eigen::MatrixXd marginals(const LatticeScores& scores, const Messages& fwd, const Messages& bwd);
Eigen::MatrixXd marginals(const CnfModel& model, const FeatureTable& feat);

// Posterior of every transition (same layout as LatticeScores).
LatticeScores transition_posteriors(const LatticeScores& scores, const Messages& fwd, const Messages& bwd);

double log_partition(const CnfModel& model, const FeatureTable& feat);
double loglik(const CnfModel& model, const FeatureTable& feat, const AlignmentPath& path);
Eigen::VectorXd grad_loglik(const CnfModel& model, const FeatureTable& feat, const AlignmentPath& path);

// Reference path plus a weight per step (0 at gap steps).
struct ReferenceAlignment {
  AlignmentPath path;
  std::vector<double> weights;
};

// Throws ArgumentError for a weight that is negative, above 1, non-finite, or
// nonzero at a gap step.
void validate_reference(const ReferenceAlignment& ref);

double tm_d0(std::size_t target_length);
double tm_weight(double distance, std::size_t target_length);
// distances holds one value per match step, in path order.
ReferenceAlignment make_reference(const AlignmentPath& path, std::span<const double> distances,
                                  std::size_t target_length);

// (1 / min(m, n)) * sum over reference matches of w_i * MAG(x_i, y_i).
double expected_tmscore(const CnfModel& model, const FeatureTable& feat, const ReferenceAlignment& ref);
Eigen::VectorXd grad_expected_tmscore(const CnfModel& model, const FeatureTable& feat,
                                      const ReferenceAlignment& ref);

// Score-level pieces of the two gradients: d objective / d E(x, y, u, v).
LatticeScores loglik_score_gradient(const LatticeScores& scores, const AlignmentPath& path);
LatticeScores expected_tm_score_gradient(const LatticeScores& scores, const ReferenceAlignment& ref);
// Chains a score-level gradient through the networks.
Eigen::VectorXd backprop(const CnfModel& model, const FeatureTable& feat, const LatticeScores& coeff);

AlignmentPath viterbi_decode(const CnfModel& model, const FeatureTable& feat);
AlignmentPath mea_decode(const CnfModel& model, const FeatureTable& feat);
AlignmentPath mea_decode(const Eigen::MatrixXd& mag);

std::string serialize_model(const CnfModel& model);
CnfModel load_model(std::string_view bytes);

enum class TrainObjective { MaxLikelihood, ExpectedTm };

struct TrainingPair {
  FeatureTable features;
  ReferenceAlignment ref;
};

struct TrainConfig {
  TrainObjective objective = TrainObjective::MaxLikelihood;
  double l2 = 0.01;
  std::size_t hidden = 12;
  std::size_t restarts = 3;
  std::size_t max_iter = 100;
  double init_scale = 0.1;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string schema;
};

struct TrainResult {
  CnfModel model;
  double objective = 0.0;
  std::vector<double> initial_objectives;  // per restart
  std::vector<double> final_objectives;    // per restart
  std::vector<std::vector<double>> traces;  // accepted objective values per restart
  std::vector<std::vector<double>> gradient_norms;
};

// Mean per-pair objective minus l2 * |theta|^2, with its gradient.
double training_objective(const CnfModel& model, const std::vector<TrainingPair>& pairs,
                          TrainObjective objective, double l2, Eigen::VectorXd* grad,
                          std::size_t threads = 1);

TrainResult train(const std::vector<TrainingPair>& pairs, const TrainConfig& cfg);

}  // namespace mrfalign
