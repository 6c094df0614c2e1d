#include "mrfalign/cnf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mrfalign/alphabet.hpp"
#include "mrfalign/error.hpp"
#include "mrfalign/io.hpp"
#include "mrfalign/msa.hpp"
#include "mrfalign/optim.hpp"
#include "mrfalign/parallel.hpp"

namespace mrfalign {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

bool has_pred(std::size_t x, std::size_t y, State v) { return x >= step_x(v) && y >= step_y(v) && (x + y) > 0; }

void check_lattice(std::size_t m, std::size_t n, const char* what) {
  if (m == 0 || n == 0) throw ArgumentError(std::string(what) + ": lattice dimensions must be positive");
}

void check_path_shape(const AlignmentPath& path, std::size_t m, std::size_t n) {
  if (path.m != m || path.n != n) {
    throw ArgumentError("alignment path is " + std::to_string(path.m) + "x" + std::to_string(path.n) +
                        " but the lattice is " + std::to_string(m) + "x" + std::to_string(n));
  }
  validate_path(path);
}

struct Pass {
  LatticeScores scores;
  Messages fwd;
  Messages bwd;
};

Pass run_pass(const LatticeScores& scores) {
  Pass p{scores, forward(scores), backward(scores)};
  return p;
}

double profile_dot(const Eigen::MatrixXd& a, std::size_t i, const Eigen::MatrixXd& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < kNumAminoAcids; ++k) {
    s += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) *
         b(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  }
  return s;
}

double log_similarity(double dot) { return std::log(20.0 * std::max(dot, 0.0) + 0.05); }

double conservation(const Eigen::MatrixXd& profile, std::size_t i) {
  std::array<double, kNumSymbols> col{};
  for (std::size_t a = 0; a < kNumSymbols; ++a) {
    col[a] = profile(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
  }
  return column_neff(col).value_or(0.0) / 20.0;
}

void check_sequence(const SequenceFeatures& s, const char* side) {
  if (s.length() == 0) throw ArgumentError(std::string("features: empty ") + side);
  if (s.profile.cols() != static_cast<Eigen::Index>(kNumSymbols)) {
    throw ArgumentError(std::string("features: ") + side + " profile must have 21 columns");
  }
  if (s.extra.size() != 0 && s.extra.rows() != s.profile.rows()) {
    throw ArgumentError(std::string("features: ") + side + " extra rows do not match its length");
  }
}

// Shared body of the per-vertex generator; sim(i, j) is the 0-based log similarity.
template <class Sim>
void fill_vertex(const SequenceFeatures& T, const SequenceFeatures& S, std::size_t x, std::size_t y, State v,
                 Sim&& sim, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t m = T.length(), n = S.length();
  const bool take_t = step_x(v) == 1, take_s = step_y(v) == 1;
  out[0] = 1.0;
  if (v == State::M) {
    out[1] = sim(x - 1, y - 1);
    double acc = 0.0;
    int count = 0;
    for (int k = -ProfileFeatures::kWindow; k <= ProfileFeatures::kWindow; ++k) {
      const auto i = static_cast<long long>(x) - 1 + k, j = static_cast<long long>(y) - 1 + k;
      if (i < 0 || j < 0 || i >= static_cast<long long>(m) || j >= static_cast<long long>(n)) continue;
      acc += sim(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      ++count;
    }
    out[2] = acc / count;
  }
  bool terminal = false;
  if (take_t) {
    out[3] = conservation(T.profile, x - 1);
    out[5] = T.profile(static_cast<Eigen::Index>(x - 1), kGap);
    terminal = terminal || x == 1 || x == m;
  }
  if (take_s) {
    out[4] = conservation(S.profile, y - 1);
    out[6] = S.profile(static_cast<Eigen::Index>(y - 1), kGap);
    terminal = terminal || y == 1 || y == n;
  }
  out[7] = terminal ? 1.0 : 0.0;
  const auto E = static_cast<std::size_t>(T.extra.cols());
  for (std::size_t c = 0; c < E; ++c) {
    if (take_t) out[ProfileFeatures::kBase + c] = T.extra(static_cast<Eigen::Index>(x - 1), static_cast<Eigen::Index>(c));
    if (take_s) out[ProfileFeatures::kBase + E + c] = S.extra(static_cast<Eigen::Index>(y - 1), static_cast<Eigen::Index>(c));
  }
}

}  // namespace

std::string ProfileFeatures::schema(std::size_t extra_columns) {
  return "profile-v1/extra=" + std::to_string(extra_columns);
}

double ProfileFeatures::bound(const SequenceFeatures& templ, const SequenceFeatures& target) {
  double b = std::max(std::abs(std::log(0.05)), std::log(20.05));
  if (templ.extra.size() > 0) b = std::max(b, templ.extra.cwiseAbs().maxCoeff());
  if (target.extra.size() > 0) b = std::max(b, target.extra.cwiseAbs().maxCoeff());
  return b;
}

void ProfileFeatures::vertex(const SequenceFeatures& templ, const SequenceFeatures& target, std::size_t x,
                             std::size_t y, State v, std::span<double> out) {
  check_sequence(templ, "template");
  check_sequence(target, "target");
  if (templ.extra.cols() != target.extra.cols()) throw ArgumentError("features: extra column counts differ");
  if (out.size() != dimension(static_cast<std::size_t>(templ.extra.cols()))) {
    throw ArgumentError("features: output span has the wrong dimension");
  }
  if (!has_pred(x, y, v) || x > templ.length() || y > target.length()) {
    throw ArgumentError("features: vertex outside the lattice");
  }
  auto sim = [&](std::size_t i, std::size_t j) { return log_similarity(profile_dot(templ.profile, i, target.profile, j)); };
  fill_vertex(templ, target, x, y, v, sim, out);
}

FeatureTable ProfileFeatures::build(const SequenceFeatures& templ, const SequenceFeatures& target) {
  check_sequence(templ, "template");
  check_sequence(target, "target");
  if (templ.extra.cols() != target.extra.cols()) throw ArgumentError("features: extra column counts differ");
  const std::size_t m = templ.length(), n = target.length();
  FeatureTable table(m, n, dimension(static_cast<std::size_t>(templ.extra.cols())));
  const Eigen::MatrixXd dots = templ.profile.leftCols(kNumAminoAcids) * target.profile.leftCols(kNumAminoAcids).transpose();
  const Eigen::MatrixXd sim = dots.unaryExpr([](double d) { return log_similarity(d); });
  auto lookup = [&](std::size_t i, std::size_t j) { return sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); };
  for (std::size_t x = 0; x <= m; ++x) {
    for (std::size_t y = 0; y <= n; ++y) {
      for (State v : kStates) {
        if (has_pred(x, y, v)) fill_vertex(templ, target, x, y, v, lookup, table.at(x, y, v));
      }
    }
  }
  return table;
}

Eigen::MatrixXd parse_residue_features(std::string_view text, std::size_t length) {
  std::size_t columns = 0;
  bool header = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.rfind("# columns", 0) == 0) {
      std::size_t k = 0;
      for (const auto& l : tokenize_lines(line.substr(1))) k += l.tokens.size();
      columns = k - 1;
      header = true;
      break;
    }
  }
  if (!header) throw FormatError("residue features: missing '# columns' header");
  const auto lines = tokenize_lines(text);
  if (lines.size() != length) {
    throw FormatError("residue features: expected " + std::to_string(length) + " rows, found " +
                      std::to_string(lines.size()));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(columns));
  for (std::size_t r = 0; r < lines.size(); ++r) {
    if (lines[r].tokens.size() != columns) {
      throw FormatError("residue features: line " + std::to_string(lines[r].number) + " has " +
                        std::to_string(lines[r].tokens.size()) + " values, expected " + std::to_string(columns));
    }
    for (std::size_t c = 0; c < columns; ++c) {
      const double v = parse_double(lines[r].tokens[c], lines[r].number);
      if (!std::isfinite(v)) throw FormatError("residue features: non-finite value on line " + std::to_string(lines[r].number));
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return out;
}

CnfModel CnfModel::zeros(std::size_t features, std::size_t hidden, std::string schema) {
  CnfModel model;
  model.hidden = hidden;
  model.features = features;
  model.schema = std::move(schema);
  for (std::size_t t = 0; t < kNumTransitions; ++t) {
    model.w[t] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(features));
    model.lambda[t] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
  }
  return model;
}

Eigen::VectorXd CnfModel::flatten() const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (std::size_t t = 0; t < kNumTransitions; ++t) {
    theta.segment(k, w[t].size()) = Eigen::Map<const Eigen::VectorXd>(w[t].data(), w[t].size());
    k += w[t].size();
    theta.segment(k, lambda[t].size()) = lambda[t];
    k += lambda[t].size();
  }
  return theta;
}

void CnfModel::assign(const Eigen::VectorXd& theta) {
  if (theta.size() != static_cast<Eigen::Index>(parameter_count())) throw ArgumentError("cnf model: parameter count mismatch");
  const auto H = static_cast<Eigen::Index>(hidden), F = static_cast<Eigen::Index>(features);
  Eigen::Index k = 0;
  for (std::size_t t = 0; t < kNumTransitions; ++t) {
    w[t] = Eigen::Map<const Eigen::MatrixXd>(theta.data() + k, H, F);
    k += H * F;
    lambda[t] = theta.segment(k, H);
    k += H;
  }
}

bool CnfModel::operator==(const CnfModel& other) const {
  if (hidden != other.hidden || features != other.features || l2 != other.l2 || schema != other.schema) return false;
  for (std::size_t t = 0; t < kNumTransitions; ++t) {
    if (w[t] != other.w[t] || lambda[t] != other.lambda[t]) return false;
  }
  return true;
}

double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

double transition_score(const CnfModel& model, std::span<const double> f, State u, State v) {
  if (f.size() != model.features) throw ArgumentError("transition_score: feature dimension mismatch");
  const std::size_t t = transition_index(u, v);
  const Eigen::Map<const Eigen::VectorXd> fv(f.data(), static_cast<Eigen::Index>(f.size()));
  const Eigen::VectorXd a = model.w[t] * fv;
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) s += model.lambda[t](j) * sigmoid(a(j));
  return s;
}

LatticeScores score_lattice(const CnfModel& model, const FeatureTable& feat) {
  check_lattice(feat.m, feat.n, "score_lattice");
  if (feat.F != model.features) {
    throw ArgumentError("score_lattice: model expects " + std::to_string(model.features) + " features, table has " +
                        std::to_string(feat.F));
  }
  LatticeScores out(feat.m, feat.n);
  for (std::size_t x = 0; x <= feat.m; ++x) {
    for (std::size_t y = 0; y <= feat.n; ++y) {
      for (State v : kStates) {
        if (!has_pred(x, y, v)) continue;
        const auto f = feat.at(x, y, v);
        for (State u : kStates) out(x, y, u, v) = transition_score(model, f, u, v);
      }
    }
  }
  return out;
}

Messages forward(const LatticeScores& s) {
  check_lattice(s.m, s.n, "forward");
  Messages out{s.m, s.n, std::vector<double>((s.m + 1) * (s.n + 1) * kNumStates, kNegInf), 0.0};
  out.table[out.offset(0, 0, State::M)] = 0.0;
  for (std::size_t x = 0; x <= s.m; ++x) {
    for (std::size_t y = 0; y <= s.n; ++y) {
      for (State v : kStates) {
        if (!has_pred(x, y, v)) continue;
        const std::size_t px = x - step_x(v), py = y - step_y(v);
        double acc = kNegInf;
        for (State u : kStates) {
          const double prev = out(px, py, u);
          if (prev != kNegInf) acc = log_add(acc, prev + s(x, y, u, v));
        }
        out.table[out.offset(x, y, v)] = acc;
      }
    }
  }
  double z = kNegInf;
  for (State u : kStates) z = log_add(z, out(s.m, s.n, u));
  out.logZ = z;
  return out;
}

Messages backward(const LatticeScores& s) {
  check_lattice(s.m, s.n, "backward");
  Messages out{s.m, s.n, std::vector<double>((s.m + 1) * (s.n + 1) * kNumStates, kNegInf), 0.0};
  for (State u : kStates) out.table[out.offset(s.m, s.n, u)] = 0.0;
  for (std::size_t x = s.m + 1; x-- > 0;) {
    for (std::size_t y = s.n + 1; y-- > 0;) {
      if (x == s.m && y == s.n) continue;
      for (State u : kStates) {
        double acc = kNegInf;
        for (State v : kStates) {
          const std::size_t nx = x + step_x(v), ny = y + step_y(v);
          if (nx > s.m || ny > s.n) continue;
          acc = log_add(acc, s(nx, ny, u, v) + out(nx, ny, v));
        }
        out.table[out.offset(x, y, u)] = acc;
      }
    }
  }
  out.logZ = out(0, 0, State::M);
  return out;
}

double path_score(const LatticeScores& scores, const AlignmentPath& path) {
  check_path_shape(path, scores.m, scores.n);
  double total = 0.0;
  State prev = State::M;
  for (const auto& step : path.steps) {
    total += scores(step.x, step.y, prev, step.state);
    prev = step.state;
  }
  return total;
}

Eigen::MatrixXd marginals(const LatticeScores& scores, const Messages& fwd, const Messages& bwd) {
  Eigen::MatrixXd mag(static_cast<Eigen::Index>(scores.m), static_cast<Eigen::Index>(scores.n));
  for (std::size_t x = 1; x <= scores.m; ++x) {
    for (std::size_t y = 1; y <= scores.n; ++y) {
      const double lf = fwd(x, y, State::M);
      mag(static_cast<Eigen::Index>(x - 1), static_cast<Eigen::Index>(y - 1)) =
          lf == kNegInf ? 0.0 : std::min(1.0, std::exp(lf + bwd(x, y, State::M) - fwd.logZ));
    }
  }
  return mag;
}

Eigen::MatrixXd marginals(const CnfModel& model, const FeatureTable& feat) {
  const auto p = run_pass(score_lattice(model, feat));
  return marginals(p.scores, p.fwd, p.bwd);
}

LatticeScores transition_posteriors(const LatticeScores& s, const Messages& fwd, const Messages& bwd) {
  LatticeScores out(s.m, s.n);
  for (std::size_t x = 0; x <= s.m; ++x) {
    for (std::size_t y = 0; y <= s.n; ++y) {
      for (State v : kStates) {
        if (!has_pred(x, y, v)) continue;
        const std::size_t px = x - step_x(v), py = y - step_y(v);
        for (State u : kStates) {
          const double lf = fwd(px, py, u);
          if (lf == kNegInf) continue;
          out(x, y, u, v) = std::exp(lf + s(x, y, u, v) + bwd(x, y, v) - fwd.logZ);
        }
      }
    }
  }
  return out;
}

double log_partition(const CnfModel& model, const FeatureTable& feat) {
  return forward(score_lattice(model, feat)).logZ;
}

double loglik(const CnfModel& model, const FeatureTable& feat, const AlignmentPath& path) {
  check_path_shape(path, feat.m, feat.n);
  const auto scores = score_lattice(model, feat);
  return path_score(scores, path) - forward(scores).logZ;
}

namespace {

LatticeScores loglik_coeff(const Pass& p, const AlignmentPath& path) {
  LatticeScores coeff = transition_posteriors(p.scores, p.fwd, p.bwd);
  for (auto& c : coeff.e) c = -c;
  State prev = State::M;
  for (const auto& step : path.steps) {
    coeff(step.x, step.y, prev, step.state) += 1.0;
    prev = step.state;
  }
  return coeff;
}

Eigen::MatrixXd reference_weights(const ReferenceAlignment& ref) {
  Eigen::MatrixXd hw = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ref.path.m + 1), static_cast<Eigen::Index>(ref.path.n + 1));
  for (std::size_t k = 0; k < ref.path.steps.size(); ++k) {
    const auto& st = ref.path.steps[k];
    if (st.state == State::M) hw(static_cast<Eigen::Index>(st.x), static_cast<Eigen::Index>(st.y)) += ref.weights[k];
  }
  return hw;
}

double expected_tm_value(const Pass& p, const ReferenceAlignment& ref) {
  const Eigen::MatrixXd mag = marginals(p.scores, p.fwd, p.bwd);
  const Eigen::MatrixXd hw = reference_weights(ref);
  const double eh = (hw.bottomRightCorner(mag.rows(), mag.cols()).cwiseProduct(mag)).sum();
  return eh / static_cast<double>(std::min(p.scores.m, p.scores.n));
}

// Gradient of E[h] where h sums reference weights over the path's match
// vertices. With A the forward-conditional expectation of h up to a vertex and
// C the backward-conditional expectation after it, dE[h]/dE_e = P(e)(E[h | e] - E[h]).
LatticeScores expected_tm_coeff(const Pass& p, const ReferenceAlignment& ref) {
  const auto& s = p.scores;
  const std::size_t m = s.m, n = s.n;
  const Eigen::MatrixXd hw = reference_weights(ref);
  auto hnode = [&](std::size_t x, std::size_t y, State v) {
    return v == State::M ? hw(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) : 0.0;
  };
  Messages A{m, n, std::vector<double>((m + 1) * (n + 1) * kNumStates, 0.0), 0.0};
  for (std::size_t x = 0; x <= m; ++x) {
    for (std::size_t y = 0; y <= n; ++y) {
      for (State v : kStates) {
        if (!has_pred(x, y, v)) continue;
        const double here = p.fwd(x, y, v);
        if (here == kNegInf) continue;
        const std::size_t px = x - step_x(v), py = y - step_y(v);
        double acc = hnode(x, y, v);
        for (State u : kStates) {
          const double lf = p.fwd(px, py, u);
          if (lf == kNegInf) continue;
          acc += std::exp(lf + s(x, y, u, v) - here) * A(px, py, u);
        }
        A.table[A.offset(x, y, v)] = acc;
      }
    }
  }
  Messages C{m, n, std::vector<double>((m + 1) * (n + 1) * kNumStates, 0.0), 0.0};
  for (std::size_t x = m + 1; x-- > 0;) {
    for (std::size_t y = n + 1; y-- > 0;) {
      if (x == m && y == n) continue;
      for (State u : kStates) {
        const double here = p.bwd(x, y, u);
        if (here == kNegInf) continue;
        double acc = 0.0;
        for (State v : kStates) {
          const std::size_t nx = x + step_x(v), ny = y + step_y(v);
          if (nx > m || ny > n) continue;
          acc += std::exp(s(nx, ny, u, v) + p.bwd(nx, ny, v) - here) * (hnode(nx, ny, v) + C(nx, ny, v));
        }
        C.table[C.offset(x, y, u)] = acc;
      }
    }
  }
  const double norm = static_cast<double>(std::min(m, n));
  const double eh = expected_tm_value(p, ref) * norm;
  LatticeScores coeff = transition_posteriors(s, p.fwd, p.bwd);
  for (std::size_t x = 0; x <= m; ++x) {
    for (std::size_t y = 0; y <= n; ++y) {
      for (State v : kStates) {
        if (!has_pred(x, y, v)) continue;
        const std::size_t px = x - step_x(v), py = y - step_y(v);
        for (State u : kStates) {
          double& c = coeff(x, y, u, v);
          if (c == 0.0) continue;
          c *= (A(px, py, u) + hnode(x, y, v) + C(x, y, v) - eh) / norm;
        }
      }
    }
  }
  return coeff;
}

void check_reference_shape(const ReferenceAlignment& ref, std::size_t m, std::size_t n) {
  check_path_shape(ref.path, m, n);
  validate_reference(ref);
}

}  // namespace

LatticeScores loglik_score_gradient(const LatticeScores& scores, const AlignmentPath& path) {
  check_path_shape(path, scores.m, scores.n);
  return loglik_coeff(run_pass(scores), path);
}

LatticeScores expected_tm_score_gradient(const LatticeScores& scores, const ReferenceAlignment& ref) {
  check_reference_shape(ref, scores.m, scores.n);
  return expected_tm_coeff(run_pass(scores), ref);
}

Eigen::VectorXd backprop(const CnfModel& model, const FeatureTable& feat, const LatticeScores& coeff) {
  if (coeff.m != feat.m || coeff.n != feat.n) throw ArgumentError("backprop: lattice shape mismatch");
  const auto H = static_cast<Eigen::Index>(model.hidden), F = static_cast<Eigen::Index>(model.features);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.parameter_count()));
  const Eigen::Index block = H * (F + 1);
  Eigen::VectorXd a(H), delta(H);
  for (std::size_t x = 0; x <= feat.m; ++x) {
    for (std::size_t y = 0; y <= feat.n; ++y) {
      for (State v : kStates) {
        if (!has_pred(x, y, v)) continue;
        const auto fs = feat.at(x, y, v);
        const Eigen::Map<const Eigen::VectorXd> f(fs.data(), F);
        for (State u : kStates) {
          const double c = coeff(x, y, u, v);
          if (c == 0.0) continue;
          const std::size_t t = transition_index(u, v);
          a.noalias() = model.w[t] * f;
          const Eigen::Index base = static_cast<Eigen::Index>(t) * block;
          for (Eigen::Index j = 0; j < H; ++j) {
            const double sj = sigmoid(a(j));
            grad(base + H * F + j) += c * sj;
            delta(j) = c * model.lambda[t](j) * sj * (1.0 - sj);
          }
          Eigen::Map<Eigen::MatrixXd> gw(grad.data() + base, H, F);
          gw.noalias() += delta * f.transpose();
        }
      }
    }
  }
  return grad;
}

Eigen::VectorXd grad_loglik(const CnfModel& model, const FeatureTable& feat, const AlignmentPath& path) {
  check_path_shape(path, feat.m, feat.n);
  const auto p = run_pass(score_lattice(model, feat));
  return backprop(model, feat, loglik_coeff(p, path));
}

void validate_reference(const ReferenceAlignment& ref) {
  if (ref.weights.size() != ref.path.steps.size()) throw ArgumentError("reference: one weight per step required");
  for (std::size_t k = 0; k < ref.weights.size(); ++k) {
    const double w = ref.weights[k];
    if (!std::isfinite(w) || w < 0.0 || w > 1.0) throw ArgumentError("reference: weight outside [0, 1] at step " + std::to_string(k + 1));
    if (ref.path.steps[k].state != State::M && w != 0.0) {
      throw ArgumentError("reference: nonzero weight at gap step " + std::to_string(k + 1));
    }
  }
}

double tm_d0(std::size_t target_length) {
  const double L = static_cast<double>(target_length);
  return std::max(0.5, 1.24 * std::cbrt(L - 15.0) - 1.8);
}

double tm_weight(double distance, std::size_t target_length) {
  if (!(distance >= 0.0)) throw ArgumentError("tm_weight: distance must be nonnegative");
  const double r = distance / tm_d0(target_length);
  return 1.0 / (1.0 + r * r);
}

ReferenceAlignment make_reference(const AlignmentPath& path, std::span<const double> distances,
                                  std::size_t target_length) {
  validate_path(path);
  if (distances.size() != path.matches()) {
    throw ArgumentError("make_reference: " + std::to_string(path.matches()) + " matches but " +
                        std::to_string(distances.size()) + " distances");
  }
  ReferenceAlignment ref{path, std::vector<double>(path.steps.size(), 0.0)};
  std::size_t k = 0;
  for (std::size_t i = 0; i < path.steps.size(); ++i) {
    if (path.steps[i].state == State::M) ref.weights[i] = tm_weight(distances[k++], target_length);
  }
  return ref;
}

double expected_tmscore(const CnfModel& model, const FeatureTable& feat, const ReferenceAlignment& ref) {
  check_reference_shape(ref, feat.m, feat.n);
  return expected_tm_value(run_pass(score_lattice(model, feat)), ref);
}

Eigen::VectorXd grad_expected_tmscore(const CnfModel& model, const FeatureTable& feat, const ReferenceAlignment& ref) {
  check_reference_shape(ref, feat.m, feat.n);
  const auto p = run_pass(score_lattice(model, feat));
  return backprop(model, feat, expected_tm_coeff(p, ref));
}

AlignmentPath viterbi_decode(const CnfModel& model, const FeatureTable& feat) {
  const auto scores = score_lattice(model, feat);
  return viterbi(feat.m, feat.n, [&](std::size_t x, std::size_t y, State u, State v) { return scores(x, y, u, v); });
}

AlignmentPath mea_decode(const Eigen::MatrixXd& mag) {
  const auto m = static_cast<std::size_t>(mag.rows()), n = static_cast<std::size_t>(mag.cols());
  return viterbi(m, n, [&](std::size_t x, std::size_t y, State, State v) {
    return v == State::M ? mag(static_cast<Eigen::Index>(x - 1), static_cast<Eigen::Index>(y - 1)) : 0.0;
  });
}

AlignmentPath mea_decode(const CnfModel& model, const FeatureTable& feat) { return mea_decode(marginals(model, feat)); }

namespace {
constexpr std::string_view kModelMagic = "MCNF";
constexpr std::uint16_t kModelMajor = 1;
constexpr std::uint16_t kModelMinor = 0;
}  // namespace

std::string serialize_model(const CnfModel& model) {
  ByteWriter w;
  w.str(model.schema);
  w.u64(fnv1a(model.schema));
  w.u64(model.hidden);
  w.u64(model.features);
  w.f64(model.l2);
  const Eigen::VectorXd theta = model.flatten();
  w.u64(static_cast<std::uint64_t>(theta.size()));
  for (Eigen::Index k = 0; k < theta.size(); ++k) w.f64(theta(k));
  return frame_payload(kModelMagic, kModelMajor, kModelMinor, w.bytes());
}

CnfModel load_model(std::string_view bytes) {
  ByteReader r(unframe_payload(bytes, kModelMagic, kModelMajor));
  CnfModel model;
  model.schema = r.str();
  if (r.u64() != fnv1a(model.schema)) throw FormatError("cnf model: feature schema hash mismatch");
  model.hidden = r.u64();
  model.features = r.u64();
  model.l2 = r.f64();
  if (model.hidden == 0 || model.hidden > 4096 || model.features == 0 || model.features > 4096) {
    throw FormatError("cnf model: implausible network dimensions");
  }
  const auto count = r.u64();
  if (count != CnfModel::zeros(model.features, model.hidden).parameter_count()) {
    throw FormatError("cnf model: parameter count does not match dimensions");
  }
  Eigen::VectorXd theta(static_cast<Eigen::Index>(count));
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    theta(k) = r.f64();
    if (!std::isfinite(theta(k))) throw FormatError("cnf model: non-finite weight");
  }
  if (r.remaining() != 0) throw FormatError("cnf model: trailing bytes");
  model = [&] {
    CnfModel out = CnfModel::zeros(model.features, model.hidden, model.schema);
    out.l2 = model.l2;
    out.assign(theta);
    return out;
  }();
  return model;
}

double training_objective(const CnfModel& model, const std::vector<TrainingPair>& pairs, TrainObjective objective,
                          double l2, Eigen::VectorXd* grad, std::size_t threads) {
  if (pairs.empty()) throw ArgumentError("training: empty training set");
  std::vector<double> values(pairs.size(), 0.0);
  std::vector<Eigen::VectorXd> grads(grad ? pairs.size() : 0);
  parallel_for(pairs.size(), threads, [&](std::size_t k) {
    const auto& pair = pairs[k];
    const auto p = run_pass(score_lattice(model, pair.features));
    if (objective == TrainObjective::MaxLikelihood) {
      check_path_shape(pair.ref.path, pair.features.m, pair.features.n);
      values[k] = path_score(p.scores, pair.ref.path) - p.fwd.logZ;
      if (grad) grads[k] = backprop(model, pair.features, loglik_coeff(p, pair.ref.path));
    } else {
      check_reference_shape(pair.ref, pair.features.m, pair.features.n);
      values[k] = expected_tm_value(p, pair.ref);
      if (grad) grads[k] = backprop(model, pair.features, expected_tm_coeff(p, pair.ref));
    }
  });
  const Eigen::VectorXd theta = model.flatten();
  const double scale = 1.0 / static_cast<double>(pairs.size());
  double total = 0.0;
  for (double v : values) total += v;
  total = total * scale - l2 * theta.squaredNorm();
  if (grad) {
    *grad = -2.0 * l2 * theta;
    for (const auto& g : grads) *grad += scale * g;
  }
  return total;
}

TrainResult train(const std::vector<TrainingPair>& pairs, const TrainConfig& cfg) {
  if (pairs.empty()) throw ArgumentError("train: empty training set");
  if (cfg.restarts == 0) throw ArgumentError("train: restarts must be at least 1");
  if (cfg.l2 < 0.0) throw ArgumentError("train: l2 must be nonnegative");
  const std::size_t F = pairs.front().features.F;
  for (const auto& p : pairs) {
    if (p.features.F != F) throw ArgumentError("train: training pairs disagree on feature dimension");
  }
  CnfModel shape = CnfModel::zeros(F, cfg.hidden, cfg.schema);
  shape.l2 = cfg.l2;
  auto fn = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    CnfModel model = shape;
    model.assign(theta);
    return training_objective(model, pairs, cfg.objective, cfg.l2, &grad, cfg.threads);
  };
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> init(0.0, cfg.init_scale);
  LbfgsConfig lcfg;
  lcfg.max_iter = cfg.max_iter;
  TrainResult out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Eigen::VectorXd theta0(static_cast<Eigen::Index>(shape.parameter_count()));
    for (Eigen::Index k = 0; k < theta0.size(); ++k) theta0(k) = init(rng);
    const auto res = lbfgs_maximize(fn, theta0, lcfg);
    out.initial_objectives.push_back(res.values.front());
    out.final_objectives.push_back(res.value);
    out.traces.push_back(res.values);
    out.gradient_norms.push_back(res.gradient_norms);
    if (res.value > best) {
      best = res.value;
      out.model = shape;
      out.model.assign(res.x);
      out.objective = res.value;
    }
  }
  if (!std::isfinite(best)) throw NumericalError("train: no restart produced a finite objective");
  return out;
}

}  // namespace mrfalign
