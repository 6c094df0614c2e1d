#include "mrfalign/ggl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mrfalign/error.hpp"
#include "mrfalign/io.hpp"
#include "mrfalign/parallel.hpp"

namespace mrfalign {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

void validate_groups(const GroupSpec& groups, const FamilySet& fams) {
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  for (const auto& g : groups.groups) {
    if (!(g.lambda >= 0.0)) throw ArgumentError("group lambda must be nonnegative");
    std::unordered_set<std::size_t> families;
    for (const auto& m : g.members) {
      if (m.family >= fams.covariances.size()) throw ArgumentError("group references an unknown family");
      if (!(m.i < m.j && m.j < fams.covariances[m.family].L)) {
        throw ArgumentError("group member column pair out of range");
      }
      if (!families.insert(m.family).second) throw ArgumentError("group holds two pairs of one family");
      if (!seen.insert({m.family, m.i, m.j}).second) throw ArgumentError("column pair appears in two groups");
    }
  }
}

}  // namespace

GroupSpec build_groups(const ColumnMapping& mapping, double alpha) {
  const std::size_t L = mapping.target_length;
  for (const auto& fam : mapping.aux) {
    if (fam.size() != L) throw ArgumentError("build_groups: mapping length does not match target");
    for (const auto& col : fam) {
      if (col && !(col->probability > 0.0 && col->probability <= 1.0)) {
        throw ArgumentError("build_groups: alignment probabilities must lie in (0, 1]");
      }
    }
  }
  GroupSpec spec;
  spec.groups.reserve(L * (L > 0 ? L - 1 : 0) / 2);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = i + 1; j < L; ++j) {
      Group g;
      g.members.push_back({0, i, j});
      double log_prob = 0.0;
      for (std::size_t n = 0; n < mapping.aux.size(); ++n) {
        const auto& a = mapping.aux[n][i];
        const auto& b = mapping.aux[n][j];
        if (!a || !b) continue;
        g.members.push_back({n + 1, std::min(a->column, b->column), std::max(a->column, b->column)});
        log_prob += std::log(a->probability * b->probability);
      }
      const std::size_t partners = g.members.size() - 1;
      if (partners > 0) {
        const double p = static_cast<double>(partners);
        g.lambda = alpha * std::sqrt(p) * std::exp(log_prob / p);
      }
      spec.groups.push_back(std::move(g));
    }
  }
  return spec;
}

double sp1_eigenvalue(double m, double rho) {
  const double root = std::sqrt(m * m + 4.0 * rho);
  // Both forms are equal; pick the one free of cancellation.
  return m > 0.0 ? 2.0 / (m + root) : (root - m) / (2.0 * rho);
}

Eigen::MatrixXd sp1_update(const Eigen::MatrixXd& M, double rho) {
  if (!(rho > 0.0)) throw ArgumentError("sp1_update: rho must be positive");
  const std::size_t n = static_cast<std::size_t>(M.rows());
  if (M.cols() != M.rows()) throw ArgumentError("sp1_update: matrix must be square");

  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (M(idx(i), idx(j)) != 0.0 || M(idx(j), idx(i)) != 0.0) uf.unite(i, j);
    }
  }
  std::vector<std::vector<std::size_t>> components;
  std::vector<std::size_t> slot(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < n; ++i) {
    const auto root = uf.find(i);
    if (slot[root] == std::numeric_limits<std::size_t>::max()) {
      slot[root] = components.size();
      components.emplace_back();
    }
    components[slot[root]].push_back(i);
  }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(M.rows(), M.cols());
  for (const auto& comp : components) {
    if (comp.size() == 1) {
      const auto i = idx(comp.front());
      out(i, i) = sp1_eigenvalue(M(i, i), rho);
      continue;
    }
    const Index k = idx(comp.size());
    Eigen::MatrixXd sub(k, k);
    for (Index a = 0; a < k; ++a) {
      for (Index b = 0; b < k; ++b) sub(a, b) = M(idx(comp[static_cast<std::size_t>(a)]), idx(comp[static_cast<std::size_t>(b)]));
    }
    sub = (0.5 * (sub + sub.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sub);
    if (es.info() != Eigen::Success || !es.eigenvalues().allFinite()) {
      std::ostringstream msg;
      msg << "sp1_update: eigendecomposition failed on a " << k << "x" << k
          << " component (max |entry| " << sub.cwiseAbs().maxCoeff() << ", finite "
          << (sub.allFinite() ? "yes" : "no") << ")";
      throw NumericalError(msg.str());
    }
    Eigen::VectorXd d(k);
    for (Index a = 0; a < k; ++a) d(a) = sp1_eigenvalue(es.eigenvalues()(a), rho);
    Eigen::MatrixXd r = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
    for (Index a = 0; a < k; ++a) {
      for (Index b = a; b < k; ++b) {
        const double v = 0.5 * (r(a, b) + r(b, a));
        const auto ia = idx(comp[static_cast<std::size_t>(a)]);
        const auto ib = idx(comp[static_cast<std::size_t>(b)]);
        out(ia, ib) = v;
        out(ib, ia) = v;
      }
    }
  }
  return out;
}

double soft_threshold(double x, double c) {
  const double mag = std::abs(x) - c;
  if (mag <= 0.0) return 0.0;
  return x > 0.0 ? mag : -mag;
}

std::vector<BlockMatrix> sp2_update(const std::vector<BlockMatrix>& A,
                                    const std::vector<Eigen::MatrixXd>& block_lambda,
                                    const GroupSpec& groups, double rho) {
  if (!(rho > 0.0)) throw ArgumentError("sp2_update: rho must be positive");
  if (block_lambda.size() != A.size()) throw ArgumentError("sp2_update: one penalty table per family required");
  std::vector<BlockMatrix> Z;
  Z.reserve(A.size());
  for (std::size_t k = 0; k < A.size(); ++k) {
    const std::size_t L = A[k].L;
    BlockMatrix z(L);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = i; j < L; ++j) {
        const double c = block_lambda[k](idx(i), idx(j)) / rho;
        z.block(i, j) = A[k].block(i, j).unaryExpr([c](double x) { return soft_threshold(x, c); });
      }
    }
    Z.push_back(std::move(z));
  }
  for (const auto& g : groups.groups) {
    if (g.lambda == 0.0) continue;
    double norm2 = 0.0;
    for (const auto& m : g.members) norm2 += Z[m.family].block(m.i, m.j).squaredNorm();
    const double norm = std::sqrt(norm2);
    const double shrink = g.lambda / rho;
    const double factor = norm - shrink <= 0.0 ? 0.0 : 1.0 - shrink / norm;
    for (const auto& m : g.members) Z[m.family].block(m.i, m.j) *= factor;
  }
  for (auto& z : Z) {
    for (std::size_t i = 0; i < z.L; ++i) {
      for (std::size_t j = i + 1; j < z.L; ++j) z.block(j, i) = z.block(i, j).transpose();
    }
  }
  return Z;
}

Eigen::MatrixXd block_penalties(std::size_t L, const GglConfig& cfg, const PriorMatrix* prior) {
  if (!prior) return Eigen::MatrixXd::Constant(idx(L), idx(L), cfg.lambda1);
  if (prior->p.rows() != idx(L) || prior->p.cols() != idx(L)) {
    throw ArgumentError("prior matrix size does not match family length");
  }
  Eigen::MatrixXd lam(idx(L), idx(L));
  for (Index i = 0; i < lam.rows(); ++i) {
    for (Index j = 0; j < lam.cols(); ++j) {
      lam(i, j) = cfg.lambda1 + cfg.lambda2 / std::max(prior->p(i, j), cfg.prior_floor);
    }
  }
  return lam;
}

GglResult solve_ggl(const FamilySet& fams, const GroupSpec& groups, const GglConfig& cfg,
                    const PriorMatrix* prior) {
  const std::size_t K = fams.covariances.size();
  if (K == 0) throw ArgumentError("solve_ggl: no families");
  if (fams.target_index >= K) throw ArgumentError("solve_ggl: target index out of range");
  if (!(cfg.rho > 0.0) || !(cfg.tol > 0.0 && cfg.tol < 1.0) || cfg.max_iter == 0) {
    throw ArgumentError("solve_ggl: rho, tol, and max_iter must be positive (tol < 1)");
  }
  if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0) throw ArgumentError("solve_ggl: penalties must be nonnegative");
  validate_groups(groups, fams);

  const double rho = cfg.rho;
  std::vector<Eigen::MatrixXd> penalties(K);
  PriorMatrix unit_prior;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t L = fams.covariances[k].L;
    if (!prior) {
      penalties[k] = block_penalties(L, cfg, nullptr);
    } else if (k == fams.target_index) {
      penalties[k] = block_penalties(L, cfg, prior);
    } else {
      unit_prior.p = Eigen::MatrixXd::Ones(idx(L), idx(L));
      penalties[k] = block_penalties(L, cfg, &unit_prior);
    }
  }

  std::vector<BlockMatrix> omega(K), z(K), u(K), a(K);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t L = fams.covariances[k].L;
    omega[k] = BlockMatrix(L);
    z[k] = BlockMatrix(L);
    u[k] = BlockMatrix(L);
    a[k] = BlockMatrix(L);
    // Start from the solution of the diagonal-only problem: Z = diag(1 / (S_aa + lambda)),
    // U = lambda / rho. Coordinates with no covariance partner are then already optimal.
    for (Eigen::Index d = 0; d < z[k].full.rows(); ++d) {
      const auto col = static_cast<Eigen::Index>(static_cast<std::size_t>(d) / kNumSymbols);
      const double lam = penalties[k](col, col);
      z[k].full(d, d) = 1.0 / (fams.covariances[k].full(d, d) + lam);
      u[k].full(d, d) = lam / rho;
    }
  }

  GglResult result;
  double best_residual = std::numeric_limits<double>::infinity();
  std::vector<BlockMatrix> best_omega, best_z;

  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    parallel_for(K, cfg.threads, [&](std::size_t k) {
      const Eigen::MatrixXd M = fams.covariances[k].full - rho * z[k].full + rho * u[k].full;
      omega[k].full = sp1_update(M, rho);
      a[k].full = omega[k].full + u[k].full;
    });
    auto z_new = sp2_update(a, penalties, groups, rho);
    double primal = 0.0;
    double dual = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const Eigen::MatrixXd diff = omega[k].full - z_new[k].full;
      u[k].full += diff;
      primal = std::max(primal, diff.norm());
      dual = std::max(dual, rho * (z_new[k].full - z[k].full).norm());
    }
    z = std::move(z_new);
    result.trace.emplace_back(primal, dual);
    result.iterations = it;
    result.primal_residual = primal;
    result.dual_residual = dual;
    if (primal < cfg.tol && dual < cfg.tol) {
      result.converged = true;
      break;
    }
    const double residual = std::max(primal, dual);
    if (residual < best_residual) {
      best_residual = residual;
      best_omega = omega;
      best_z = z;
    }
  }

  auto to_precision = [](std::vector<BlockMatrix>& src) {
    std::vector<BlockPrecision> out;
    out.reserve(src.size());
    for (auto& m : src) {
      BlockPrecision p;
      p.L = m.L;
      p.full = std::move(m.full);
      out.push_back(std::move(p));
    }
    return out;
  };
  if (!result.converged && !best_omega.empty() && best_residual < std::max(result.primal_residual, result.dual_residual)) {
    result.precision = to_precision(best_omega);
    result.sparse = to_precision(best_z);
  } else {
    result.precision = to_precision(omega);
    result.sparse = to_precision(z);
  }
  return result;
}

GglResult solve_glasso(const BlockCovariance& cov, double lambda1, const GglConfig& cfg) {
  FamilySet fams;
  fams.covariances.push_back(cov);
  GglConfig single = cfg;
  single.lambda1 = lambda1;
  return solve_ggl(fams, GroupSpec{}, single, nullptr);
}

double glasso_objective(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& sigma, double lambda1) {
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -logdet + (omega.cwiseProduct(sigma)).sum() + lambda1 * omega.cwiseAbs().sum();
}

ContactList rank_contacts(const Eigen::MatrixXd& scores, std::size_t min_sep) {
  ContactList list;
  list.L = static_cast<std::size_t>(scores.rows());
  for (std::size_t i = 0; i < list.L; ++i) {
    for (std::size_t j = i + std::max<std::size_t>(min_sep, 1); j < list.L; ++j) {
      list.entries.push_back({i, j, scores(idx(i), idx(j))});
    }
  }
  std::sort(list.entries.begin(), list.entries.end(), [](const Contact& a, const Contact& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.i, a.j) < std::tie(b.i, b.j);
  });
  return list;
}

ContactList contacts_from_precision(const BlockPrecision& prec, bool apply_apc, std::size_t min_sep) {
  auto map = coupling_norms(prec);
  if (apply_apc) map = apc(map);
  return rank_contacts(map.s, min_sep);
}

ContactList majority_vote(const std::vector<ContactList>& lists, const ColumnMapping& mapping,
                          const std::vector<double>& family_weights) {
  if (lists.empty()) throw ArgumentError("majority_vote: no contact lists");
  if (lists.size() != mapping.families() + 1 || family_weights.size() != lists.size()) {
    throw ArgumentError("majority_vote: need one list and one weight per family");
  }
  for (double w : family_weights) {
    if (!(w > 0.0)) throw ArgumentError("majority_vote: family weights must be positive");
  }
  const std::size_t L = lists[0].L;
  std::vector<std::unordered_map<std::size_t, double>> present(lists.size());
  for (std::size_t f = 0; f < lists.size(); ++f) {
    const std::size_t Lf = lists[f].L;
    for (const auto& c : lists[f].entries) present[f].emplace(std::min(c.i, c.j) * Lf + std::max(c.i, c.j), c.score);
  }
  struct Vote {
    Contact c;
    double tie = 0.0;
  };
  std::vector<Vote> votes;
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = i + 1; j < L; ++j) {
      double vote = 0.0;
      double tie = 0.0;
      for (std::size_t f = 0; f < lists.size(); ++f) {
        std::size_t a = i;
        std::size_t b = j;
        if (f > 0) {
          const auto& ma = mapping.aux[f - 1][i];
          const auto& mb = mapping.aux[f - 1][j];
          if (!ma || !mb) continue;
          a = std::min(ma->column, mb->column);
          b = std::max(ma->column, mb->column);
        }
        const auto it = present[f].find(a * lists[f].L + b);
        if (it == present[f].end()) continue;
        vote += family_weights[f];
        tie += family_weights[f] * it->second;
      }
      if (vote > 0.0) votes.push_back({{i, j, vote}, tie});
    }
  }
  std::sort(votes.begin(), votes.end(), [](const Vote& a, const Vote& b) {
    if (a.c.score != b.c.score) return a.c.score > b.c.score;
    if (a.tie != b.tie) return a.tie > b.tie;
    return std::tie(a.c.i, a.c.j) < std::tie(b.c.i, b.c.j);
  });
  ContactList out;
  out.L = L;
  for (const auto& v : votes) out.entries.push_back(v.c);
  return out;
}

Msa merge_families(const Msa& target, const std::vector<Msa>& aux, const ColumnMapping& mapping) {
  if (aux.size() != mapping.families()) throw ArgumentError("merge_families: one mapping per auxiliary family required");
  if (mapping.target_length != target.length()) throw ArgumentError("merge_families: mapping length does not match target");
  Msa out = target;
  std::unordered_set<std::string> ids(target.ids.begin(), target.ids.end());
  for (std::size_t n = 0; n < aux.size(); ++n) {
    for (std::size_t r = 0; r < aux[n].depth(); ++r) {
      std::vector<std::uint8_t> row(target.length(), kGap);
      for (std::size_t c = 0; c < target.length(); ++c) {
        const auto& m = mapping.aux[n][c];
        if (!m) continue;
        if (m->column >= aux[n].length()) throw ArgumentError("merge_families: mapped column out of range");
        row[c] = aux[n].rows[r][m->column];
      }
      std::string id = aux[n].ids[r];
      if (ids.count(id)) id += "/aux" + std::to_string(n + 1);
      while (ids.count(id)) id += "'";
      ids.insert(id);
      out.ids.push_back(std::move(id));
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

PriorMatrix parse_prior(std::string_view text, std::size_t L) {
  PriorMatrix prior;
  prior.p = Eigen::MatrixXd::Zero(idx(L), idx(L));
  prior.p.diagonal().setOnes();
  for (const auto& line : tokenize_lines(text)) {
    if (line.tokens.size() < 3) throw FormatError("prior line " + std::to_string(line.number) + ": expected 'i j p'");
    const auto i = parse_integer(line.tokens[0], line.number);
    const auto j = parse_integer(line.tokens[1], line.number);
    const double p = parse_double(line.tokens[2], line.number);
    if (i < 1 || j < 1 || static_cast<std::size_t>(i) > L || static_cast<std::size_t>(j) > L) {
      throw FormatError("prior line " + std::to_string(line.number) + ": column index out of range");
    }
    if (!(p >= 0.0 && p <= 1.0)) throw FormatError("prior line " + std::to_string(line.number) + ": probability outside [0, 1]");
    if (i == j) continue;
    prior.p(i - 1, j - 1) = p;
    prior.p(j - 1, i - 1) = p;
  }
  return prior;
}

ColumnMapping parse_column_mapping(std::string_view text, std::size_t target_length,
                                   const std::vector<std::size_t>& aux_lengths) {
  ColumnMapping mapping;
  mapping.target_length = target_length;
  mapping.aux.assign(aux_lengths.size(), std::vector<std::optional<AlignedColumn>>(target_length));
  std::vector<std::unordered_set<std::size_t>> used(aux_lengths.size());
  for (const auto& line : tokenize_lines(text)) {
    const auto where = "mapping line " + std::to_string(line.number) + ": ";
    if (line.tokens.size() < 3) throw FormatError(where + "expected 'aux target_col aux_col [prob]'");
    const auto n = parse_integer(line.tokens[0], line.number);
    const auto t = parse_integer(line.tokens[1], line.number);
    const auto a = parse_integer(line.tokens[2], line.number);
    const double p = line.tokens.size() > 3 ? parse_double(line.tokens[3], line.number) : 1.0;
    if (n < 1 || static_cast<std::size_t>(n) > aux_lengths.size()) throw FormatError(where + "unknown auxiliary family");
    const auto fam = static_cast<std::size_t>(n - 1);
    if (t < 1 || static_cast<std::size_t>(t) > target_length) throw FormatError(where + "target column out of range");
    if (a < 1 || static_cast<std::size_t>(a) > aux_lengths[fam]) throw FormatError(where + "auxiliary column out of range");
    if (!(p > 0.0 && p <= 1.0)) throw FormatError(where + "probability outside (0, 1]");
    auto& slot = mapping.aux[fam][static_cast<std::size_t>(t - 1)];
    if (slot) throw FormatError(where + "target column mapped twice");
    if (!used[fam].insert(static_cast<std::size_t>(a - 1)).second) throw FormatError(where + "auxiliary column mapped twice");
    slot = AlignedColumn{static_cast<std::size_t>(a - 1), p};
  }
  return mapping;
}

std::string format_contacts(const ContactList& list, std::string_view header) {
  std::string out(header);
  if (!out.empty() && out.back() != '\n') out.push_back('\n');
  out += "# L=" + std::to_string(list.L) + "\n";
  for (const auto& c : list.entries) {
    out += std::to_string(c.i + 1) + " " + std::to_string(c.j + 1) + " " + format_double(c.score) + "\n";
  }
  return out;
}

ContactList parse_contacts(std::string_view text) {
  ContactList list;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.rfind("# L=", 0) == 0) list.L = static_cast<std::size_t>(parse_integer(line.substr(4), 0));
  }
  std::size_t max_index = 0;
  for (const auto& line : tokenize_lines(text)) {
    if (line.tokens.size() < 2) throw FormatError("contact line " + std::to_string(line.number) + ": expected 'i j [score]'");
    const auto i = parse_integer(line.tokens[0], line.number);
    const auto j = parse_integer(line.tokens[1], line.number);
    if (i < 1 || j < 1 || i == j) throw FormatError("contact line " + std::to_string(line.number) + ": invalid pair");
    const double score = line.tokens.size() > 2 ? parse_double(line.tokens[2], line.number) : 1.0;
    Contact c{static_cast<std::size_t>(std::min(i, j) - 1), static_cast<std::size_t>(std::max(i, j) - 1), score};
    max_index = std::max(max_index, c.j + 1);
    list.entries.push_back(c);
  }
  if (list.L == 0) list.L = max_index;
  if (max_index > list.L) throw FormatError("contact index exceeds declared length");
  return list;
}

}  // namespace mrfalign
