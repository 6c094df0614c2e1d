#include "mrfalign/mrf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mrfalign/error.hpp"
#include "mrfalign/gauss.hpp"
#include "mrfalign/io.hpp"

namespace mrfalign {

namespace {

constexpr std::string_view kMrfMagic = "MRFA";
constexpr std::uint16_t kMrfMajor = 1;
constexpr std::uint16_t kMrfMinor = 0;

void require(bool ok, const std::string& what) {
  if (!ok) throw FormatError("mrf: " + what);
}

std::string pair_name(std::size_t i, std::size_t k) {
  return "(" + std::to_string(i + 1) + ", " + std::to_string(k + 1) + ")";
}

void check_distribution(const std::vector<double>& d, double tol, const std::string& where) {
  double total = 0.0;
  for (double p : d) {
    if (!std::isfinite(p) || p < 0.0) throw FormatError(where + ": negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > tol) throw FormatError(where + ": probabilities sum to " + format_double(total));
}

// Off-diagonal maximum magnitude, used to put MI powers on a common scale.
double offdiag_max(const Eigen::MatrixXd& m) {
  double hi = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (i != j) hi = std::max(hi, std::abs(m(i, j)));
    }
  }
  return hi;
}

Eigen::MatrixXd corrected(Eigen::MatrixXd s) {
  s.diagonal().setZero();
  CouplingMap map;
  map.s = std::move(s);
  return apc(map).s;
}

}  // namespace

DistanceSchema epad_schema() {
  DistanceSchema s{"epad13", {4.0}};
  for (int d = 5; d <= 15; ++d) s.upper.push_back(d);
  s.upper.push_back(std::numeric_limits<double>::infinity());
  return s;
}

DistanceSchema two_bin_schema() { return {"two_bin", {8.0, std::numeric_limits<double>::infinity()}}; }

DistanceSchema schema_by_name(std::string_view name) {
  if (name == "epad13") return epad_schema();
  if (name == "two_bin") return two_bin_schema();
  throw FormatError("unknown distance bin schema '" + std::string(name) + "'");
}

bool Mrf::operator==(const Mrf& other) const {
  return id == other.id && provenance == other.provenance && nodes == other.nodes && edges == other.edges &&
         distance_schema == other.distance_schema && extra.rows() == other.extra.rows() &&
         extra.cols() == other.extra.cols() && extra == other.extra;
}

void validate_mrf(const Mrf& mrf, std::size_t min_sep) {
  const std::size_t L = mrf.length();
  for (std::size_t c = 0; c < L; ++c) {
    const auto& node = mrf.nodes[c];
    require(node.index == c, "node " + std::to_string(c + 1) + " has index " + std::to_string(node.index + 1));
    require(node.context.rows() == static_cast<Eigen::Index>(kNumSymbols) &&
                node.context.cols() == static_cast<Eigen::Index>(kContextWidth),
            "node context must be 21 x 11");
    require(node.marginal.size() == static_cast<Eigen::Index>(kNumSymbols), "node marginal must have 21 entries");
    for (std::size_t w = 0; w < kContextWidth; ++w) {
      const long long src = static_cast<long long>(c) + static_cast<long long>(w) - static_cast<long long>(kContextHalfWidth);
      const double total = node.context.col(static_cast<Eigen::Index>(w)).sum();
      if (src < 0 || src >= static_cast<long long>(L)) {
        require(node.context.col(static_cast<Eigen::Index>(w)).isZero(0.0), "context column outside the sequence must be zero");
      } else {
        require(std::abs(total - 1.0) <= 1e-9, "context column of node " + std::to_string(c + 1) + " does not sum to 1");
      }
    }
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  const std::size_t bins = mrf.has_distances() ? schema_by_name(mrf.distance_schema).bins() : 0;
  for (const auto& e : mrf.edges) {
    require(e.i < e.k && e.k < L, "edge " + pair_name(e.i, e.k) + " has invalid endpoints");
    require(e.k - e.i >= min_sep, "edge " + pair_name(e.i, e.k) + " violates the minimum separation");
    require(seen.insert({e.i, e.k}).second, "duplicate edge " + pair_name(e.i, e.k));
    require(std::isfinite(e.strength) && e.strength >= 0.0, "edge strength must be finite and nonnegative");
    if (mrf.has_distances()) {
      require(e.dist.size() == bins, "edge " + pair_name(e.i, e.k) + " distribution does not match the bin schema");
      check_distribution(e.dist, 1e-9, "mrf: edge " + pair_name(e.i, e.k));
    } else {
      require(e.dist.empty(), "edge distribution present without a bin schema");
    }
  }
  if (mrf.extra.size() > 0) require(mrf.extra.rows() == static_cast<Eigen::Index>(L), "extra feature rows do not match length");
}

CouplingSource parse_coupling_source(std::string_view name) {
  if (name == "mi") return CouplingSource::MutualInformation;
  if (name == "mi_power_sum") return CouplingSource::MiPowerSum;
  if (name == "ggl") return CouplingSource::Ggl;
  if (name == "file") return CouplingSource::File;
  throw ArgumentError("unknown coupling source '" + std::string(name) + "' (expected mi, mi_power_sum, ggl, file)");
}

std::string coupling_source_name(CouplingSource source) {
  switch (source) {
    case CouplingSource::MutualInformation: return "mi";
    case CouplingSource::MiPowerSum: return "mi_power_sum";
    case CouplingSource::Ggl: return "ggl";
    case CouplingSource::File: return "file";
  }
  return "unknown";
}

Eigen::MatrixXd coupling_scores(const Msa& msa, std::span<const double> weights, const MrfBuildConfig& cfg,
                                const Eigen::MatrixXd* file_scores) {
  const auto L = static_cast<Eigen::Index>(msa.length());
  switch (cfg.source) {
    case CouplingSource::MutualInformation:
      return corrected(mutual_information(msa, weights, cfg.pseudocount).m);
    case CouplingSource::MiPowerSum: {
      if (cfg.max_power < 1 || cfg.max_power > 11) throw ArgumentError("mi_power_sum: max power must lie in [1, 11]");
      const auto mi = mutual_information(msa, weights, cfg.pseudocount);
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(L, L);
      for (int k = 1; k <= cfg.max_power; ++k) {
        const Eigen::MatrixXd term = k == 1 ? mi.m : mi_power(mi, k).m;
        const double scale = offdiag_max(term);
        if (scale > 0.0) sum += term / scale;
      }
      return corrected(sum);
    }
    case CouplingSource::Ggl: {
      const auto cov = shrink(empirical_covariance(msa, weights));
      const auto res = solve_glasso(cov, cfg.lambda1, cfg.ggl);
      return apc(coupling_norms(res.sparse.front())).s;
    }
    case CouplingSource::File:
      if (!file_scores) throw ArgumentError("coupling source 'file' needs a score matrix");
      if (file_scores->rows() != L || file_scores->cols() != L) {
        throw FormatError("coupling file covers " + std::to_string(file_scores->rows()) + " columns, MSA has " +
                          std::to_string(L));
      }
      return *file_scores;
  }
  throw ArgumentError("unknown coupling source");
}

std::vector<MrfEdge> select_edges(const Eigen::MatrixXd& scores, const EdgeBudget& budget, std::size_t min_sep) {
  const auto L = static_cast<std::size_t>(scores.rows());
  if (scores.cols() != scores.rows()) throw ArgumentError("select_edges: score matrix must be square");
  if (min_sep == 0) throw ArgumentError("select_edges: min_sep must be at least 1");
  auto score = [&](std::size_t i, std::size_t k) {
    return scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  };
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  if (budget.kind == EdgeBudget::Kind::Threshold) {
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t k = i + min_sep; k < L; ++k) {
        if (score(i, k) > 0.0 && score(i, k) >= budget.threshold) chosen.insert({i, k});
      }
    }
  } else {
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<std::size_t> partners;
      for (std::size_t k = 0; k < L; ++k) {
        const std::size_t sep = i > k ? i - k : k - i;
        if (sep >= min_sep && score(i, k) > 0.0) partners.push_back(k);
      }
      std::stable_sort(partners.begin(), partners.end(),
                       [&](std::size_t a, std::size_t b) { return score(i, a) > score(i, b); });
      for (std::size_t r = 0; r < std::min(budget.top_k, partners.size()); ++r) {
        chosen.insert({std::min(i, partners[r]), std::max(i, partners[r])});
      }
    }
  }
  std::vector<MrfEdge> out;
  for (const auto& [i, k] : chosen) out.push_back({i, k, std::max(score(i, k), score(k, i)), {}});
  return out;
}

std::vector<MrfNode> build_nodes(const Profile& profile) {
  const std::size_t L = profile.length();
  std::vector<MrfNode> nodes(L);
  for (std::size_t c = 0; c < L; ++c) {
    auto& node = nodes[c];
    node.index = c;
    node.marginal = profile.p.row(static_cast<Eigen::Index>(c)).transpose();
    node.context = Eigen::MatrixXd::Zero(kNumSymbols, kContextWidth);
    for (std::size_t w = 0; w < kContextWidth; ++w) {
      const long long src = static_cast<long long>(c) + static_cast<long long>(w) - static_cast<long long>(kContextHalfWidth);
      if (src < 0 || src >= static_cast<long long>(L)) continue;
      node.context.col(static_cast<Eigen::Index>(w)) = profile.p.row(static_cast<Eigen::Index>(src)).transpose();
    }
  }
  return nodes;
}

Mrf build_mrf(const Msa& msa, std::span<const double> weights, const MrfBuildConfig& cfg,
              const Eigen::MatrixXd* file_scores) {
  if (msa.depth() == 0 || msa.length() == 0) throw ArgumentError("build_mrf: empty alignment");
  Mrf mrf;
  mrf.id = cfg.id;
  mrf.provenance = coupling_source_name(cfg.source);
  mrf.nodes = build_nodes(build_profile(msa, weights, cfg.pseudocount));
  mrf.edges = select_edges(coupling_scores(msa, weights, cfg, file_scores), cfg.budget, cfg.min_sep);
  return mrf;
}

Eigen::MatrixXd parse_coupling_file(std::string_view text, std::size_t L) {
  const auto list = parse_contacts(text);
  if (list.L > L) throw FormatError("coupling file refers to column " + std::to_string(list.L) + " beyond length " + std::to_string(L));
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));
  for (const auto& c : list.entries) {
    s(static_cast<Eigen::Index>(c.i), static_cast<Eigen::Index>(c.j)) = c.score;
    s(static_cast<Eigen::Index>(c.j), static_cast<Eigen::Index>(c.i)) = c.score;
  }
  return s;
}

Mrf attach_distance_distributions(Mrf mrf, std::string_view text) {
  std::string schema_name;
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.rfind("# bins", 0) == 0) {
      const auto parts = tokenize_lines(line.substr(1));
      if (parts.empty() || parts.front().tokens.size() != 2) throw FormatError("distance file: malformed '# bins' header");
      schema_name = std::string(parts.front().tokens[1]);
      break;
    }
  }
  if (schema_name.empty()) throw FormatError("distance file: missing '# bins <schema>' header");
  const auto schema = schema_by_name(schema_name);
  std::vector<std::vector<double>> found(mrf.edges.size());
  for (const auto& line : tokenize_lines(text)) {
    if (line.tokens.size() != 2 + schema.bins()) {
      throw FormatError("distance file: line " + std::to_string(line.number) + " has " + std::to_string(line.tokens.size()) +
                        " fields, expected " + std::to_string(2 + schema.bins()));
    }
    const auto i = parse_integer(line.tokens[0], line.number), k = parse_integer(line.tokens[1], line.number);
    if (i < 1 || k < 1 || i >= k) throw FormatError("distance file: line " + std::to_string(line.number) + " needs 1 <= i < k");
    std::vector<double> d;
    for (std::size_t b = 0; b < schema.bins(); ++b) d.push_back(parse_double(line.tokens[2 + b], line.number));
    check_distribution(d, 1e-6, "distance file: line " + std::to_string(line.number));
    double total = 0.0;
    for (double p : d) total += p;
    for (double& p : d) p /= total;
    const auto it = std::lower_bound(mrf.edges.begin(), mrf.edges.end(), std::make_pair(static_cast<std::size_t>(i - 1), static_cast<std::size_t>(k - 1)),
                                     [](const MrfEdge& e, const std::pair<std::size_t, std::size_t>& key) {
                                       return std::make_pair(e.i, e.k) < key;
                                     });
    if (it == mrf.edges.end() || it->i != static_cast<std::size_t>(i - 1) || it->k != static_cast<std::size_t>(k - 1)) continue;
    found[static_cast<std::size_t>(it - mrf.edges.begin())] = std::move(d);
  }
  for (std::size_t e = 0; e < mrf.edges.size(); ++e) {
    if (found[e].empty()) throw FormatError("distance file: no distribution for edge " + pair_name(mrf.edges[e].i, mrf.edges[e].k));
    mrf.edges[e].dist = std::move(found[e]);
  }
  mrf.distance_schema = schema.name;
  return mrf;
}

Mrf attach_two_bin(Mrf mrf, double a, double b) {
  for (auto& e : mrf.edges) {
    const double p = sigmoid(a * e.strength + b);
    e.dist = {p, 1.0 - p};
  }
  mrf.distance_schema = two_bin_schema().name;
  return mrf;
}

std::string format_distance_distributions(const Mrf& mrf) {
  if (!mrf.has_distances()) throw ArgumentError("mrf has no distance distributions");
  std::string out = "# bins " + mrf.distance_schema + "\n";
  for (const auto& e : mrf.edges) {
    out += std::to_string(e.i + 1) + " " + std::to_string(e.k + 1);
    for (double p : e.dist) out += " " + format_double(p);
    out += "\n";
  }
  return out;
}

std::string serialize_mrf(const Mrf& mrf) {
  ByteWriter w;
  w.str(mrf.id);
  w.str(mrf.provenance);
  w.str(mrf.distance_schema);
  w.u64(mrf.nodes.size());
  for (const auto& node : mrf.nodes) {
    w.u64(node.index);
    for (Eigen::Index a = 0; a < node.marginal.size(); ++a) w.f64(node.marginal(a));
    for (Eigen::Index k = 0; k < node.context.size(); ++k) w.f64(node.context.data()[k]);
  }
  w.u64(mrf.edges.size());
  for (const auto& e : mrf.edges) {
    w.u64(e.i);
    w.u64(e.k);
    w.f64(e.strength);
    w.u64(e.dist.size());
    for (double p : e.dist) w.f64(p);
  }
  w.u64(static_cast<std::uint64_t>(mrf.extra.cols()));
  for (Eigen::Index k = 0; k < mrf.extra.size(); ++k) w.f64(mrf.extra.data()[k]);
  return frame_payload(kMrfMagic, kMrfMajor, kMrfMinor, w.bytes());
}

Mrf load_mrf(std::string_view bytes) {
  ByteReader r(unframe_payload(bytes, kMrfMagic, kMrfMajor));
  Mrf mrf;
  mrf.id = r.str();
  mrf.provenance = r.str();
  mrf.distance_schema = r.str();
  const auto L = r.u64();
  require(L <= r.remaining() / 8, "node count exceeds stream size");
  mrf.nodes.resize(L);
  for (auto& node : mrf.nodes) {
    node.index = r.u64();
    node.marginal.resize(kNumSymbols);
    for (Eigen::Index a = 0; a < node.marginal.size(); ++a) node.marginal(a) = r.f64();
    node.context.resize(kNumSymbols, kContextWidth);
    for (Eigen::Index k = 0; k < node.context.size(); ++k) node.context.data()[k] = r.f64();
  }
  const auto E = r.u64();
  require(E <= r.remaining() / 8, "edge count exceeds stream size");
  mrf.edges.resize(E);
  for (auto& e : mrf.edges) {
    e.i = r.u64();
    e.k = r.u64();
    e.strength = r.f64();
    const auto bins = r.u64();
    require(bins <= 64, "implausible bin count");
    e.dist.resize(bins);
    for (double& p : e.dist) p = r.f64();
  }
  const auto cols = r.u64();
  require(cols <= 4096, "implausible extra feature count");
  mrf.extra.resize(static_cast<Eigen::Index>(cols == 0 ? 0 : L), static_cast<Eigen::Index>(cols));
  for (Eigen::Index k = 0; k < mrf.extra.size(); ++k) mrf.extra.data()[k] = r.f64();
  require(r.remaining() == 0, "trailing bytes");
  validate_mrf(mrf);
  return mrf;
}

SequenceFeatures mrf_features(const Mrf& mrf) {
  SequenceFeatures s;
  const auto L = static_cast<Eigen::Index>(mrf.length());
  s.profile.resize(L, kNumSymbols);
  for (Eigen::Index c = 0; c < L; ++c) s.profile.row(c) = mrf.nodes[static_cast<std::size_t>(c)].marginal.transpose();
  s.extra = mrf.extra.size() > 0 ? mrf.extra : Eigen::MatrixXd(L, 0);
  return s;
}

}  // namespace mrfalign
