#include "mrfalign/potentials.hpp"

#include <cmath>
#include <random>

#include "mrfalign/error.hpp"
#include "mrfalign/io.hpp"

namespace mrfalign {

namespace {

bool has_pred(std::size_t x, std::size_t y, State v) { return x >= step_x(v) && y >= step_y(v) && (x + y) > 0; }

// Welford accumulator per state.
struct Moments {
  std::array<double, kNumStates> mean{};
  std::array<double, kNumStates> m2{};
  std::size_t count = 0;

  void add(const std::array<double, kNumStates>& v) {
    ++count;
    for (std::size_t s = 0; s < kNumStates; ++s) {
      const double d = v[s] - mean[s];
      mean[s] += d / static_cast<double>(count);
      m2[s] += d * (v[s] - mean[s]);
    }
  }
  BackgroundExpectation result() const {
    BackgroundExpectation out;
    out.mean = mean;
    out.samples = count;
    for (std::size_t s = 0; s < kNumStates; ++s) {
      out.standard_error[s] = count > 1 ? std::sqrt(m2[s] / static_cast<double>(count - 1) / static_cast<double>(count)) : 0.0;
    }
    return out;
  }
};

std::size_t extra_columns(const SequenceFeatures& s) { return static_cast<std::size_t>(s.extra.cols()); }

}  // namespace

double vertex_energy(const CnfModel& model, std::span<const double> f, State v) {
  double total = 0.0;
  for (State u : kStates) total += transition_score(model, f, u, v);
  return total / static_cast<double>(kNumStates);
}

void check_scorer_schema(const CnfModel& model, std::size_t extra) {
  const auto expected = ProfileFeatures::schema(extra);
  if (model.schema != expected || model.features != ProfileFeatures::dimension(extra)) {
    throw ArgumentError("scorer schema mismatch: model expects '" + model.schema + "' with " +
                        std::to_string(model.features) + " features, inputs provide '" + expected + "' with " +
                        std::to_string(ProfileFeatures::dimension(extra)) + " features");
  }
}

BackgroundExpectation background_expectation(const CnfModel& model, std::size_t m, std::size_t n,
                                             const BackgroundModel& bg) {
  if (bg.library.empty()) throw ArgumentError("background: library is empty");
  if (bg.n_samples == 0) throw ArgumentError("background: n_samples must be at least 1");
  if (m == 0 || n == 0) throw ArgumentError("background: lengths must be positive");
  const std::size_t extra = extra_columns(bg.library.front());
  check_scorer_schema(model, extra);
  std::vector<std::pair<std::size_t, Eigen::Index>> pool;
  for (std::size_t p = 0; p < bg.library.size(); ++p) {
    if (extra_columns(bg.library[p]) != extra) throw ArgumentError("background: library entries disagree on extra columns");
    for (Eigen::Index c = 0; c < bg.library[p].profile.rows(); ++c) pool.emplace_back(p, c);
  }
  if (pool.empty()) throw ArgumentError("background: library has no columns");
  std::mt19937_64 rng(bg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::uniform_int_distribution<std::size_t> px(1, m), py(1, n);
  auto compose = [&](std::size_t length) {
    SequenceFeatures s;
    s.profile.resize(static_cast<Eigen::Index>(length), kNumSymbols);
    s.extra.resize(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(extra));
    for (Eigen::Index r = 0; r < s.profile.rows(); ++r) {
      const auto& [p, c] = pool[pick(rng)];
      s.profile.row(r) = bg.library[p].profile.row(c);
      if (extra > 0) s.extra.row(r) = bg.library[p].extra.row(c);
    }
    return s;
  };
  Moments acc;
  std::vector<double> f(model.features);
  for (std::size_t k = 0; k < bg.n_samples; ++k) {
    const auto T = compose(m);
    const auto S = compose(n);
    const std::size_t x = px(rng), y = py(rng);
    std::array<double, kNumStates> e{};
    for (State v : kStates) {
      ProfileFeatures::vertex(T, S, x, y, v, f);
      e[index(v)] = vertex_energy(model, f, v);
    }
    acc.add(e);
  }
  return acc.result();
}

BackgroundExpectation background_exhaustive(const CnfModel& model, const SequenceFeatures& templ,
                                            const SequenceFeatures& target) {
  check_scorer_schema(model, extra_columns(templ));
  const auto table = ProfileFeatures::build(templ, target);
  Moments acc;
  for (std::size_t x = 1; x <= table.m; ++x) {
    for (std::size_t y = 1; y <= table.n; ++y) {
      std::array<double, kNumStates> e{};
      for (State v : kStates) e[index(v)] = vertex_energy(model, table.at(x, y, v), v);
      acc.add(e);
    }
  }
  return acc.result();
}

std::size_t BackgroundCache::bucket_length(std::size_t length) {
  if (length == 0) throw ArgumentError("background cache: length must be positive");
  return (length - 1) / kShapeBucket * kShapeBucket + kShapeBucket / 2;
}

BackgroundExpectation BackgroundCache::get(const CnfModel& model, std::size_t m, std::size_t n) {
  const auto key = std::make_tuple(fnv1a(serialize_model(model)), bucket_length(m), bucket_length(n));
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto value = background_expectation(model, std::get<1>(key), std::get<2>(key), bg_);
  std::lock_guard lock(mutex_);
  return cache_.emplace(key, value).first->second;
}

std::size_t BackgroundCache::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

NodePotentialTable node_potentials(const CnfModel& model, const SequenceFeatures& templ,
                                   const SequenceFeatures& target, const BackgroundExpectation& bg) {
  check_scorer_schema(model, extra_columns(templ));
  const auto table = ProfileFeatures::build(templ, target);
  NodePotentialTable out(table.m, table.n);
  // Gap energies depend on one index only; evaluate once per row or column.
  std::vector<double> it_row(table.m + 1, 0.0), is_col(table.n + 1, 0.0);
  for (std::size_t x = 1; x <= table.m; ++x) it_row[x] = vertex_energy(model, table.at(x, 0, State::It), State::It) - bg.mean[index(State::It)];
  for (std::size_t y = 1; y <= table.n; ++y) is_col[y] = vertex_energy(model, table.at(0, y, State::Is), State::Is) - bg.mean[index(State::Is)];
  for (std::size_t x = 0; x <= table.m; ++x) {
    for (std::size_t y = 0; y <= table.n; ++y) {
      if (has_pred(x, y, State::M)) {
        out(x, y, State::M) = vertex_energy(model, table.at(x, y, State::M), State::M) - bg.mean[index(State::M)];
      }
      if (x > 0) out(x, y, State::It) = it_row[x];
      if (y > 0) out(x, y, State::Is) = is_col[y];
    }
  }
  return out;
}

EdgePotentialModel default_two_bin_lo() {
  EdgePotentialModel lo{two_bin_schema(), Eigen::MatrixXd(2, 2)};
  lo.lo << 1.0, -0.5, -0.5, 0.0;
  return lo;
}

EdgePotentialModel parse_lo(std::string_view text) {
  std::string name;
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.rfind("# bins", 0) == 0) {
      const auto parts = tokenize_lines(line.substr(1));
      if (parts.empty() || parts.front().tokens.size() != 2) throw FormatError("LO file: malformed '# bins' header");
      name = std::string(parts.front().tokens[1]);
      break;
    }
  }
  if (name.empty()) throw FormatError("LO file: missing '# bins <schema>' header");
  EdgePotentialModel lo{schema_by_name(name), {}};
  const auto B = static_cast<Eigen::Index>(lo.schema.bins());
  const auto lines = tokenize_lines(text);
  if (lines.size() != lo.schema.bins()) {
    throw FormatError("LO file: expected " + std::to_string(B) + " rows, found " + std::to_string(lines.size()));
  }
  lo.lo.resize(B, B);
  for (Eigen::Index a = 0; a < B; ++a) {
    const auto& line = lines[static_cast<std::size_t>(a)];
    if (line.tokens.size() != lo.schema.bins()) throw FormatError("LO file: line " + std::to_string(line.number) + " has the wrong width");
    for (Eigen::Index b = 0; b < B; ++b) {
      const double v = parse_double(line.tokens[static_cast<std::size_t>(b)], line.number);
      if (!std::isfinite(v)) throw FormatError("LO file: non-finite value on line " + std::to_string(line.number));
      lo.lo(a, b) = v;
    }
  }
  return lo;
}

std::string format_lo(const EdgePotentialModel& lo) {
  std::string out = "# bins " + lo.schema.name + "\n";
  for (Eigen::Index a = 0; a < lo.lo.rows(); ++a) {
    for (Eigen::Index b = 0; b < lo.lo.cols(); ++b) out += (b ? " " : "") + format_double(lo.lo(a, b));
    out += "\n";
  }
  return out;
}

double edge_potential(std::span<const double> dist_t, std::span<const double> dist_s, const EdgePotentialModel& lo) {
  const auto B = lo.schema.bins();
  if (dist_t.size() != B || dist_s.size() != B) {
    throw ArgumentError("edge_potential: distributions have " + std::to_string(dist_t.size()) + " and " +
                        std::to_string(dist_s.size()) + " bins, schema '" + lo.schema.name + "' has " + std::to_string(B));
  }
  double total = 0.0;
  for (std::size_t a = 0; a < B; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < B; ++b) row += lo.lo(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * dist_s[b];
    total += dist_t[a] * row;
  }
  return total;
}

EdgePotentialTable build_edge_potentials(const Mrf& templ, const Mrf& target, const EdgePotentialModel& lo,
                                         double prune_below) {
  EdgePotentialTable out{templ.length(), target.length(), {}};
  if (templ.edges.empty() || target.edges.empty()) return out;
  for (const Mrf* mrf : {&templ, &target}) {
    if (!mrf->has_distances()) throw ArgumentError("edge potentials: MRF '" + mrf->id + "' has no distance distributions");
    if (mrf->distance_schema != lo.schema.name) {
      throw ArgumentError("edge potentials: MRF '" + mrf->id + "' uses bin schema '" + mrf->distance_schema +
                          "' but the LO table uses '" + lo.schema.name + "'");
    }
  }
  for (const auto& et : templ.edges) {
    for (const auto& es : target.edges) {
      const double theta = edge_potential(et.dist, es.dist, lo);
      if (std::abs(theta) >= prune_below) out.terms.push_back({et.i + 1, et.k + 1, es.i + 1, es.k + 1, theta});
    }
  }
  return out;
}

}  // namespace mrfalign
