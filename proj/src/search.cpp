#include "mrfalign/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mrfalign/error.hpp"
#include "mrfalign/io.hpp"
#include "mrfalign/parallel.hpp"

namespace mrfalign {

namespace {

double node_score(const AlignmentPath& path, const NodePotentialTable& node) {
  double s = 0.0;
  for (const auto& st : path.steps) s += node(st.x, st.y, st.state);
  return s;
}

NodePotentialTable query_node_potentials(const Mrf& templ, const Mrf& query, const ScorerStack& stack) {
  if (stack.background == nullptr) throw ArgumentError("scorer stack: no background model");
  const auto T = mrf_features(templ), S = mrf_features(query);
  const auto bg = stack.background->get(stack.model, T.length(), S.length());
  return node_potentials(stack.model, T, S, bg);
}

// Weighted mean of x under w_i = exp(-(x_i - x_min) / beta), and the matching variance.
std::pair<double, double> tilted_moments(const std::vector<double>& x, double x_min, double beta) {
  double sw = 0.0, sx = 0.0, sxx = 0.0;
  for (double v : x) {
    const double w = std::exp(-(v - x_min) / beta);
    sw += w;
    sx += w * v;
    sxx += w * v * v;
  }
  const double mean = sx / sw;
  return {mean, std::max(0.0, sxx / sw - mean * mean)};
}

}  // namespace

void TemplateLibrary::check_new(const std::string& id) const {
  if (id.empty()) throw ArgumentError("template library: empty id");
  if (find(id)) throw ArgumentError("template library: duplicate id '" + id + "'");
}

void TemplateLibrary::add(std::string id, Mrf mrf) {
  check_new(id);
  entries_.push_back({std::move(id), {}, std::make_shared<const Mrf>(std::move(mrf))});
}

void TemplateLibrary::add_file(std::string id, std::filesystem::path path) {
  check_new(id);
  entries_.push_back({std::move(id), std::move(path), nullptr});
}

std::optional<std::size_t> TemplateLibrary::find(std::string_view id) const {
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    if (entries_[k].id == id) return k;
  }
  return std::nullopt;
}

std::shared_ptr<const Mrf> TemplateLibrary::get(std::size_t k) const {
  const auto& e = entries_.at(k);
  {
    std::lock_guard lock(mutex_);
    if (e.mrf) return e.mrf;
  }
  auto mrf = std::make_shared<const Mrf>(load_mrf(read_file(e.path)));
  std::lock_guard lock(mutex_);
  if (!e.mrf) e.mrf = std::move(mrf);
  return e.mrf;
}

AlignProblem make_problem(const Mrf& templ, const Mrf& query, const ScorerStack& stack) {
  AlignProblem prob{templ.length(), query.length(), query_node_potentials(templ, query, stack),
                    EdgePotentialTable{templ.length(), query.length(), {}}};
  if (stack.use_edges && stack.edge_weight != 0.0) {
    prob.edge = build_edge_potentials(templ, query, stack.lo, stack.prune_below);
    for (auto& t : prob.edge.terms) t.theta *= stack.edge_weight;
  }
  return prob;
}

SearchResult two_stage_search(const Mrf& query, const TemplateLibrary& lib, const ScorerStack& stack,
                              const SearchConfig& cfg, const EvdFit* fit) {
  if (lib.empty()) throw ArgumentError("search: template library is empty");
  if (cfg.top_k == 0) throw ArgumentError("search: top K must be at least 1");
  const std::size_t N = lib.size();

  std::vector<double> stage1(N);
  parallel_for(N, cfg.threads, [&](std::size_t k) {
    const auto node = query_node_potentials(*lib.get(k), query, stack);
    stage1[k] = node_score(dp_align(node), node);
  });
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (stage1[a] != stage1[b]) return stage1[a] > stage1[b];
    return lib.id(a) < lib.id(b);
  });
  order.resize(std::min(cfg.top_k, N));

  SearchResult res;
  res.scanned = N;
  res.realigned = order.size();
  res.hits.resize(order.size());
  parallel_for(order.size(), cfg.threads, [&](std::size_t r) {
    const std::size_t k = order[r];
    const auto prob = make_problem(*lib.get(k), query, stack);
    const auto aligned = admm_align(prob, stack.admm);
    auto& hit = res.hits[r];
    hit.id = lib.id(k);
    hit.stage1 = stage1[k];
    hit.objective = aligned.objective;
    hit.alignment = aligned.path;
    hit.iterations = aligned.iterations;
    hit.converged = aligned.converged;
    if (fit) hit.pvalue = pvalue(aligned.objective, *fit);
  });
  std::sort(res.hits.begin(), res.hits.end(), [](const RankedHit& a, const RankedHit& b) {
    if (a.objective != b.objective) return a.objective > b.objective;
    return a.id < b.id;
  });
  return res;
}

double evd_log_likelihood(const std::vector<double>& scores, double mu, double beta) {
  double ll = 0.0;
  for (double x : scores) {
    const double z = (x - mu) / beta;
    ll += -std::log(beta) - z - std::exp(-z);
  }
  return ll;
}

EvdFit fit_evd(const std::vector<double>& scores) {
  const std::size_t n = scores.size();
  if (n < 30) throw ArgumentError("fit_evd: need at least 30 scores, got " + std::to_string(n));
  for (double x : scores) {
    if (!std::isfinite(x)) throw ArgumentError("fit_evd: non-finite score");
  }
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : scores) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) throw ArgumentError("fit_evd: scores have no spread");
  const double x_min = *std::min_element(scores.begin(), scores.end());

  // Profile likelihood: beta solves g(beta) = beta - mean + E_w[x] = 0, with g increasing,
  // started from the moment estimate; mu then has a closed form.
  auto g = [&](double beta) { return beta - mean + tilted_moments(scores, x_min, beta).first; };
  double beta = std::sqrt(6.0) * sd / std::numbers::pi;
  double lo = beta, hi = beta;
  while (g(lo) > 0.0) lo *= 0.5;
  while (g(hi) < 0.0) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const auto [m1, var] = tilted_moments(scores, x_min, beta);
    const double value = beta - mean + m1;
    if (value > 0.0) hi = beta; else lo = beta;
    const double slope = 1.0 + var / (beta * beta);
    double next = beta - value / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - beta) <= 1e-14 * beta) {
      beta = next;
      break;
    }
    beta = next;
  }
  double sw = 0.0;
  for (double x : scores) sw += std::exp(-(x - x_min) / beta);
  EvdFit fit;
  fit.beta = beta;
  fit.mu = x_min - beta * std::log(sw / static_cast<double>(n));
  fit.n_fit = n;
  return fit;
}

double pvalue(double score, const EvdFit& fit) {
  const double p = -std::expm1(-std::exp(-(score - fit.mu) / fit.beta));
  return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

AlignmentAccuracy alignment_accuracy(const AlignmentPath& pred, const AlignmentPath& ref, std::size_t offset) {
  if (pred.m != ref.m || pred.n != ref.n) throw ArgumentError("alignment_accuracy: paths are on different lattices");
  validate_path(pred);
  validate_path(ref);
  std::vector<std::size_t> partner(ref.m + 1, 0);  // 0 = unmatched
  AlignmentAccuracy acc;
  for (const auto& s : ref.steps) {
    if (s.state == State::M) {
      partner[s.x] = s.y;
      ++acc.reference;
    }
  }
  for (const auto& s : pred.steps) {
    if (s.state != State::M) continue;
    ++acc.predicted;
    const std::size_t y_ref = partner[s.x];
    if (y_ref != 0 && (s.y > y_ref ? s.y - y_ref : y_ref - s.y) <= offset) ++acc.correct;
  }
  acc.precision_defined = acc.predicted > 0;
  acc.precision = acc.predicted ? static_cast<double>(acc.correct) / static_cast<double>(acc.predicted) : 0.0;
  acc.recall = acc.reference ? static_cast<double>(acc.correct) / static_cast<double>(acc.reference) : 0.0;
  return acc;
}

std::optional<ContactRange> contact_range(std::size_t i, std::size_t j) {
  const std::size_t d = i > j ? i - j : j - i;
  if (d < 6) return std::nullopt;
  if (d < 12) return ContactRange::Short;
  if (d < 24) return ContactRange::Medium;
  return ContactRange::Long;
}

std::string contact_range_name(ContactRange range) {
  switch (range) {
    case ContactRange::Short: return "short";
    case ContactRange::Medium: return "medium";
    case ContactRange::Long: return "long";
  }
  return "?";
}

const ContactAccuracyCell& ContactAccuracy::at(ContactRange range, std::size_t divisor) const {
  for (const auto& c : cells) {
    if (c.range == range && c.divisor == divisor) return c;
  }
  throw ArgumentError("contact accuracy: no cell for top L/" + std::to_string(divisor));
}

ContactAccuracy contact_accuracy(const ContactList& pred,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& native, std::size_t L) {
  if (L == 0) throw ArgumentError("contact_accuracy: L must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> truth;
  for (auto [i, j] : native) {
    if (i == j) throw ArgumentError("contact_accuracy: native pair with i == j");
    truth.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::sort(truth.begin(), truth.end());
  auto is_native = [&](std::size_t i, std::size_t j) {
    return std::binary_search(truth.begin(), truth.end(), std::pair{std::min(i, j), std::max(i, j)});
  };
  ContactAccuracy out;
  for (ContactRange range : {ContactRange::Short, ContactRange::Medium, ContactRange::Long}) {
    std::vector<bool> hits;
    for (const auto& c : pred.entries) {
      if (contact_range(c.i, c.j) == range) hits.push_back(is_native(c.i, c.j));
    }
    for (std::size_t divisor : {10, 5, 2}) {
      ContactAccuracyCell cell;
      cell.range = range;
      cell.divisor = divisor;
      cell.requested = std::max<std::size_t>(1, L / divisor);
      cell.evaluated = std::min(cell.requested, hits.size());
      cell.underfilled = cell.evaluated < cell.requested;
      cell.hits = static_cast<std::size_t>(std::count(hits.begin(), hits.begin() + static_cast<long>(cell.evaluated), true));
      cell.accuracy = cell.evaluated ? static_cast<double>(cell.hits) / static_cast<double>(cell.evaluated) : 0.0;
      out.cells.push_back(cell);
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_native_contacts(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& line : tokenize_lines(text)) {
    if (line.tokens.size() < 2) throw FormatError("native contacts: line " + std::to_string(line.number) + " needs 'i j'");
    const auto i = parse_integer(line.tokens[0], line.number), j = parse_integer(line.tokens[1], line.number);
    if (i < 1 || j < 1 || i == j) {
      throw FormatError("native contacts: bad pair on line " + std::to_string(line.number));
    }
    out.emplace_back(static_cast<std::size_t>(i - 1), static_cast<std::size_t>(j - 1));
  }
  return out;
}

std::string format_hits(const SearchResult& res, bool json) {
  if (json) {
    nlohmann::json hits = nlohmann::json::array();
    for (std::size_t r = 0; r < res.hits.size(); ++r) {
      const auto& h = res.hits[r];
      hits.push_back({{"rank", r + 1},
                      {"id", h.id},
                      {"stage1", h.stage1},
                      {"objective", h.objective},
                      {"pvalue", h.pvalue ? nlohmann::json(*h.pvalue) : nlohmann::json(nullptr)},
                      {"iterations", h.iterations},
                      {"converged", h.converged},
                      {"alignment", path_states(h.alignment)}});
    }
    return nlohmann::json{{"scanned", res.scanned}, {"realigned", res.realigned}, {"hits", hits}}.dump(2) + "\n";
  }
  std::string out = "# rank\tid\tstage1\tobjective\tpvalue\n";
  for (std::size_t r = 0; r < res.hits.size(); ++r) {
    const auto& h = res.hits[r];
    out += std::to_string(r + 1) + "\t" + h.id + "\t" + format_double(h.stage1) + "\t" + format_double(h.objective) +
           "\t" + (h.pvalue ? format_double(*h.pvalue) : std::string("NA")) + "\n";
  }
  return out;
}

std::string format_contact_accuracy(const ContactAccuracy& acc) {
  std::string out = "range\ttop\trequested\tevaluated\thits\taccuracy\tunderfilled\n";
  for (const auto& c : acc.cells) {
    out += contact_range_name(c.range) + "\tL/" + std::to_string(c.divisor) + "\t" + std::to_string(c.requested) + "\t" +
           std::to_string(c.evaluated) + "\t" + std::to_string(c.hits) + "\t" + format_double(c.accuracy) + "\t" +
           (c.underfilled ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace mrfalign
