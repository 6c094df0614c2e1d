#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "cli.hpp"
#include "mrfalign/aligner.hpp"
#include "mrfalign/alphabet.hpp"
#include "mrfalign/cnf.hpp"
#include "mrfalign/error.hpp"
#include "mrfalign/gauss.hpp"
#include "mrfalign/ggl.hpp"
#include "mrfalign/io.hpp"
#include "mrfalign/mrf.hpp"
#include "mrfalign/msa.hpp"
#include "mrfalign/potentials.hpp"
#include "mrfalign/search.hpp"

namespace fs = std::filesystem;

namespace mrfalign::cli {

namespace {

// Reads a file and prefixes format errors with its path.
template <class Fn>
auto parse_file(const std::string& path, Fn&& parse) {
  const auto text = read_file(path);
  try {
    return parse(text);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

Mrf read_mrf(const std::string& path) {
  return parse_file(path, [](const std::string& t) { return load_mrf(t); });
}

CnfModel read_model(const std::string& path) {
  return parse_file(path, [](const std::string& t) { return load_model(t); });
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ArgumentError(message);
}

std::string kv(std::string_view key, const std::string& value) { return std::string(key) + "\t" + value + "\n"; }

// Most probable amino acid of every node.
std::string consensus(const Mrf& mrf) {
  std::string seq;
  for (const auto& node : mrf.nodes) {
    Eigen::Index best = 0;
    node.marginal.head(kNumAminoAcids).maxCoeff(&best);
    seq.push_back(decode_symbol(static_cast<std::uint8_t>(best)));
  }
  return seq;
}

// ---------------------------------------------------------------- msa-stats

struct MsaStatsArgs {
  std::string msa;
};

void run_msa_stats(Context& ctx, const MsaStatsArgs& a) {
  const auto msa = read_msa_file(a.msa);
  const auto s = summarize(msa);
  std::string out;
  out += kv("rows", std::to_string(s.rows));
  out += kv("columns", std::to_string(s.columns));
  out += kv("meff", format_double(s.meff));
  out += kv("neff", format_double(s.neff));
  out += kv("mean_gap_fraction", format_double(s.mean_gap_fraction));
  out += kv("gappy_columns", std::to_string(s.gappy_columns));
  ctx.emit(out);
}

// ---------------------------------------------------------------- mrf-build

struct MrfBuildArgs {
  std::string msa;
  std::string source = "mi";
  std::string couplings;
  std::string budget = "topk";
  std::size_t top_k = 10;
  double threshold = 0.1;
  std::size_t min_sep = 6;
  int max_power = 3;
  double pseudocount = 1.0;
  double lambda1 = 0.01;
  double identity = 0.62;
  std::string id;
  std::string distances;
  std::vector<double> two_bin;
  std::string extra;
};

void run_mrf_build(Context& ctx, const MrfBuildArgs& a) {
  const auto msa = read_msa_file(a.msa);
  MrfBuildConfig cfg;
  cfg.source = parse_coupling_source(a.source);
  require(a.budget == "topk" || a.budget == "threshold", "--budget must be topk or threshold");
  cfg.budget.kind = a.budget == "topk" ? EdgeBudget::Kind::TopK : EdgeBudget::Kind::Threshold;
  cfg.budget.top_k = a.top_k;
  cfg.budget.threshold = a.threshold;
  cfg.min_sep = a.min_sep;
  cfg.max_power = a.max_power;
  cfg.pseudocount = a.pseudocount;
  cfg.lambda1 = a.lambda1;
  cfg.ggl.threads = ctx.threads;
  cfg.id = a.id.empty() ? fs::path(a.msa).stem().string() : a.id;
  require((cfg.source == CouplingSource::File) == !a.couplings.empty(), "--couplings is required by, and only used with, --source file");
  require(a.distances.empty() || a.two_bin.empty(), "--distances and --two-bin are mutually exclusive");

  std::optional<Eigen::MatrixXd> file_scores;
  if (!a.couplings.empty()) {
    file_scores = parse_file(a.couplings, [&](const std::string& t) { return parse_coupling_file(t, msa.length()); });
  }
  const auto weights = sequence_weights(msa, a.identity);
  auto mrf = build_mrf(msa, weights, cfg, file_scores ? &*file_scores : nullptr);
  if (!a.distances.empty()) {
    mrf = parse_file(a.distances, [&](const std::string& t) { return attach_distance_distributions(mrf, t); });
  } else if (!a.two_bin.empty()) {
    mrf = attach_two_bin(std::move(mrf), a.two_bin[0], a.two_bin[1]);
  }
  if (!a.extra.empty()) {
    mrf.extra = parse_file(a.extra, [&](const std::string& t) { return parse_residue_features(t, mrf.length()); });
  }
  validate_mrf(mrf);
  log("mrf-build: " + mrf.id + " length " + std::to_string(mrf.length()) + ", " + std::to_string(mrf.edges.size()) +
      " edges");
  ctx.emit(serialize_mrf(mrf));
}

// ---------------------------------------------------------------- contacts-predict

struct ContactsPredictArgs {
  std::string target;
  std::vector<std::string> aux;
  std::string mapping;
  bool auto_map = false;
  std::string prior;
  std::string baseline = "none";
  double lambda1 = 0.01;
  double lambda2 = 0.005;
  double alpha = 0.001;
  double rho = 0.1;
  std::size_t max_iter = 100;
  double tol = 1e-5;
  double prior_floor = 0.3;
  std::size_t min_sep = 6;
  double gap_filter = 0.9;
  double identity = 0.62;
  double shrinkage = 0.1;
};

struct Family {
  Msa msa;  // deduplicated, gap-filtered
  std::size_t original_length = 0;
  std::vector<double> weights;
  BlockCovariance cov;
};

Family prepare_family(const std::string& path, const ContactsPredictArgs& a) {
  const auto raw = read_msa_file(path);
  Family f;
  f.original_length = raw.length();
  f.msa = filter_gap_columns(remove_duplicates(raw), a.gap_filter);
  if (f.msa.length() == 0) throw FormatError(path + ": no column survives the gap filter");
  f.weights = sequence_weights(f.msa, a.identity);
  f.cov = shrink(empirical_covariance(f.msa, f.weights), a.shrinkage);
  return f;
}

// Original column -> kept column.
std::vector<std::optional<std::size_t>> kept_index(const Family& f) {
  std::vector<std::optional<std::size_t>> inv(f.original_length);
  for (std::size_t c = 0; c < f.msa.length(); ++c) inv[f.msa.source_column(c)] = c;
  return inv;
}

ColumnMapping restrict_mapping(const ColumnMapping& full, const Family& target, const std::vector<Family>& aux) {
  ColumnMapping out;
  out.target_length = target.msa.length();
  for (std::size_t n = 0; n < aux.size(); ++n) {
    const auto inv = kept_index(aux[n]);
    std::vector<std::optional<AlignedColumn>> cols(out.target_length);
    for (std::size_t c = 0; c < out.target_length; ++c) {
      const auto& e = full.aux[n][target.msa.source_column(c)];
      if (e && inv[e->column]) cols[c] = AlignedColumn{*inv[e->column], e->probability};
    }
    out.aux.push_back(std::move(cols));
  }
  return out;
}

ColumnMapping auto_mapping(const Family& target, const std::vector<Family>& aux) {
  ColumnMapping out;
  out.target_length = target.msa.length();
  const auto pt = build_profile(target.msa, target.weights).p;
  for (const auto& f : aux) {
    const auto al = align_profiles(pt, build_profile(f.msa, f.weights).p);
    std::vector<std::optional<AlignedColumn>> cols(out.target_length);
    for (const auto& s : al.path.steps) {
      if (s.state != State::M) continue;
      const double p = std::max(al.mag(static_cast<Eigen::Index>(s.x - 1), static_cast<Eigen::Index>(s.y - 1)), 1e-12);
      cols[s.x - 1] = AlignedColumn{s.y - 1, std::min(p, 1.0)};
    }
    out.aux.push_back(std::move(cols));
  }
  return out;
}

std::string solver_note(std::string_view name, const GglResult& r) {
  return std::string(name) + " iterations=" + std::to_string(r.iterations) + " converged=" + (r.converged ? "1" : "0") +
         " primal=" + format_double(r.primal_residual) + " dual=" + format_double(r.dual_residual);
}

void run_contacts_predict(Context& ctx, const ContactsPredictArgs& a) {
  require(a.baseline == "none" || a.baseline == "voting" || a.baseline == "merge",
          "--baseline must be none, voting, or merge");
  require(a.mapping.empty() || !a.auto_map, "--mapping and --auto-map are mutually exclusive");
  if (a.aux.empty()) {
    require(a.mapping.empty() && !a.auto_map, "--mapping/--auto-map need --aux families");
  } else {
    require(!a.mapping.empty() || a.auto_map, "--aux families need --mapping FILE or --auto-map");
  }
  require(a.prior.empty() || a.baseline != "voting", "--prior is not used by the voting baseline");

  const auto target = prepare_family(a.target, a);
  std::vector<Family> aux;
  for (const auto& p : a.aux) aux.push_back(prepare_family(p, a));

  ColumnMapping mapping{target.msa.length(), {}};
  if (!a.mapping.empty()) {
    std::vector<std::size_t> lengths;
    for (const auto& f : aux) lengths.push_back(f.original_length);
    const auto full = parse_file(a.mapping, [&](const std::string& t) {
      return parse_column_mapping(t, target.original_length, lengths);
    });
    mapping = restrict_mapping(full, target, aux);
  } else if (a.auto_map) {
    mapping = auto_mapping(target, aux);
  }

  std::optional<PriorMatrix> prior;
  if (!a.prior.empty()) {
    const auto full = parse_file(a.prior, [&](const std::string& t) { return parse_prior(t, target.original_length); });
    const auto L = static_cast<Eigen::Index>(target.msa.length());
    PriorMatrix p{Eigen::MatrixXd::Identity(L, L)};
    for (Eigen::Index i = 0; i < L; ++i) {
      for (Eigen::Index j = 0; j < L; ++j) {
        if (i != j) {
          p.p(i, j) = full.p(static_cast<Eigen::Index>(target.msa.source_column(static_cast<std::size_t>(i))),
                             static_cast<Eigen::Index>(target.msa.source_column(static_cast<std::size_t>(j))));
        }
      }
    }
    prior = std::move(p);
  }

  GglConfig cfg;
  cfg.lambda1 = a.lambda1;
  cfg.lambda2 = a.lambda2;
  cfg.alpha = a.alpha;
  cfg.rho = a.rho;
  cfg.max_iter = a.max_iter;
  cfg.tol = a.tol;
  cfg.prior_floor = a.prior_floor;
  cfg.threads = ctx.threads;

  std::vector<std::string> notes;
  bool converged = true;
  auto track = [&](std::string_view name, const GglResult& r) {
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
      log(std::string(name) + " iter " + std::to_string(t + 1) + " primal " + format_double(r.trace[t].first) +
          " dual " + format_double(r.trace[t].second));
    }
    notes.push_back(solver_note(name, r));
    converged = converged && r.converged;
  };

  ContactList list;
  if (a.baseline == "voting") {
    std::vector<const Family*> fams{&target};
    for (const auto& f : aux) fams.push_back(&f);
    std::vector<ContactList> lists;
    std::vector<double> weights;
    for (std::size_t k = 0; k < fams.size(); ++k) {
      const auto r = solve_glasso(fams[k]->cov, a.lambda1, cfg);
      track("glasso family " + std::to_string(k), r);
      lists.push_back(contacts_from_precision(r.precision[0], true, a.min_sep));
      weights.push_back(meff(fams[k]->msa));
    }
    list = majority_vote(lists, mapping, weights);
  } else if (a.baseline == "merge") {
    std::vector<Msa> aux_msas;
    for (const auto& f : aux) aux_msas.push_back(f.msa);
    const auto merged = merge_families(target.msa, aux_msas, mapping);
    const auto w = sequence_weights(merged, a.identity);
    FamilySet fs{{shrink(empirical_covariance(merged, w), a.shrinkage)}, 0};
    const auto r = solve_ggl(fs, GroupSpec{}, cfg, prior ? &*prior : nullptr);
    track("merged", r);
    list = contacts_from_precision(r.precision[0], true, a.min_sep);
  } else {
    FamilySet fs{{target.cov}, 0};
    for (const auto& f : aux) fs.covariances.push_back(f.cov);
    const auto groups = build_groups(mapping, a.alpha);
    const auto r = solve_ggl(fs, groups, cfg, prior ? &*prior : nullptr);
    track(aux.empty() ? "glasso" : "ggl", r);
    list = contacts_from_precision(r.precision[0], true, a.min_sep);
  }
  if (!converged) {
    notes.push_back("warning: solver did not converge within " + std::to_string(a.max_iter) + " iterations");
    log("contacts-predict: warning: solver did not converge");
  }
  notes.push_back("families=" + std::to_string(1 + aux.size()) + " kept_columns=" + std::to_string(target.msa.length()) +
                  " baseline=" + a.baseline);

  for (auto& c : list.entries) {
    c.i = target.msa.source_column(c.i);
    c.j = target.msa.source_column(c.j);
  }
  list.L = target.original_length;
  ctx.emit(format_contacts(list), notes);
}

// ---------------------------------------------------------------- contacts-eval

struct ContactsEvalArgs {
  std::string prediction;
  std::string native;
  std::size_t length = 0;
};

void run_contacts_eval(Context& ctx, const ContactsEvalArgs& a) {
  const auto pred = parse_file(a.prediction, [](const std::string& t) { return parse_contacts(t); });
  const auto native = parse_file(a.native, [](const std::string& t) { return parse_native_contacts(t); });
  const std::size_t L = a.length ? a.length : pred.L;
  require(L > 0, "contacts-eval: sequence length unknown; pass --length");
  ctx.emit(format_contact_accuracy(contact_accuracy(pred, native, L)), {"L=" + std::to_string(L)});
}

// ---------------------------------------------------------------- align and search

struct ScoringArgs {
  std::string model;
  std::string lo;
  std::vector<double> two_bin;
  bool node_only = false;
  double rho = 0.5;
  std::size_t max_iter = 50;
  double edge_weight = 1.0;
  double prune = 0.0;
  std::vector<std::string> background;
  std::size_t samples = 1000;
};

void add_scoring_options(CLI::App* sub, ScoringArgs& s) {
  sub->add_option("--model", s.model, "Trained scorer (cnf-train output)");
  sub->add_option("--lo", s.lo, "Edge log-odds table ('# bins <schema>' header)");
  sub->add_option("--two-bin", s.two_bin, "Attach two-bin distributions logistic(a*strength + b) to MRFs lacking them")
      ->expected(2);
  sub->add_flag("--node-only", s.node_only, "Skip the edge potentials");
  sub->add_option("--rho", s.rho, "ADMM penalty")->capture_default_str();
  sub->add_option("--max-iter", s.max_iter, "ADMM iteration cap")->capture_default_str();
  sub->add_option("--edge-weight", s.edge_weight, "Weight of the edge potentials")->capture_default_str();
  sub->add_option("--prune", s.prune, "Drop edge terms with |theta| below this")->capture_default_str();
  sub->add_option("--background", s.background, "MRFs pooled for the background expectation");
  sub->add_option("--samples", s.samples, "Monte Carlo samples per background bucket")->capture_default_str();
}

// Fills in two-bin distributions and checks that edges can be scored.
Mrf prepare_for_edges(Mrf mrf, const ScoringArgs& s) {
  if (s.node_only || mrf.has_distances() || mrf.edges.empty()) return mrf;
  if (s.two_bin.empty()) {
    throw ArgumentError("MRF '" + mrf.id + "' has edges but no distance distributions; pass --two-bin A B, "
                        "rebuild it with mrf-build --distances, or use --node-only");
  }
  return attach_two_bin(std::move(mrf), s.two_bin[0], s.two_bin[1]);
}

ScorerStack make_stack(const ScoringArgs& s) {
  require(!s.model.empty(), "--model is required");
  ScorerStack stack;
  stack.model = read_model(s.model);
  if (!s.lo.empty()) stack.lo = parse_file(s.lo, [](const std::string& t) { return parse_lo(t); });
  stack.admm.rho = s.rho;
  stack.admm.max_iter = s.max_iter;
  stack.edge_weight = s.edge_weight;
  stack.prune_below = s.prune;
  stack.use_edges = !s.node_only;
  return stack;
}

BackgroundModel background_model(const ScoringArgs& s, std::vector<SequenceFeatures> defaults, std::uint64_t seed) {
  BackgroundModel bg;
  if (s.background.empty()) {
    bg.library = std::move(defaults);
  } else {
    for (const auto& p : s.background) bg.library.push_back(mrf_features(read_mrf(p)));
  }
  bg.n_samples = s.samples;
  bg.seed = seed;
  return bg;
}

struct AlignArgs {
  std::string query;
  std::string templ;
  ScoringArgs scoring;
  std::string background_mode = "sample";
  std::string fasta;
};

void run_align(Context& ctx, const AlignArgs& a) {
  require(a.background_mode == "sample" || a.background_mode == "self", "--background-mode must be sample or self");
  require(a.background_mode == "sample" || a.scoring.background.empty(), "--background needs --background-mode sample");
  auto stack = make_stack(a.scoring);
  const auto templ = prepare_for_edges(read_mrf(a.templ), a.scoring);
  const auto query = prepare_for_edges(read_mrf(a.query), a.scoring);
  const auto ft = mrf_features(templ), fq = mrf_features(query);

  AlignProblem prob;
  std::optional<BackgroundCache> cache;
  if (a.background_mode == "self") {
    const auto bg = background_exhaustive(stack.model, ft, fq);
    prob = {templ.length(), query.length(), node_potentials(stack.model, ft, fq, bg),
            EdgePotentialTable{templ.length(), query.length(), {}}};
    if (stack.use_edges && stack.edge_weight != 0.0) {
      prob.edge = build_edge_potentials(templ, query, stack.lo, stack.prune_below);
      for (auto& t : prob.edge.terms) t.theta *= stack.edge_weight;
    }
  } else {
    ctx.seed_used = true;
    cache.emplace(background_model(a.scoring, {ft, fq}, ctx.seed));
    stack.background = &*cache;
    prob = make_problem(templ, query, stack);
  }
  const auto res = admm_align(prob, stack.admm);
  log("align: " + std::to_string(prob.edge.terms.size()) + " edge terms, " + std::to_string(res.iterations) +
      " iterations, converged " + (res.converged ? "yes" : "no") + ", objective " + format_double(res.objective));
  if (!a.fasta.empty()) {
    ctx.emit_to(a.fasta, format_paired_fasta(res.path, templ.id, consensus(templ), query.id, consensus(query)));
  }
  ctx.emit(format_triples(res), {"template=" + templ.id + " query=" + query.id});
}

struct SearchArgs {
  std::string query;
  std::string library;
  ScoringArgs scoring;
  std::size_t top_k = 200;
  std::string evd;
  bool json = false;
};

// A directory of *.mrf files (id = file stem), or a list file of "id path" lines.
std::vector<std::pair<std::string, std::string>> library_entries(const std::string& where) {
  std::vector<std::pair<std::string, std::string>> out;
  if (fs::is_directory(where)) {
    for (const auto& e : fs::directory_iterator(where)) {
      if (e.is_regular_file() && e.path().extension() == ".mrf") out.emplace_back(e.path().stem().string(), e.path().string());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw FormatError(where + ": no .mrf files");
    return out;
  }
  const auto base = fs::path(where).parent_path();
  const auto text = read_file(where);
  for (const auto& line : tokenize_lines(text)) {
    if (line.tokens.size() != 2) throw FormatError(where + ": line " + std::to_string(line.number) + " needs 'id path'");
    const fs::path p(line.tokens[1]);
    out.emplace_back(std::string(line.tokens[0]), (p.is_absolute() ? p : base / p).string());
  }
  if (out.empty()) throw FormatError(where + ": library list is empty");
  return out;
}

EvdFit read_evd(const std::string& path) {
  return parse_file(path, [&](const std::string& text) {
    std::map<std::string, double> values;
    for (const auto& line : tokenize_lines(text)) {
      if (line.tokens.size() == 2) values[std::string(line.tokens[0])] = parse_double(line.tokens[1], line.number);
    }
    if (!values.count("mu") || !values.count("beta")) throw FormatError("EVD file needs 'mu' and 'beta' lines");
    EvdFit fit;
    fit.mu = values["mu"];
    fit.beta = values["beta"];
    if (!(fit.beta > 0.0) || !std::isfinite(fit.mu)) throw FormatError("EVD file: beta must be positive and mu finite");
    fit.n_fit = values.count("n_fit") ? static_cast<std::size_t>(values["n_fit"]) : 0;
    return fit;
  });
}

void run_search(Context& ctx, const SearchArgs& a) {
  auto stack = make_stack(a.scoring);
  const auto query = prepare_for_edges(read_mrf(a.query), a.scoring);
  TemplateLibrary lib;
  std::vector<SequenceFeatures> pool{mrf_features(query)};
  for (const auto& [id, path] : library_entries(a.library)) {
    auto mrf = prepare_for_edges(read_mrf(path), a.scoring);
    pool.push_back(mrf_features(mrf));
    lib.add(id, std::move(mrf));
  }
  if (a.top_k >= lib.size()) {
    log("search: warning: top K (" + std::to_string(a.top_k) + ") covers the whole library of " +
        std::to_string(lib.size()) + "; every template is realigned");
  }
  ctx.seed_used = true;
  BackgroundCache cache(background_model(a.scoring, std::move(pool), ctx.seed));
  stack.background = &cache;
  std::optional<EvdFit> fit;
  if (!a.evd.empty()) fit = read_evd(a.evd);
  SearchConfig cfg;
  cfg.top_k = a.top_k;
  cfg.threads = ctx.threads;
  const auto res = two_stage_search(query, lib, stack, cfg, fit ? &*fit : nullptr);
  log("search: scanned " + std::to_string(res.scanned) + ", realigned " + std::to_string(res.realigned));
  ctx.emit(format_hits(res, a.json), {"query=" + query.id + " scanned=" + std::to_string(res.scanned) +
                                          " realigned=" + std::to_string(res.realigned)});
}

// ---------------------------------------------------------------- cnf-train

struct CnfTrainArgs {
  std::string pairs;
  std::string objective = "ml";
  double l2 = 0.01;
  std::size_t hidden = 12;
  std::size_t restarts = 3;
  std::size_t max_iter = 100;
  double init_scale = 0.1;
};

void run_cnf_train(Context& ctx, const CnfTrainArgs& a) {
  require(a.objective == "ml" || a.objective == "tm", "--objective must be ml or tm");
  const auto base = fs::path(a.pairs).parent_path();
  auto resolve = [&](std::string_view p) {
    const fs::path path(p);
    return (path.is_absolute() ? path : base / path).string();
  };
  std::vector<TrainingPair> pairs;
  std::optional<std::size_t> extra;
  const auto text = read_file(a.pairs);
  for (const auto& line : tokenize_lines(text)) {
    if (line.tokens.size() != 3) {
      throw FormatError(a.pairs + ": line " + std::to_string(line.number) + " needs 'template.mrf target.mrf reference.triples'");
    }
    const auto templ = mrf_features(read_mrf(resolve(line.tokens[0])));
    const auto target = mrf_features(read_mrf(resolve(line.tokens[1])));
    const auto ref_path = resolve(line.tokens[2]);
    const auto ref = parse_file(ref_path, [](const std::string& t) { return parse_reference_triples(t); });
    if (ref.path.m != templ.length() || ref.path.n != target.length()) {
      throw FormatError(ref_path + ": lattice does not match the MRF lengths");
    }
    const auto E = static_cast<std::size_t>(templ.extra.cols());
    if (static_cast<std::size_t>(target.extra.cols()) != E || (extra && *extra != E)) {
      throw FormatError(a.pairs + ": line " + std::to_string(line.number) + ": extra feature columns disagree");
    }
    extra = E;
    TrainingPair pair;
    pair.features = ProfileFeatures::build(templ, target);
    if (!ref.distances.empty()) {
      pair.ref = make_reference(ref.path, ref.distances, target.length());
    } else {
      pair.ref.path = ref.path;
      for (const auto& s : ref.path.steps) pair.ref.weights.push_back(s.state == State::M ? 1.0 : 0.0);
    }
    pairs.push_back(std::move(pair));
  }
  require(!pairs.empty(), a.pairs + ": no training pairs");

  TrainConfig cfg;
  cfg.objective = a.objective == "ml" ? TrainObjective::MaxLikelihood : TrainObjective::ExpectedTm;
  cfg.l2 = a.l2;
  cfg.hidden = a.hidden;
  cfg.restarts = a.restarts;
  cfg.max_iter = a.max_iter;
  cfg.init_scale = a.init_scale;
  cfg.seed = ctx.seed;
  cfg.threads = ctx.threads;
  cfg.schema = ProfileFeatures::schema(*extra);
  ctx.seed_used = true;
  const auto res = train(pairs, cfg);
  for (std::size_t r = 0; r < res.final_objectives.size(); ++r) {
    log("cnf-train: restart " + std::to_string(r) + " objective " + format_double(res.initial_objectives[r]) + " -> " +
        format_double(res.final_objectives[r]));
  }
  log("cnf-train: " + std::to_string(pairs.size()) + " pairs, best objective " + format_double(res.objective));
  ctx.emit(serialize_model(res.model));
}

// ---------------------------------------------------------------- align-eval

struct AlignEvalArgs {
  std::string prediction;
  std::string reference;
  std::vector<std::size_t> offsets{0, 4};
};

void run_align_eval(Context& ctx, const AlignEvalArgs& a) {
  const auto pred = parse_file(a.prediction, [](const std::string& t) { return parse_reference_triples(t).path; });
  const auto ref = parse_file(a.reference, [](const std::string& t) { return parse_reference_triples(t).path; });
  std::string out = "offset\tprecision\trecall\tcorrect\tpredicted\treference\n";
  for (std::size_t offset : a.offsets) {
    const auto acc = alignment_accuracy(pred, ref, offset);
    out += std::to_string(offset) + "\t" + (acc.precision_defined ? format_double(acc.precision) : std::string("NA")) +
           "\t" + format_double(acc.recall) + "\t" + std::to_string(acc.correct) + "\t" + std::to_string(acc.predicted) +
           "\t" + std::to_string(acc.reference) + "\n";
  }
  ctx.emit(out);
}

// ---------------------------------------------------------------- pvalue-fit

struct PvalueFitArgs {
  std::string scores;
  std::size_t column = 1;
};

void run_pvalue_fit(Context& ctx, const PvalueFitArgs& a) {
  require(a.column >= 1, "--column is 1-based");
  const auto scores = parse_file(a.scores, [&](const std::string& text) {
    std::vector<double> out;
    for (const auto& line : tokenize_lines(text)) {
      if (line.tokens.size() < a.column) {
        throw FormatError("line " + std::to_string(line.number) + " has no column " + std::to_string(a.column));
      }
      out.push_back(parse_double(line.tokens[a.column - 1], line.number));
    }
    return out;
  });
  const auto fit = fit_evd(scores);
  std::string out;
  out += kv("mu", format_double(fit.mu));
  out += kv("beta", format_double(fit.beta));
  out += kv("n_fit", std::to_string(fit.n_fit));
  out += kv("loglik", format_double(evd_log_likelihood(scores, fit.mu, fit.beta)));
  ctx.emit(out);
}

}  // namespace

void register_commands(CLI::App& app, Context& ctx, std::vector<std::pair<CLI::App*, Command>>& commands) {
  // Argument structs live for the whole run; CLI11 writes into them during parsing.
  static MsaStatsArgs msa_stats;
  static MrfBuildArgs mrf_build;
  static ContactsPredictArgs contacts_predict;
  static ContactsEvalArgs contacts_eval;
  static AlignArgs align;
  static SearchArgs search;
  static CnfTrainArgs cnf_train;
  static AlignEvalArgs align_eval;
  static PvalueFitArgs pvalue_fit;

  auto* s = app.add_subcommand("msa-stats", "Depth, length, Meff, NEFF, and gap statistics of an alignment");
  s->add_option("msa", msa_stats.msa, "Aligned FASTA or Stockholm file")->required();
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_msa_stats(c, msa_stats); });

  s = app.add_subcommand("mrf-build", "Build a binary MRF from an alignment");
  {
    auto& a = mrf_build;
    s->add_option("msa", a.msa, "Alignment whose first row is the query")->required();
    s->add_option("--source", a.source, "Coupling source: mi, mi_power_sum, ggl, file")->capture_default_str();
    s->add_option("--couplings", a.couplings, "'i j score' file for --source file");
    s->add_option("--budget", a.budget, "Edge budget: topk or threshold")->capture_default_str();
    s->add_option("--top-k", a.top_k, "Partners nominated per node")->capture_default_str();
    s->add_option("--threshold", a.threshold, "Score threshold for --budget threshold")->capture_default_str();
    s->add_option("--min-sep", a.min_sep, "Minimum sequence separation of an edge")->capture_default_str();
    s->add_option("--max-power", a.max_power, "Highest MI power in mi_power_sum")->capture_default_str();
    s->add_option("--pseudocount", a.pseudocount, "Profile and MI pseudocount")->capture_default_str();
    s->add_option("--lambda1", a.lambda1, "Graphical lasso penalty for --source ggl")->capture_default_str();
    s->add_option("--identity", a.identity, "Sequence weighting identity threshold")->capture_default_str();
    s->add_option("--id", a.id, "MRF id (default: file stem)");
    s->add_option("--distances", a.distances, "Per-edge distance distributions ('# bins <schema>')");
    s->add_option("--two-bin", a.two_bin, "Two-bin distributions logistic(a*strength + b)")->expected(2);
    s->add_option("--extra", a.extra, "Per-residue extra features ('# columns ...')");
  }
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_mrf_build(c, mrf_build); });

  s = app.add_subcommand("contacts-predict", "Rank residue contacts with (joint) graphical lasso");
  {
    auto& a = contacts_predict;
    s->add_option("target", a.target, "Target family alignment")->required();
    s->add_option("--aux", a.aux, "Related family alignments");
    s->add_option("--mapping", a.mapping, "'aux target_col aux_col prob' column mapping");
    s->add_flag("--auto-map", a.auto_map, "Map columns with the built-in profile aligner");
    s->add_option("--prior", a.prior, "'i j p' contact prior for the target");
    s->add_option("--baseline", a.baseline, "none (joint solver), voting, or merge")->capture_default_str();
    s->add_option("--lambda1", a.lambda1, "l1 penalty")->capture_default_str();
    s->add_option("--lambda2", a.lambda2, "Prior-weighted penalty")->capture_default_str();
    s->add_option("--alpha", a.alpha, "Group penalty scale")->capture_default_str();
    s->add_option("--rho", a.rho, "ADMM penalty")->capture_default_str();
    s->add_option("--max-iter", a.max_iter, "ADMM iteration cap")->capture_default_str();
    s->add_option("--tol", a.tol, "Residual tolerance")->capture_default_str();
    s->add_option("--prior-floor", a.prior_floor, "Lower bound on prior probabilities")->capture_default_str();
    s->add_option("--min-sep", a.min_sep, "Minimum sequence separation of a reported pair")->capture_default_str();
    s->add_option("--gap-filter", a.gap_filter, "Drop columns with a larger gap fraction")->capture_default_str();
    s->add_option("--identity", a.identity, "Sequence weighting identity threshold")->capture_default_str();
    s->add_option("--shrinkage", a.shrinkage, "Added to the covariance diagonal")->capture_default_str();
  }
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_contacts_predict(c, contacts_predict); });

  s = app.add_subcommand("contacts-eval", "Contact accuracy by range and top L/k");
  s->add_option("prediction", contacts_eval.prediction, "Ranked contacts file")->required();
  s->add_option("native", contacts_eval.native, "'i j' native contacts")->required();
  s->add_option("--length", contacts_eval.length, "Sequence length L (default: from the prediction header)");
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_contacts_eval(c, contacts_eval); });

  s = app.add_subcommand("align", "Align a query MRF to a template MRF");
  s->add_option("query", align.query, "Query MRF")->required();
  s->add_option("template", align.templ, "Template MRF (lattice rows)")->required();
  add_scoring_options(s, align.scoring);
  s->add_option("--background-mode", align.background_mode, "sample (Monte Carlo) or self (exhaustive over the pair)")
      ->capture_default_str();
  s->add_option("--fasta", align.fasta, "Also write a paired FASTA of consensus residues");
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_align(c, align); });

  s = app.add_subcommand("search", "Two-stage search of a query against a template library");
  s->add_option("query", search.query, "Query MRF")->required();
  s->add_option("library", search.library, "Directory of .mrf files or 'id path' list")->required();
  add_scoring_options(s, search.scoring);
  s->add_option("--top-k", search.top_k, "Templates realigned in stage 2")->capture_default_str();
  s->add_option("--evd", search.evd, "pvalue-fit output used for p-values");
  s->add_flag("--json", search.json, "JSON instead of TSV");
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_search(c, search); });

  s = app.add_subcommand("cnf-train", "Train the alignment scorer");
  {
    auto& a = cnf_train;
    s->add_option("pairs", a.pairs, "'template.mrf target.mrf reference.triples' lines")->required();
    s->add_option("--objective", a.objective, "ml or tm")->capture_default_str();
    s->add_option("--l2", a.l2, "L2 penalty")->capture_default_str();
    s->add_option("--hidden", a.hidden, "Hidden units per network")->capture_default_str();
    s->add_option("--restarts", a.restarts, "Random restarts")->capture_default_str();
    s->add_option("--max-iter", a.max_iter, "L-BFGS iterations per restart")->capture_default_str();
    s->add_option("--init-scale", a.init_scale, "Scale of the initial weights")->capture_default_str();
  }
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_cnf_train(c, cnf_train); });

  s = app.add_subcommand("align-eval", "Precision and recall of an alignment against a reference");
  s->add_option("prediction", align_eval.prediction, "Predicted triples")->required();
  s->add_option("reference", align_eval.reference, "Reference triples")->required();
  s->add_option("--offsets", align_eval.offsets, "Shift tolerances")->capture_default_str();
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_align_eval(c, align_eval); });

  s = app.add_subcommand("pvalue-fit", "Fit a Gumbel distribution to null scores");
  s->add_option("scores", pvalue_fit.scores, "Whitespace-separated table of scores")->required();
  s->add_option("--column", pvalue_fit.column, "1-based column holding the score")->capture_default_str();
  add_common_options(s, ctx);
  commands.emplace_back(s, [](Context& c) { run_pvalue_fit(c, pvalue_fit); });
}

}  // namespace mrfalign::cli
