#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mrfalign/aligner.hpp"
#include "mrfalign/ggl.hpp"
#include "mrfalign/mrf.hpp"
#include "mrfalign/potentials.hpp"

namespace mrfalign {

// Templates by id. Entries added from files are read on first use.
class TemplateLibrary {
 public:
  void add(std::string id, Mrf mrf);
  void add_file(std::string id, std::filesystem::path path);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::string& id(std::size_t k) const { return entries_.at(k).id; }
  std::optional<std::size_t> find(std::string_view id) const;
  // Thread-safe; throws FormatError if a file entry does not load.
  std::shared_ptr<const Mrf> get(std::size_t k) const;

 private:
  struct Entry {
    std::string id;
    std::filesystem::path path;
    mutable std::shared_ptr<const Mrf> mrf;
  };
  void check_new(const std::string& id) const;
  std::vector<Entry> entries_;
  mutable std::mutex mutex_;
};

// Everything needed to score one template against one query.
struct ScorerStack {
  CnfModel model;
  BackgroundCache* background = nullptr;  // shared by all pairs
  EdgePotentialModel lo = default_two_bin_lo();
  AdmmAlignConfig admm;
  double edge_weight = 1.0;  // w in exp(F + w G)
  double prune_below = 0.0;
  bool use_edges = true;
};

// Node and (weighted) edge potentials of template (lattice rows) against query.
AlignProblem make_problem(const Mrf& templ, const Mrf& query, const ScorerStack& stack);

struct EvdFit {
  double mu = 0.0;
  double beta = 1.0;
  std::size_t n_fit = 0;
};

struct RankedHit {
  std::string id;
  double stage1 = 0.0;     // node-only DP score
  double objective = 0.0;  // full objective at the realigned path
  std::optional<double> pvalue;
  AlignmentPath alignment;
  std::size_t iterations = 0;
  bool converged = false;
};

struct SearchConfig {
  std::size_t top_k = 200;
  std::size_t threads = 1;
};

struct SearchResult {
  std::vector<RankedHit> hits;  // the realigned top K, by (objective desc, id asc)
  std::size_t scanned = 0;
  std::size_t realigned = 0;
};

// Stage 1 scores every template with the node-only DP; stage 2 realigns the top
// K (by stage-1 score desc, id asc) with ADMM. P-values are filled when `fit` is given.
SearchResult two_stage_search(const Mrf& query, const TemplateLibrary& lib, const ScorerStack& stack,
                              const SearchConfig& cfg, const EvdFit* fit = nullptr);

// Gumbel maximum-likelihood fit, started from the method of moments.
// Throws ArgumentError for fewer than 30 scores, non-finite values, or no spread.
EvdFit fit_evd(const std::vector<double>& scores);
// Upper-tail probability 1 - exp(-exp(-(score - mu) / beta)), kept inside (0, 1).
double pvalue(double score, const EvdFit& fit);
double evd_log_likelihood(const std::vector<double>& scores, double mu, double beta);

struct AlignmentAccuracy {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t correct = 0;
  std::size_t predicted = 0;  // predicted matches
  std::size_t reference = 0;  // reference matches
  bool precision_defined = true;  // false when nothing was predicted
};

// A predicted match (x, y) counts when the reference matches x to some y' with
// |y - y'| <= offset.
AlignmentAccuracy alignment_accuracy(const AlignmentPath& pred, const AlignmentPath& ref, std::size_t offset);

enum class ContactRange { Short, Medium, Long };  // [6, 12), [12, 24), >= 24

struct ContactAccuracyCell {
  ContactRange range = ContactRange::Short;
  std::size_t divisor = 10;    // top L / divisor
  std::size_t requested = 0;   // floor(L / divisor), at least 1
  std::size_t evaluated = 0;   // predictions actually scored
  std::size_t hits = 0;
  double accuracy = 0.0;       // hits / evaluated (0 when nothing was evaluated)
  bool underfilled = false;
};

struct ContactAccuracy {
  std::vector<ContactAccuracyCell> cells;  // ranges outer, divisors 10, 5, 2 inner
  const ContactAccuracyCell& at(ContactRange range, std::size_t divisor) const;
};

std::optional<ContactRange> contact_range(std::size_t i, std::size_t j);
std::string contact_range_name(ContactRange range);
// `native` holds 0-based pairs; the prediction list is read in its stored order.
ContactAccuracy contact_accuracy(const ContactList& pred,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& native, std::size_t L);
// "i j" lines (1-based); further columns are ignored.
std::vector<std::pair<std::size_t, std::size_t>> parse_native_contacts(std::string_view text);

std::string format_hits(const SearchResult& res, bool json = false);
std::string format_contact_accuracy(const ContactAccuracy& acc);

}  // namespace mrfalign
