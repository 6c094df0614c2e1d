#include "mrfalign/msa.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mrfalign/alphabet.hpp"
#include "mrfalign/error.hpp"

namespace mrfalign {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::uint8_t> encode_row(std::string_view residues) {
  std::vector<std::uint8_t> row;
  row.reserve(residues.size());
  for (char c : residues) {
    if (c == ' ' || c == '\t' || c == '\r') continue;
    row.push_back(encode_symbol(c));
  }
  return row;
}

Msa finish(std::vector<std::string> ids, std::vector<std::vector<std::uint8_t>> rows) {
  if (rows.empty()) throw FormatError("alignment contains no sequences");
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw FormatError("duplicate sequence id '" + id + "'");
  }
  const std::size_t length = rows.front().size();
  if (length == 0) throw FormatError("sequence '" + ids.front() + "' is empty");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != length) {
      throw FormatError("row '" + ids[r] + "' has length " + std::to_string(rows[r].size()) +
                        ", expected " + std::to_string(length));
    }
  }
  Msa msa;
  msa.ids = std::move(ids);
  msa.rows = std::move(rows);
  return msa;
}

Msa parse_fasta(std::string_view text) {
  std::vector<std::string> ids;
  std::vector<std::string> seqs;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty()) continue;
    if (line.front() == '>') {
      auto header = trim(line.substr(1));
      const auto space = header.find_first_of(" \t");
      std::string id(header.substr(0, space));
      if (id.empty()) id = "seq" + std::to_string(ids.size() + 1);
      ids.push_back(std::move(id));
      seqs.emplace_back();
    } else {
      if (ids.empty()) {
        throw FormatError("line " + std::to_string(line_no) + ": sequence data before first '>' header");
      }
      seqs.back().append(line);
    }
    if (end == text.size()) break;
  }
  std::vector<std::vector<std::uint8_t>> rows;
  rows.reserve(seqs.size());
  for (const auto& s : seqs) rows.push_back(encode_row(s));
  return finish(std::move(ids), std::move(rows));
}

Msa parse_stockholm(std::string_view text) {
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> seqs;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line == "//") break;
    if (!line.empty() && line.front() != '#') {
      const auto space = line.find_first_of(" \t");
      if (space == std::string_view::npos) throw FormatError("stockholm line without sequence: '" + std::string(line) + "'");
      std::string id(line.substr(0, space));
      const auto residues = trim(line.substr(space));
      auto [it, inserted] = index.try_emplace(id, ids.size());
      if (inserted) {
        ids.push_back(id);
        seqs.emplace_back();
      }
      seqs[it->second].append(residues);
    }
    if (end == text.size()) break;
  }
  std::vector<std::vector<std::uint8_t>> rows;
  rows.reserve(seqs.size());
  for (const auto& s : seqs) rows.push_back(encode_row(s));
  return finish(std::move(ids), std::move(rows));
}

}  // namespace

std::string Msa::row_string(std::size_t r) const {
  std::string s;
  s.reserve(length());
  for (auto code : rows.at(r)) s.push_back(decode_symbol(code));
  return s;
}

Msa make_msa(const std::vector<std::string>& sequences, std::vector<std::string> ids) {
  if (ids.empty()) {
    for (std::size_t i = 0; i < sequences.size(); ++i) ids.push_back("seq" + std::to_string(i + 1));
  }
  if (ids.size() != sequences.size()) throw ArgumentError("make_msa: ids and sequences differ in count");
  std::vector<std::vector<std::uint8_t>> rows;
  for (const auto& s : sequences) rows.push_back(encode_row(s));
  return finish(std::move(ids), std::move(rows));
}

Msa parse_msa(std::string_view text, MsaFormat format) {
  if (trim(text).empty()) throw FormatError("empty alignment input");
  return format == MsaFormat::Stockholm ? parse_stockholm(text) : parse_fasta(text);
}

Msa parse_msa(std::string_view text) {
  const auto t = trim(text);
  const bool stockholm = t.rfind("# STOCKHOLM", 0) == 0;
  return parse_msa(text, stockholm ? MsaFormat::Stockholm : MsaFormat::AlignedFasta);
}

Msa read_msa_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open alignment file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_msa(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Msa remove_duplicates(const Msa& msa) {
  Msa out;
  out.source_columns = msa.source_columns;
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < msa.depth(); ++r) {
    std::string key(msa.rows[r].begin(), msa.rows[r].end());
    if (seen.insert(std::move(key)).second) {
      out.ids.push_back(msa.ids[r]);
      out.rows.push_back(msa.rows[r]);
    }
  }
  return out;
}

Msa filter_gap_columns(const Msa& msa, double max_gap_fraction) {
  if (!(max_gap_fraction > 0.0 && max_gap_fraction <= 1.0)) {
    throw ArgumentError("filter_gap_columns: max_gap_fraction must lie in (0, 1]");
  }
  const std::size_t n = msa.depth();
  const std::size_t length = msa.length();
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < length; ++c) {
    std::size_t gaps = 0;
    for (const auto& row : msa.rows) gaps += row[c] == kGap;
    if (static_cast<double>(gaps) <= max_gap_fraction * static_cast<double>(n)) keep.push_back(c);
  }
  if (keep.empty()) throw ArgumentError("filter_gap_columns: every column exceeds the gap threshold");
  Msa out;
  out.ids = msa.ids;
  out.rows.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    out.rows[r].reserve(keep.size());
    for (auto c : keep) out.rows[r].push_back(msa.rows[r][c]);
  }
  out.source_columns.reserve(keep.size());
  for (auto c : keep) out.source_columns.push_back(msa.source_column(c));
  return out;
}

double sequence_identity(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::size_t same = 0;
  std::size_t covered = 0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    if (a[c] == kGap && b[c] == kGap) continue;
    ++covered;
    same += a[c] == b[c];
  }
  return covered == 0 ? 1.0 : static_cast<double>(same) / static_cast<double>(covered);
}

std::vector<double> sequence_weights(const Msa& msa, double identity_threshold) {
  const std::size_t n = msa.depth();
  if (n == 0) throw ArgumentError("sequence_weights: empty alignment");
  std::vector<std::size_t> neighbours(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t s = r + 1; s < n; ++s) {
      if (sequence_identity(msa.rows[r], msa.rows[s]) >= identity_threshold) {
        ++neighbours[r];
        ++neighbours[s];
      }
    }
  }
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / static_cast<double>(neighbours[r]);
  return w;
}

double meff(const Msa& msa, double hamming_threshold) {
  const std::size_t n = msa.depth();
  if (n == 0) throw ArgumentError("meff: empty alignment");
  const double length = static_cast<double>(msa.length());
  std::vector<std::size_t> similar(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t s = r + 1; s < n; ++s) {
      std::size_t diff = 0;
      for (std::size_t c = 0; c < msa.length(); ++c) diff += msa.rows[r][c] != msa.rows[s][c];
      if (static_cast<double>(diff) / length < hamming_threshold) {
        ++similar[r];
        ++similar[s];
      }
    }
  }
  double total = 0.0;
  for (auto k : similar) total += 1.0 / static_cast<double>(k);
  return total;
}

Profile build_profile(const Msa& msa, std::span<const double> weights, double pseudocount) {
  if (weights.size() != msa.depth()) throw ArgumentError("build_profile: weight count does not match rows");
  if (pseudocount < 0.0) throw ArgumentError("build_profile: pseudocount must be nonnegative");
  const std::size_t length = msa.length();
  Profile prof;
  prof.pseudocount = pseudocount;
  prof.p = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(length), kNumSymbols,
                                     pseudocount / static_cast<double>(kNumSymbols));
  double total = pseudocount;
  for (std::size_t r = 0; r < msa.depth(); ++r) {
    total += weights[r];
    for (std::size_t c = 0; c < length; ++c) prof.p(static_cast<Eigen::Index>(c), msa.rows[r][c]) += weights[r];
  }
  if (total <= 0.0) throw ArgumentError("build_profile: zero total weight");
  prof.p /= total;
  return prof;
}

std::optional<double> column_neff(std::span<const double> column) {
  double mass = 0.0;
  for (std::size_t a = 0; a < kNumAminoAcids; ++a) mass += column[a];
  if (mass <= 0.0) return std::nullopt;
  double entropy = 0.0;
  for (std::size_t a = 0; a < kNumAminoAcids; ++a) {
    const double q = column[a] / mass;
    if (q > 0.0) entropy -= q * std::log(q);
  }
  return std::clamp(std::exp(entropy), 1.0, 20.0);
}

double neff(const Profile& profile) {
  double sum = 0.0;
  std::size_t counted = 0;
  std::array<double, kNumSymbols> col{};
  for (Eigen::Index c = 0; c < profile.p.rows(); ++c) {
    for (std::size_t a = 0; a < kNumSymbols; ++a) col[a] = profile.p(c, static_cast<Eigen::Index>(a));
    if (auto v = column_neff(col)) {
      sum += *v;
      ++counted;
    }
  }
  return counted == 0 ? 1.0 : sum / static_cast<double>(counted);
}

MiMatrix mutual_information(const Msa& msa, std::span<const double> weights, double pseudocount) {
  const std::size_t length = msa.length();
  if (length < 2) throw ArgumentError("mutual_information: need at least two columns");
  if (weights.size() != msa.depth()) throw ArgumentError("mutual_information: weight count does not match rows");
  constexpr std::size_t Q = kNumSymbols;
  double total = pseudocount;
  for (double w : weights) total += w;
  const double cell = pseudocount / static_cast<double>(Q * Q);

  // Column marginals consistent with the pair tables: sum over b of q_ij(a, b).
  Eigen::MatrixXd single = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(length), Q, pseudocount / Q);
  for (std::size_t r = 0; r < msa.depth(); ++r) {
    for (std::size_t c = 0; c < length; ++c) single(static_cast<Eigen::Index>(c), msa.rows[r][c]) += weights[r];
  }
  single /= total;

  MiMatrix out;
  out.m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(length));
  for (std::size_t i = 0; i < length; ++i) {
    double h = 0.0;
    for (std::size_t a = 0; a < Q; ++a) {
      const double q = single(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
      if (q > 0.0) h -= q * std::log(q);
    }
    out.m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = h;
  }

  std::array<double, Q * Q> pair{};
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = i + 1; j < length; ++j) {
      pair.fill(cell);
      for (std::size_t r = 0; r < msa.depth(); ++r) pair[msa.rows[r][i] * Q + msa.rows[r][j]] += weights[r];
      double mi = 0.0;
      for (std::size_t a = 0; a < Q; ++a) {
        const double qa = single(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
        for (std::size_t b = 0; b < Q; ++b) {
          const double qab = pair[a * Q + b] / total;
          if (qab <= 0.0) continue;
          const double qb = single(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b));
          mi += qab * std::log(qab / (qa * qb));
        }
      }
      mi = std::max(mi, 0.0);
      out.m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mi;
      out.m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = mi;
    }
  }
  return out;
}

MiMatrix mi_power(const MiMatrix& mi, int k) {
  if (k < 2 || k > 11) throw ArgumentError("mi_power: k must lie in [2, 11]");
  if (mi.power != 1) throw ArgumentError("mi_power: input must be a raw MI matrix");
  MiMatrix out;
  out.m = mi.m;
  for (int p = 1; p < k; ++p) out.m = (out.m * mi.m).eval();
  out.m = (0.5 * (out.m + out.m.transpose())).eval();
  out.power = k;
  return out;
}

MsaSummary summarize(const Msa& msa) {
  MsaSummary s;
  s.rows = msa.depth();
  s.columns = msa.length();
  s.meff = meff(msa);
  const std::vector<double> unit(msa.depth(), 1.0);
  s.neff = neff(build_profile(msa, unit, 0.0));
  double gap_total = 0.0;
  for (std::size_t c = 0; c < msa.length(); ++c) {
    std::size_t gaps = 0;
    for (const auto& row : msa.rows) gaps += row[c] == kGap;
    const double frac = static_cast<double>(gaps) / static_cast<double>(msa.depth());
    gap_total += frac;
    if (frac > 0.9) ++s.gappy_columns;
  }
  s.mean_gap_fraction = gap_total / static_cast<double>(msa.length());
  return s;
}

}  // namespace mrfalign
