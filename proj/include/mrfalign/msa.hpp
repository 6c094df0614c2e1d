#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mrfalign {

enum class MsaFormat { AlignedFasta, Stockholm };

// A multiple sequence alignment over the 21-symbol alphabet. Rows hold symbol
// codes (see alphabet.hpp); every row has length() entries.
struct Msa {
  std::vector<std::string> ids;
  std::vector<std::vector<std::uint8_t>> rows;
  // Original column index of each current column; empty means identity.
  std::vector<std::size_t> source_columns;

  std::size_t depth() const { return rows.size(); }
  std::size_t length() const { return rows.empty() ? 0 : rows.front().size(); }
  std::size_t source_column(std::size_t c) const {
    return source_columns.empty() ? c : source_columns[c];
  }
  std::string row_string(std::size_t r) const;

  bool operator==(const Msa&) const = default;
};

// Builds an Msa from equal-length sequence strings; ids default to "seqN".
Msa make_msa(const std::vector<std::string>& sequences,
             std::vector<std::string> ids = {});

Msa parse_msa(std::string_view text, MsaFormat format);
// Detects Stockholm by its "# STOCKHOLM" marker; aligned FASTA otherwise.
Msa parse_msa(std::string_view text);
Msa read_msa_file(const std::filesystem::path& path);

Msa remove_duplicates(const Msa& msa);

// Drops columns whose gap fraction strictly exceeds max_gap_fraction.
Msa filter_gap_columns(const Msa& msa, double max_gap_fraction = 0.9);

// Fraction of identical residues over columns where at least one row is non-gap.
double sequence_identity(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// Inverse cluster-size weights at the given identity threshold.
std::vector<double> sequence_weights(const Msa& msa, double identity_threshold = 0.62);

// Number of non-redundant sequences at a normalized Hamming distance threshold.
double meff(const Msa& msa, double hamming_threshold = 0.3);

// Per-column position frequencies: L rows x 21 columns (gap last).
struct Profile {
  Eigen::MatrixXd p;
  double pseudocount = 0.0;

  std::size_t length() const { return static_cast<std::size_t>(p.rows()); }
};

Profile build_profile(const Msa& msa, std::span<const double> weights,
                      double pseudocount = 1.0);

// exp(entropy) over the 20 amino acids of a 21-vector (gap mass excluded).
// Returns nullopt when the column carries no amino-acid mass.
std::optional<double> column_neff(std::span<const double> column);
// Mean column NEFF over columns with amino-acid mass; 1.0 if none.
double neff(const Profile& profile);

struct MiMatrix {
  Eigen::MatrixXd m;
  int power = 1;
};

// Weighted mutual information. `pseudocount` is the total pseudo-weight
// spread uniformly over the 21x21 pair table (1/441 per cell at 1.0).
// The diagonal carries the column entropy.
MiMatrix mutual_information(const Msa& msa, std::span<const double> weights,
                            double pseudocount = 1.0);

// Matrix power MI^k for k in [2, 11].
MiMatrix mi_power(const MiMatrix& mi, int k);

struct MsaSummary {
  std::size_t rows = 0;
  std::size_t columns = 0;
  double meff = 0.0;
  double neff = 0.0;
  double mean_gap_fraction = 0.0;
  std::size_t gappy_columns = 0;  // columns above the 90% gap filter
};

MsaSummary summarize(const Msa& msa);

}  // namespace mrfalign
