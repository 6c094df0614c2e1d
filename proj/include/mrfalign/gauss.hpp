#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "mrfalign/alphabet.hpp"
#include "mrfalign/msa.hpp"

namespace mrfalign {

// A (21L) x (21L) symmetric matrix viewed as an L x L grid of 21 x 21 blocks.
// Block (i, j) covers rows 21i..21i+20 and columns 21j..21j+20.
struct BlockMatrix {
  std::size_t L = 0;
  Eigen::MatrixXd full;

  BlockMatrix() = default;
  explicit BlockMatrix(std::size_t columns)
      : L(columns), full(Eigen::MatrixXd::Zero(dim(columns), dim(columns))) {}

  static Eigen::Index dim(std::size_t columns) {
    return static_cast<Eigen::Index>(columns * kNumSymbols);
  }
  static Eigen::Index offset(std::size_t column) {
    return static_cast<Eigen::Index>(column * kNumSymbols);
  }

  auto block(std::size_t i, std::size_t j) {
    return full.block(offset(i), offset(j), kNumSymbols, kNumSymbols);
  }
  auto block(std::size_t i, std::size_t j) const {
    return full.block(offset(i), offset(j), kNumSymbols, kNumSymbols);
  }
};

struct BlockCovariance : BlockMatrix {
  double shrinkage = 0.0;
  using BlockMatrix::BlockMatrix;
};

struct BlockPrecision : BlockMatrix {
  using BlockMatrix::BlockMatrix;
};

// Weighted empirical covariance of the one-hot encoded alignment.
BlockCovariance empirical_covariance(const Msa& msa, std::span<const double> weights);

// Adds eps to every diagonal entry.
BlockCovariance shrink(BlockCovariance cov, double eps = 0.1);

// True when a Cholesky factorization of the full matrix succeeds.
bool is_positive_definite(const Eigen::MatrixXd& m);

struct CouplingMap {
  Eigen::MatrixXd s;
  bool apc_applied = false;
};

// Frobenius norm of each 20 x 20 amino-acid sub-block (gap row/column excluded).
CouplingMap coupling_norms(const BlockPrecision& prec);

// Average-product correction s - mean_i mean_j / mean, with means over all
// entries of the input; output diagonal set to 0.
CouplingMap apc(const CouplingMap& map);

// Versioned little-endian dump of a block precision matrix.
std::string serialize_precision(const BlockPrecision& prec);
BlockPrecision load_precision(std::string_view bytes);

}  // namespace mrfalign
