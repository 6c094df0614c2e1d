#include "mrfalign/gauss.hpp"

#include <vector>

#include "mrfalign/error.hpp"
#include "mrfalign/io.hpp"

namespace mrfalign {

BlockCovariance empirical_covariance(const Msa& msa, std::span<const double> weights) {
  const std::size_t n = msa.depth();
  const std::size_t length = msa.length();
  if (n == 0) throw ArgumentError("empirical_covariance: empty alignment");
  if (weights.size() != n) throw ArgumentError("empirical_covariance: weight count does not match rows");

  BlockCovariance cov(length);
  Eigen::MatrixXd& S = cov.full;
  double total = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(S.rows());
  std::vector<Eigen::Index> idx(length);
  for (std::size_t r = 0; r < n; ++r) {
    const double w = weights[r];
    total += w;
    for (std::size_t i = 0; i < length; ++i) idx[i] = BlockMatrix::offset(i) + msa.rows[r][i];
    for (std::size_t i = 0; i < length; ++i) {
      mean(idx[i]) += w;
      for (std::size_t j = i; j < length; ++j) S(idx[i], idx[j]) += w;
    }
  }
  if (total <= 0.0) throw ArgumentError("empirical_covariance: zero total weight");
  mean /= total;
  // Pair counts were accumulated into the upper block triangle only.
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = i + 1; j < length; ++j) cov.block(j, i) = cov.block(i, j).transpose();
    auto d = cov.block(i, i);
    for (Eigen::Index a = 0; a < d.rows(); ++a) {
      for (Eigen::Index b = a + 1; b < d.cols(); ++b) d(b, a) = d(a, b);
    }
  }
  S /= total;
  S.noalias() -= mean * mean.transpose();
  return cov;
}

BlockCovariance shrink(BlockCovariance cov, double eps) {
  if (!(eps > 0.0)) throw ArgumentError("shrink: eps must be positive");
  cov.full.diagonal().array() += eps;
  cov.shrinkage += eps;
  return cov;
}

bool is_positive_definite(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

CouplingMap coupling_norms(const BlockPrecision& prec) {
  const auto L = static_cast<Eigen::Index>(prec.L);
  CouplingMap map;
  map.s = Eigen::MatrixXd::Zero(L, L);
  for (std::size_t i = 0; i < prec.L; ++i) {
    for (std::size_t j = i + 1; j < prec.L; ++j) {
      const double v = prec.block(i, j).topLeftCorner(kNumAminoAcids, kNumAminoAcids).norm();
      map.s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      map.s(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return map;
}

CouplingMap apc(const CouplingMap& map) {
  if (map.apc_applied) throw ArgumentError("apc: correction already applied");
  const Eigen::Index L = map.s.rows();
  CouplingMap out;
  out.apc_applied = true;
  out.s = map.s;
  if (L == 0) return out;
  // Means run over every entry as supplied, so s = a a^T is removed exactly.
  const Eigen::VectorXd row_mean = map.s.rowwise().mean();
  const double all_mean = map.s.mean();
  if (all_mean != 0.0) out.s -= row_mean * row_mean.transpose() / all_mean;
  out.s.diagonal().setZero();
  return out;
}

namespace {
constexpr std::string_view kPrecisionMagic = "MRFP";
constexpr std::uint16_t kPrecisionMajor = 1;
}  // namespace

std::string serialize_precision(const BlockPrecision& prec) {
  ByteWriter w;
  w.u64(prec.L);
  for (Eigen::Index r = 0; r < prec.full.rows(); ++r) {
    for (Eigen::Index c = 0; c < prec.full.cols(); ++c) w.f64(prec.full(r, c));
  }
  return frame_payload(kPrecisionMagic, kPrecisionMajor, 0, w.bytes());
}

BlockPrecision load_precision(std::string_view bytes) {
  ByteReader r(unframe_payload(bytes, kPrecisionMagic, kPrecisionMajor));
  const auto L = r.u64();
  const auto dim = L * kNumSymbols;
  if (L == 0 || dim * dim * 8 != r.remaining()) throw FormatError("precision payload size mismatch");
  BlockPrecision prec(L);
  for (Eigen::Index i = 0; i < prec.full.rows(); ++i) {
    for (Eigen::Index j = 0; j < prec.full.cols(); ++j) prec.full(i, j) = r.f64();
  }
  return prec;
}

}  // namespace mrfalign
