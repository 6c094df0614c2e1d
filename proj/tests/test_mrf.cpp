#include <random>

#include "doctest.h"
#include "mrfalign/error.hpp"
#include "mrfalign/mrf.hpp"
#include "synthetic.hpp"
#include "testing.hpp"

using namespace mrfalign;
using doctest::Approx;

namespace {

Mrf small_mrf(std::mt19937_64& rng, std::size_t L = 20) {
  const auto msa = testing::random_msa(rng, 30, L);
  MrfBuildConfig cfg;
  cfg.budget.top_k = 2;
  cfg.id = "toy";
  return build_mrf(msa, sequence_weights(msa), cfg);
}

}  // namespace

TEST_CASE("zero coupling map yields no edges") {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(12, 12);
  EdgeBudget threshold{EdgeBudget::Kind::Threshold, 0.1, 0};
  CHECK(select_edges(zero, threshold, 6).empty());
  EdgeBudget top{EdgeBudget::Kind::TopK, 0.0, 3};
  CHECK(select_edges(zero, top, 6).empty());
}

TEST_CASE("threshold budget matches a direct scan") {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd s = testing::random_symmetric(rng, 15).cwiseAbs();
  EdgeBudget budget{EdgeBudget::Kind::Threshold, 0.5, 0};
  const auto edges = select_edges(s, budget, 6);
  std::size_t expected = 0;
  for (Eigen::Index i = 0; i < 15; ++i) {
    for (Eigen::Index k = i + 6; k < 15; ++k) expected += s(i, k) >= 0.5;
  }
  CHECK(edges.size() == expected);
  for (const auto& e : edges) {
    CHECK(e.k - e.i >= 6);
    CHECK(e.strength >= 0.5);
  }
}

TEST_CASE("top-k budget arithmetic") {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd s = testing::random_symmetric(rng, 20).cwiseAbs();
  EdgeBudget one{EdgeBudget::Kind::TopK, 0.0, 1};
  const auto edges = select_edges(s, one, 6);
  CHECK(edges.size() <= 20);
  CHECK(!edges.empty());
  // Each node's best partner is among the edges.
  for (Eigen::Index i = 0; i < 20; ++i) {
    Eigen::Index best = -1;
    for (Eigen::Index k = 0; k < 20; ++k) {
      if (std::abs(i - k) < 6) continue;
      if (best < 0 || s(i, k) > s(i, best)) best = k;
    }
    const auto a = static_cast<std::size_t>(std::min(i, best)), b = static_cast<std::size_t>(std::max(i, best));
    CHECK(std::any_of(edges.begin(), edges.end(), [&](const MrfEdge& e) { return e.i == a && e.k == b; }));
  }
  EdgeBudget three{EdgeBudget::Kind::TopK, 0.0, 3};
  CHECK(select_edges(s, three, 6).size() <= 60);
  CHECK_THROWS_AS(select_edges(s, three, 0), ArgumentError);
}

TEST_CASE("node contexts are zero padded and match the profile") {
  std::mt19937_64 rng(5);
  const auto msa = testing::random_msa(rng, 25, 14);
  const auto w = sequence_weights(msa);
  MrfBuildConfig cfg;
  const auto mrf = build_mrf(msa, w, cfg);
  const auto prof = build_profile(msa, w, cfg.pseudocount);
  REQUIRE(mrf.length() == 14);
  // Node 1 (1-based): window offsets -5..-1 fall before the sequence.
  for (Eigen::Index c = 0; c < 5; ++c) CHECK(mrf.nodes[0].context.col(c).isZero(0.0));
  CHECK(mrf.nodes[0].context.col(5) == prof.p.row(0).transpose());
  CHECK(mrf.nodes[13].context.col(10).isZero(0.0));
  CHECK(mrf.nodes[13].context.col(4) == prof.p.row(12).transpose());
  for (std::size_t c = 0; c < 14; ++c) CHECK(mrf.nodes[c].marginal == prof.p.row(static_cast<Eigen::Index>(c)).transpose());
  validate_mrf(mrf, 6);
  CHECK(mrf.provenance == "mi");
  CHECK(mrf == build_mrf(msa, w, cfg));
  for (const auto& e : mrf.edges) CHECK(e.k - e.i >= 6);
}

TEST_CASE("coupling sources recover a planted contact") {
  std::mt19937_64 rng(8);
  const auto fam = testing::make_family(rng, 16, {{2, 12}}, 0.9);
  const auto msa = testing::sample_family(fam, 1500, rng);
  const std::vector<double> w(msa.depth(), 1.0);
  for (auto source : {CouplingSource::MutualInformation, CouplingSource::MiPowerSum, CouplingSource::Ggl}) {
    MrfBuildConfig cfg;
    cfg.source = source;
    cfg.lambda1 = 0.02;
    const auto s = coupling_scores(msa, w, cfg);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.diagonal().isZero(0.0));
    Eigen::Index bi = 0, bk = 0;
    double best = -1e300;
    for (Eigen::Index i = 0; i < 16; ++i) {
      for (Eigen::Index k = i + 6; k < 16; ++k) {
        if (s(i, k) > best) {
          best = s(i, k);
          bi = i;
          bk = k;
        }
      }
    }
    CHECK(bi == 2);
    CHECK(bk == 12);
  }
  MrfBuildConfig file_cfg;
  file_cfg.source = CouplingSource::File;
  CHECK_THROWS_AS(coupling_scores(msa, w, file_cfg), ArgumentError);
  const auto file = parse_coupling_file("3 13 0.9\n1 8 0.2\n", 16);
  CHECK(file(2, 12) == 0.9);
  CHECK(file(12, 2) == 0.9);
  const auto mrf = build_mrf(msa, w, file_cfg, &file);
  CHECK(mrf.edges.size() == 2);
  CHECK(mrf.provenance == "file");
  CHECK_THROWS_AS(parse_coupling_file("3 40 0.9\n", 16), FormatError);
  const Eigen::MatrixXd wrong = Eigen::MatrixXd::Zero(3, 3);
  CHECK_THROWS_AS(build_mrf(msa, w, file_cfg, &wrong), FormatError);
}

TEST_CASE("two-bin fallback") {
  std::mt19937_64 rng(9);
  auto mrf = small_mrf(rng);
  REQUIRE(mrf.edges.size() >= 2);
  mrf.edges[0].strength = 0.0;
  mrf.edges[1].strength = 0.4;
  const auto zero = attach_two_bin(mrf, 3.0, 0.0);
  CHECK(zero.edges[0].dist == std::vector<double>{0.5, 0.5});
  CHECK(zero.distance_schema == "two_bin");
  CHECK(zero.edges[1].dist[0] > zero.edges[0].dist[0]);
  const auto steeper = attach_two_bin(mrf, 6.0, 0.0);
  CHECK(steeper.edges[1].dist[0] > zero.edges[1].dist[0]);
  validate_mrf(zero);
}

TEST_CASE("distance file attachment") {
  std::mt19937_64 rng(10);
  const auto mrf = small_mrf(rng);
  REQUIRE(!mrf.edges.empty());
  std::string text = "# bins epad13\n";
  for (const auto& e : mrf.edges) {
    text += std::to_string(e.i + 1) + " " + std::to_string(e.k + 1);
    for (int b = 0; b < 13; ++b) text += b == 2 ? " 1" : " 0";
    text += "\n";
  }
  text += "1 2 1 0 0 0 0 0 0 0 0 0 0 0 0\n";  // not an edge: ignored
  const auto with = attach_distance_distributions(mrf, text);
  CHECK(with.distance_schema == "epad13");
  std::vector<double> e3(13, 0.0);
  e3[2] = 1.0;
  CHECK(with.edges.front().dist == e3);
  CHECK(attach_distance_distributions(mrf, format_distance_distributions(with)) == with);

  std::string bad = text;
  bad.replace(bad.find(" 1", bad.find('\n')), 2, " 0.9");
  CHECK_THROWS_AS(attach_distance_distributions(mrf, bad), FormatError);
  CHECK_THROWS_AS(attach_distance_distributions(mrf, "1 7 1 0\n"), FormatError);
  CHECK_THROWS_AS(attach_distance_distributions(mrf, "# bins epad13\n"), FormatError);
  CHECK_THROWS_AS(attach_distance_distributions(mrf, "# bins nine\n"), FormatError);
  CHECK(epad_schema().bins() == 13);
  CHECK(two_bin_schema().bins() == 2);
}

TEST_CASE("mrf serialization") {
  std::mt19937_64 rng(11);
  auto mrf = attach_two_bin(small_mrf(rng), 5.0, -1.0);
  mrf.extra = Eigen::MatrixXd::Random(20, 2);
  const auto bytes = serialize_mrf(mrf);
  CHECK(load_mrf(bytes) == mrf);
  CHECK_THROWS_AS(load_mrf(bytes.substr(0, bytes.size() / 2)), FormatError);
  auto newer = bytes;
  newer[4] = 2;
  CHECK_THROWS_AS(load_mrf(newer), FormatError);
  auto flipped = bytes;
  flipped[100] ^= 0x40;
  CHECK_THROWS_AS(load_mrf(flipped), FormatError);

  const auto feats = mrf_features(mrf);
  CHECK(feats.length() == 20);
  CHECK(feats.extra.cols() == 2);
  CHECK(feats.profile.row(3).transpose() == mrf.nodes[3].marginal);
}

TEST_CASE("validation catches broken invariants") {
  std::mt19937_64 rng(12);
  auto mrf = small_mrf(rng);
  REQUIRE(!mrf.edges.empty());
  auto dup = mrf;
  dup.edges.push_back(dup.edges.front());
  CHECK_THROWS_AS(validate_mrf(dup), FormatError);
  auto close = mrf;
  close.edges.push_back({0, 2, 0.1, {}});
  CHECK_THROWS_AS(validate_mrf(close, 6), FormatError);
  auto neg = mrf;
  neg.edges.front().strength = -1.0;
  CHECK_THROWS_AS(validate_mrf(neg), FormatError);
  CHECK(parse_coupling_source("mi_power_sum") == CouplingSource::MiPowerSum);
  CHECK_THROWS_AS(parse_coupling_source("di"), ArgumentError);
}

TEST_CASE("binary frames may follow comment header lines") {
  std::mt19937_64 rng(13);
  const auto mrf = small_mrf(rng);
  const auto bytes = "# mrfalign 0.1.0 config=abc\n# second line\n" + serialize_mrf(mrf);
  CHECK(load_mrf(bytes) == mrf);
  CHECK_THROWS_AS(load_mrf("# only a header\n"), FormatError);
}
