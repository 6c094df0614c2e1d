#include <cmath>
#include <random>

#include "cnf_oracles.hpp"
#include "doctest.h"
#include "mrfalign/cnf.hpp"
#include "mrfalign/error.hpp"
#include "mrfalign/optim.hpp"

using namespace mrfalign;
using namespace mrfalign::testing;
using doctest::Approx;

namespace {

// A model whose transitions into M score `strength` and all others 0.
CnfModel match_favoring(std::size_t F, double strength) {
  CnfModel model = CnfModel::zeros(F, 1);
  for (State u : kStates) {
    const auto t = transition_index(u, State::M);
    model.w[t](0, 0) = 40.0;
    model.lambda[t](0) = strength;
  }
  return model;
}

}  // namespace

TEST_CASE("lattice path counts follow the Delannoy numbers") {
  CHECK(enumerate_paths(1, 1).size() == 3);
  CHECK(enumerate_paths(2, 2).size() == 13);
  CHECK(enumerate_paths(3, 3).size() == 63);
  CHECK(enumerate_paths(2, 3).size() == 25);
  for (const auto& p : enumerate_paths(3, 2)) CHECK(is_valid_path(p));
  CHECK_THROWS_AS(enumerate_paths(8, 2), ArgumentError);
  CHECK_THROWS_AS(enumerate_paths(0, 2), ArgumentError);
}

TEST_CASE("path validation") {
  const auto p = path_from_states(2, 2, "MM");
  CHECK(p.steps[1] == AlignmentStep{2, 2, State::M});
  CHECK(path_states(path_from_states(2, 1, "TM")) == "TM");
  CHECK_THROWS_AS(path_from_states(2, 2, "M"), ArgumentError);
  CHECK_THROWS_AS(path_from_states(1, 1, "MM"), ArgumentError);
  AlignmentPath broken{2, 2, {{1, 1, State::M}, {1, 2, State::M}}};
  CHECK_FALSE(is_valid_path(broken));
  CHECK_THROWS_AS(parse_state('X'), FormatError);
}

TEST_CASE("transition score by hand") {
  CnfModel model = CnfModel::zeros(2, 2);
  std::vector<double> f{1.0, 0.5};
  CHECK(transition_score(model, f, State::M, State::M) == 0.0);

  CnfModel one = CnfModel::zeros(2, 1);
  one.lambda[transition_index(State::M, State::It)](0) = 1.0;
  CHECK(transition_score(one, f, State::M, State::It) == Approx(0.5));

  const auto t = transition_index(State::Is, State::M);
  model.w[t] << 1.0, -2.0, 0.5, 3.0;
  model.lambda[t] << 2.0, -1.5;
  // Unit 1: w.f = 1 - 1 = 0; unit 2: 0.5 + 1.5 = 2.
  const double expected = 2.0 * 0.5 - 1.5 / (1.0 + std::exp(-2.0));
  CHECK(transition_score(model, f, State::Is, State::M) == Approx(expected).epsilon(1e-15));
  CHECK_THROWS_AS(transition_score(model, std::vector<double>{1.0}, State::M, State::M), ArgumentError);
}

TEST_CASE("zero model on a 1x1 lattice") {
  const FeatureTable feat(1, 1, 3);
  const CnfModel model = CnfModel::zeros(3, 4);
  CHECK(log_partition(model, feat) == Approx(std::log(3.0)).epsilon(1e-15));
  const auto scores = score_lattice(model, feat);
  CHECK(backward(scores).logZ == Approx(std::log(3.0)).epsilon(1e-15));
  const auto bwd = backward(scores);
  for (State u : kStates) CHECK(bwd(1, 1, u) == 0.0);
  CHECK(marginals(model, feat)(0, 0) == Approx(1.0 / 3.0).epsilon(1e-15));
  for (const auto& p : enumerate_paths(1, 1)) CHECK(loglik(model, feat, p) == Approx(-std::log(3.0)).epsilon(1e-15));
  const ReferenceAlignment ref{path_from_states(1, 1, "M"), {1.0}};
  CHECK(expected_tmscore(model, feat, ref) == Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(score_lattice(model, FeatureTable(1, 0, 3)), ArgumentError);
}

TEST_CASE("partition function matches enumeration") {
  std::mt19937_64 rng(101);
  for (std::size_t m = 1; m <= 3; ++m) {
    for (std::size_t n = 1; n <= 3; ++n) {
      const auto feat = random_feature_table(rng, m, n, 5);
      const auto model = random_model(rng, 5, 3);
      const auto scores = score_lattice(model, feat);
      const double fz = forward(scores).logZ;
      CHECK(std::abs(fz - brute_log_partition(model, feat)) < 1e-10);
      CHECK(std::abs(fz - backward(scores).logZ) < 1e-9);
      double total = 0.0;
      for (const auto& p : enumerate_paths(m, n)) {
        CHECK(path_score(scores, p) == Approx(brute_path_score(model, feat, p)).epsilon(1e-12));
        total += std::exp(loglik(model, feat, p));
      }
      CHECK(std::abs(total - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("forward-backward cut identity") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(trial % 4), n = 3 + static_cast<std::size_t>(trial % 3);
    const auto scores = score_lattice(random_model(rng, 4, 3), random_feature_table(rng, m, n, 4));
    const auto fwd = forward(scores);
    const auto bwd = backward(scores);
    // Every path consumes template residue x exactly once, by an M or It step.
    for (std::size_t x = 1; x <= m; ++x) {
      std::vector<double> terms;
      for (std::size_t y = 0; y <= n; ++y) {
        for (State v : {State::M, State::It}) {
          if (v == State::M && y == 0) continue;
          terms.push_back(fwd(x, y, v) + bwd(x, y, v));
        }
      }
      CHECK(std::abs(log_sum_exp(terms) - fwd.logZ) < 1e-9);
    }
  }
}

TEST_CASE("marginals match enumeration and are bounded") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t m = 1 + static_cast<std::size_t>(trial % 3), n = 1 + static_cast<std::size_t>((trial / 3) % 3);
    const auto feat = random_feature_table(rng, m, n, 4);
    const auto model = random_model(rng, 4, 2, 1.0);
    const auto mag = marginals(model, feat);
    CHECK((mag - brute_marginals(model, feat)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(mag.minCoeff() >= 0.0);
    CHECK(mag.maxCoeff() <= 1.0);
    CHECK(mag.sum() <= static_cast<double>(std::min(m, n)) + 1e-9);
  }
}

TEST_CASE("match-favoring model concentrates on the diagonal") {
  for (std::size_t n : {2u, 4u, 6u}) {
    const FeatureTable feat = [&] {
      FeatureTable t(n, n, 2);
      for (std::size_t k = 0; k < t.values.size(); k += 2) t.values[k] = 1.0;
      return t;
    }();
    const auto model = match_favoring(2, 30.0);
    const auto mag = marginals(model, feat);
    for (std::size_t x = 0; x < n; ++x) CHECK(mag(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(x)) > 1.0 - 1e-9);
    const auto path = viterbi_decode(model, feat);
    CHECK(path_states(path) == std::string(n, 'M'));
  }
}

TEST_CASE("shift of scores into template-consuming states cancels") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(trial % 2), n = 3;
    const auto feat = random_feature_table(rng, m, n, 4);
    const auto model = random_model(rng, 4, 3);
    const auto scores = score_lattice(model, feat);
    // #M + #It = m on every path, so this shift adds c * m to every path score.
    auto shifted = scores;
    for (std::size_t x = 0; x <= m; ++x) {
      for (std::size_t y = 0; y <= n; ++y) {
        for (State u : kStates) {
          shifted(x, y, u, State::M) += 0.7;
          shifted(x, y, u, State::It) += 0.7;
        }
      }
    }
    const auto ref = random_reference(rng, m, n);
    CHECK(path_score(shifted, ref.path) - forward(shifted).logZ ==
          Approx(path_score(scores, ref.path) - forward(scores).logZ).epsilon(1e-12));

    // Directional derivative along the shift is zero for both objectives.
    const auto gl = loglik_score_gradient(scores, ref.path);
    const auto gq = expected_tm_score_gradient(scores, ref);
    double dl = 0.0, dq = 0.0;
    for (std::size_t x = 0; x <= m; ++x) {
      for (std::size_t y = 0; y <= n; ++y) {
        for (State u : kStates) {
          for (State v : {State::M, State::It}) {
            dl += gl(x, y, u, v);
            dq += gq(x, y, u, v);
          }
        }
      }
    }
    CHECK(std::abs(dl) < 1e-8);
    CHECK(std::abs(dq) < 1e-8);
  }
}

TEST_CASE("loglik gradient matches finite differences") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(trial % 2), n = 2 + static_cast<std::size_t>(trial / 3);
    const auto feat = random_feature_table(rng, m, n, 5);
    const auto model = random_model(rng, 5, 4);
    const auto ref = random_reference(rng, m, n);
    const auto analytic = grad_loglik(model, feat, ref.path);
    const auto numeric = finite_difference(model, [&](const CnfModel& c) { return loglik(c, feat, ref.path); });
    CHECK(gradient_mismatch(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("expected TM-score gradient matches finite differences") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t m = 3, n = 2 + static_cast<std::size_t>(trial % 3);
    const auto feat = random_feature_table(rng, m, n, 5);
    const auto model = random_model(rng, 5, 4);
    const auto ref = random_reference(rng, m, n);
    const auto analytic = grad_expected_tmscore(model, feat, ref);
    const auto numeric = finite_difference(model, [&](const CnfModel& c) { return expected_tmscore(c, feat, ref); });
    CHECK(gradient_mismatch(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("zero feature column gives zero weight gradient") {
  std::mt19937_64 rng(41);
  auto feat = random_feature_table(rng, 3, 3, 4);
  for (std::size_t k = 2; k < feat.values.size(); k += 4) feat.values[k] = 0.0;
  const auto model = random_model(rng, 4, 3);
  const auto ref = random_reference(rng, 3, 3);
  const auto g = grad_expected_tmscore(model, feat, ref);
  const auto gl = grad_loglik(model, feat, ref.path);
  const auto H = static_cast<Eigen::Index>(model.hidden);
  for (std::size_t t = 0; t < kNumTransitions; ++t) {
    const Eigen::Index base = static_cast<Eigen::Index>(t) * H * 5;
    for (Eigen::Index j = 0; j < H; ++j) {
      CHECK(g(base + 2 * H + j) == 0.0);
      CHECK(gl(base + 2 * H + j) == 0.0);
    }
  }
}

TEST_CASE("expected TM-score limits") {
  const FeatureTable feat(2, 3, 2);
  const CnfModel zero = CnfModel::zeros(2, 2);
  ReferenceAlignment none{path_from_states(2, 3, "MMS"), {0.0, 0.0, 0.0}};
  CHECK(expected_tmscore(zero, feat, none) == 0.0);
  ReferenceAlignment bad{path_from_states(2, 3, "MMS"), {0.5, 0.5, 0.5}};
  CHECK_THROWS_AS(expected_tmscore(zero, feat, bad), ArgumentError);

  FeatureTable sq(4, 4, 2);
  for (std::size_t k = 0; k < sq.values.size(); k += 2) sq.values[k] = 1.0;
  ReferenceAlignment diag{path_from_states(4, 4, "MMMM"), {1.0, 1.0, 1.0, 1.0}};
  double previous = 0.0;
  for (double strength : {1.0, 3.0, 10.0, 30.0}) {
    const double q = expected_tmscore(match_favoring(2, strength), sq, diag);
    CHECK(q > previous);
    CHECK(q <= 1.0);
    previous = q;
  }
  CHECK(previous > 1.0 - 1e-9);
}

TEST_CASE("tm weights") {
  CHECK(tm_d0(10) == 0.5);
  CHECK(tm_d0(100) == Approx(1.24 * std::cbrt(85.0) - 1.8));
  CHECK(tm_weight(0.0, 100) == 1.0);
  CHECK(tm_weight(tm_d0(100), 100) == Approx(0.5));
  CHECK(tm_weight(1e6, 100) < 1e-9);
  CHECK_THROWS_AS(tm_weight(-1.0, 100), ArgumentError);
  const auto ref = make_reference(path_from_states(2, 3, "MSM"), std::vector<double>{0.0, 2.0}, 3);
  CHECK(ref.weights == std::vector<double>{1.0, 0.0, 1.0 / (1.0 + 16.0)});
  CHECK_THROWS_AS(make_reference(path_from_states(2, 3, "MSM"), std::vector<double>{0.0}, 3), ArgumentError);
}

TEST_CASE("viterbi and MEA match enumeration") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t m = 1 + static_cast<std::size_t>(trial % 3), n = 1 + static_cast<std::size_t>(trial / 4);
    const auto feat = random_feature_table(rng, m, n, 4);
    const auto model = random_model(rng, 4, 3, 1.0);
    const auto scores = score_lattice(model, feat);
    const auto mag = marginals(model, feat);
    double best = -INFINITY, best_mea = -INFINITY;
    for (const auto& p : enumerate_paths(m, n)) {
      best = std::max(best, path_score(scores, p));
      double acc = 0.0;
      for (const auto& s : p.steps) {
        if (s.state == State::M) acc += mag(static_cast<Eigen::Index>(s.x - 1), static_cast<Eigen::Index>(s.y - 1));
      }
      best_mea = std::max(best_mea, acc);
    }
    CHECK(path_score(scores, viterbi_decode(model, feat)) == Approx(best).epsilon(1e-12));
    const auto mea = mea_decode(model, feat);
    double got = 0.0;
    for (const auto& s : mea.steps) {
      if (s.state == State::M) got += mag(static_cast<Eigen::Index>(s.x - 1), static_cast<Eigen::Index>(s.y - 1));
    }
    CHECK(got == Approx(best_mea).epsilon(1e-12));
  }
}

TEST_CASE("decoding tie-breaks are canonical") {
  const FeatureTable feat(3, 2, 2);
  const CnfModel zero = CnfModel::zeros(2, 2);
  // Every path scores 0. Tracing back from (3, 2) prefers M at each cell, so the
  // path ends in matches and the leftover template residue goes first.
  const auto a = viterbi_decode(zero, feat);
  CHECK(a == viterbi_decode(zero, feat));
  CHECK(path_states(a) == "TMM");
  Eigen::MatrixXd mag = Eigen::MatrixXd::Zero(3, 3);
  for (int i = 0; i < 3; ++i) mag(i, i) = 0.9;
  CHECK(path_states(mea_decode(mag)) == "MMM");
  CHECK(mea_decode(Eigen::MatrixXd::Constant(2, 3, 1e-3)).matches() == 2);
}

TEST_CASE("log-space computations stay finite for large weights") {
  std::mt19937_64 rng(47);
  auto feat = random_feature_table(rng, 6, 5, 4, 3.0);
  auto model = random_model(rng, 4, 3, 1.0);
  Eigen::VectorXd theta = model.flatten();
  theta = theta.cwiseSign() * 1000.0;
  model.assign(theta);
  const auto scores = score_lattice(model, feat);
  CHECK(std::isfinite(forward(scores).logZ));
  CHECK(std::abs(forward(scores).logZ - backward(scores).logZ) < 1e-9 * std::abs(forward(scores).logZ));
  const auto mag = marginals(model, feat);
  CHECK(mag.allFinite());
  CHECK(grad_loglik(model, feat, viterbi_decode(model, feat)).allFinite());
}

TEST_CASE("built-in profile features") {
  std::mt19937_64 rng(53);
  const auto T = random_sequence_features(rng, 5, 2);
  const auto S = random_sequence_features(rng, 4, 2);
  const auto table = ProfileFeatures::build(T, S);
  CHECK(table.F == ProfileFeatures::dimension(2));
  CHECK(ProfileFeatures::schema(2) != ProfileFeatures::schema(0));
  const double bound = ProfileFeatures::bound(T, S);
  for (std::size_t x = 0; x <= 5; ++x) {
    for (std::size_t y = 0; y <= 4; ++y) {
      for (State v : kStates) {
        if (x < step_x(v) || y < step_y(v) || x + y == 0) continue;
        const auto f = table.at(x, y, v);
        std::vector<double> direct(table.F);
        ProfileFeatures::vertex(T, S, x, y, v, direct);
        for (std::size_t k = 0; k < table.F; ++k) {
          CHECK(std::abs(f[k]) <= bound);
          CHECK(f[k] == Approx(direct[k]).epsilon(1e-14));
        }
        CHECK(f[0] == 1.0);
        if (v == State::It) {
          CHECK(f[4] == 0.0);
          CHECK(f[6] == 0.0);
          CHECK(f[ProfileFeatures::kBase + 2] == 0.0);
          CHECK(f[ProfileFeatures::kBase] == T.extra(static_cast<Eigen::Index>(x - 1), 0));
        }
        if (v == State::Is) {
          CHECK(f[3] == 0.0);
          CHECK(f[1] == 0.0);
          CHECK(f[ProfileFeatures::kBase + 1] == 0.0);
        }
      }
    }
  }
  // Similarity at (1, 1) and the terminal flag.
  double dot = 0.0;
  for (int a = 0; a < 20; ++a) dot += T.profile(0, a) * S.profile(0, a);
  CHECK(table.at(1, 1, State::M)[1] == Approx(std::log(20.0 * dot + 0.05)));
  CHECK(table.at(1, 1, State::M)[7] == 1.0);
  CHECK(table.at(3, 2, State::M)[7] == 0.0);
  CHECK(table.at(3, 4, State::Is)[7] == 1.0);
}

TEST_CASE("residue feature files") {
  const auto m = parse_residue_features("# columns ss acc\n0.1 0.2\n0.3 0.4\n", 2);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 2);
  CHECK(m(1, 0) == 0.3);
  CHECK_THROWS_AS(parse_residue_features("0.1 0.2\n", 1), FormatError);
  CHECK_THROWS_AS(parse_residue_features("# columns a\n0.1\n", 2), FormatError);
  CHECK_THROWS_AS(parse_residue_features("# columns a b\n0.1\n", 1), FormatError);
}

TEST_CASE("model file round trip") {
  std::mt19937_64 rng(59);
  auto model = random_model(rng, 6, 4);
  model.schema = ProfileFeatures::schema(0);
  model.l2 = 0.25;
  const auto bytes = serialize_model(model);
  CHECK(load_model(bytes) == model);
  auto corrupt = bytes;
  corrupt[60] ^= 0x10;
  CHECK_THROWS_AS(load_model(corrupt), FormatError);
  CHECK_THROWS_AS(load_model(bytes.substr(0, 40)), FormatError);
}

TEST_CASE("lbfgs maximizes a concave quadratic") {
  Eigen::MatrixXd A(3, 3);
  A << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  const Eigen::Vector3d b(1, -2, 0.5);
  auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = b - A * x;
    return b.dot(x) - 0.5 * x.dot(A * x);
  };
  LbfgsConfig cfg;
  cfg.grad_tol = 1e-10;
  const auto res = lbfgs_maximize(fn, Eigen::Vector3d::Zero(), cfg);
  CHECK((res.x - A.ldlt().solve(b)).norm() < 1e-8);
  for (std::size_t k = 1; k < res.values.size(); ++k) CHECK(res.values[k] > res.values[k - 1]);
}

TEST_CASE("training improves, is deterministic, and respects the l2 limit") {
  std::mt19937_64 rng(61);
  std::vector<TrainingPair> pairs;
  for (int k = 0; k < 2; ++k) {
    TrainingPair p{random_feature_table(rng, 4, 4, 4), {}};
    p.ref = ReferenceAlignment{path_from_states(4, 4, "MMMM"), {1.0, 0.8, 0.9, 1.0}};
    pairs.push_back(p);
  }
  TrainConfig cfg;
  cfg.hidden = 3;
  cfg.max_iter = 40;
  cfg.l2 = 1e-3;
  cfg.seed = 7;
  for (auto objective : {TrainObjective::MaxLikelihood, TrainObjective::ExpectedTm}) {
    cfg.objective = objective;
    const auto res = train(pairs, cfg);
    REQUIRE(res.final_objectives.size() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(res.final_objectives[r] > res.initial_objectives[r]);
      CHECK(res.objective >= res.initial_objectives[r]);
      for (std::size_t k = 1; k < res.traces[r].size(); ++k) CHECK(res.traces[r][k] > res.traces[r][k - 1]);
      CHECK(res.gradient_norms[r].back() < res.gradient_norms[r].front());
    }
    CHECK(res.model == train(pairs, cfg).model);
    CHECK(serialize_model(res.model) == serialize_model(train(pairs, cfg).model));
  }

  cfg.objective = TrainObjective::MaxLikelihood;
  cfg.l2 = 1e6;
  const auto heavy = train(pairs, cfg);
  CHECK(heavy.model.flatten().cwiseAbs().maxCoeff() < 1e-5);
  const double zero_value =
      training_objective(CnfModel::zeros(4, 3), pairs, TrainObjective::MaxLikelihood, 0.0, nullptr);
  CHECK(training_objective(heavy.model, pairs, TrainObjective::MaxLikelihood, 0.0, nullptr) ==
        Approx(zero_value).epsilon(1e-4));
  CHECK_THROWS_AS(train({}, cfg), ArgumentError);
}

TEST_CASE("training objective gradient is consistent with threads") {
  std::mt19937_64 rng(67);
  std::vector<TrainingPair> pairs;
  for (int k = 0; k < 5; ++k) {
    const auto feat = random_feature_table(rng, 3, 4, 3);
    pairs.push_back({feat, random_reference(rng, 3, 4)});
  }
  const auto model = random_model(rng, 3, 2);
  Eigen::VectorXd g1, g4;
  const double v1 = training_objective(model, pairs, TrainObjective::ExpectedTm, 0.1, &g1, 1);
  const double v4 = training_objective(model, pairs, TrainObjective::ExpectedTm, 0.1, &g4, 4);
  CHECK(v1 == v4);
  CHECK(g1 == g4);
  const auto numeric = finite_difference(model, [&](const CnfModel& c) {
    return training_objective(c, pairs, TrainObjective::ExpectedTm, 0.1, nullptr);
  });
  CHECK(gradient_mismatch(g1, numeric) < 1e-4);
}
