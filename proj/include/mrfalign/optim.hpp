#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace mrfalign {

struct LbfgsConfig {
  std::size_t max_iter = 100;
  std::size_t memory = 8;
  double grad_tol = 1e-6;
  double value_tol = 1e-12;
  std::size_t max_backtracks = 40;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> values;          // start value, then one per accepted step
  std::vector<double> gradient_norms;  // aligned with values
};

// Value and gradient of the function to maximize.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

// Limited-memory BFGS ascent with Armijo backtracking. Trial points with a
// non-finite value are rejected and the step is halved; every accepted step
// increases the value.
LbfgsResult lbfgs_maximize(const Objective& fn, Eigen::VectorXd x0, const LbfgsConfig& cfg);

}  // namespace mrfalign
