#include "mrfalign/optim.hpp"

#include <cmath>
#include <deque>

namespace mrfalign {

LbfgsResult lbfgs_maximize(const Objective& fn, Eigen::VectorXd x0, const LbfgsConfig& cfg) {
  LbfgsResult res;
  res.x = std::move(x0);
  Eigen::VectorXd grad(res.x.size());
  res.value = fn(res.x, grad);
  res.values.push_back(res.value);
  res.gradient_norms.push_back(grad.norm());
  if (!std::isfinite(res.value)) return res;

  // Minimize -f internally.
  Eigen::VectorXd g = -grad;
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    if (g.norm() < cfg.grad_tol) {
      res.converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(q);
      q -= alpha[k] * y_hist[k];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(q);
      q += (alpha[k] - beta) * s_hist[k];
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      dir = -g;
      slope = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    double step = s_hist.empty() ? std::min(1.0, 1.0 / g.norm()) : 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new, grad_new(res.x.size());
    double value_new = 0.0;
    for (std::size_t bt = 0; bt < cfg.max_backtracks; ++bt) {
      x_new = res.x + step * dir;
      value_new = fn(x_new, grad_new);
      if (std::isfinite(value_new) && -value_new <= -res.value + 1e-4 * step * slope && value_new > res.value) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const Eigen::VectorXd g_new = -grad_new;
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > cfg.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double gain = value_new - res.value;
    res.x = x_new;
    res.value = value_new;
    g = g_new;
    res.iterations = it + 1;
    res.values.push_back(res.value);
    res.gradient_norms.push_back(g.norm());
    if (gain <= cfg.value_tol * std::max(1.0, std::abs(res.value))) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace mrfalign
