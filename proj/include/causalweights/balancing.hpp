#pragma once

#include "causalweights/core.hpp"
#include "causalweights/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

namespace causalweights {

struct BalancingOptions {
  double tol = 1e-10;    // on the projected-gradient (KKT) residual
  int max_iter = 10000;
  bool record_trace = false;
};

// min_w  || target - C' w ||^2 + lambda ||w||^2   s.t.  w >= 0, sum w = 1
// with C the standardized control covariate matrix (one row per control).
struct BalancingProblem {
  Eigen::VectorXd target;              // treated covariate means, standardized scale
  Eigen::MatrixXd control_covariates;  // m x k, standardized scale
  double lambda = 1e-4;
  double tol = 1e-10;
  int max_iter = 10000;
  bool record_trace = false;

  // provenance of the standardization (empty for hand-built problems)
  std::vector<Eigen::Index> control_rows;  // dataset row of each control
  std::vector<std::string> kept_names;
  std::vector<std::string> dropped_names;  // zero-variance columns
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
};

struct TracePoint {
  int iteration = 0;
  double objective = 0.0;
  double kkt_residual = 0.0;
};

struct BalancingSolution {
  Eigen::VectorXd control_weights;  // length m, on the simplex
  double objective = 0.0;           // imbalance_norm^2 + lambda * sum w^2
  double imbalance_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  double kkt_residual = 0.0;
  std::vector<TracePoint> trace;
};

// Euclidean projection onto the probability simplex (sort-based).
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index m = v.size();
  std::vector<double> u(v.data(), v.data() + m);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    css += u[j];
    const double cand = (css - 1.0) / static_cast<double>(j + 1);
    if (u[j] - cand > 0.0) theta = cand;
  }
  return (v.array() - theta).cwiseMax(0.0);
}

namespace detail {

inline double pooled_sd(const Eigen::VectorXd& col, const Eigen::VectorXi& z) {
  double mean_t = 0.0, mean_c = 0.0;
  Eigen::Index n_t = 0, n_c = 0;
  for (Eigen::Index i = 0; i < col.size(); ++i) {
    if (z[i] == 1) {
      mean_t += col[i];
      ++n_t;
    } else {
      mean_c += col[i];
      ++n_c;
    }
  }
  mean_t /= static_cast<double>(n_t);
  mean_c /= static_cast<double>(n_c);
  double ss_t = 0.0, ss_c = 0.0;
  for (Eigen::Index i = 0; i < col.size(); ++i) {
    const double r = col[i] - (z[i] == 1 ? mean_t : mean_c);
    (z[i] == 1 ? ss_t : ss_c) += r * r;
  }
  const double var_t = n_t > 1 ? ss_t / static_cast<double>(n_t - 1) : 0.0;
  const double var_c = n_c > 1 ? ss_c / static_cast<double>(n_c - 1) : 0.0;
  return std::sqrt(0.5 * (var_t + var_c));
}

// Largest eigenvalue of C'C by power iteration (k x k, deterministic start).
inline double spectral_norm_sq(const Eigen::MatrixXd& c) {
  const Eigen::Index k = c.cols();
  if (k == 0 || c.rows() == 0) return 0.0;
  const Eigen::MatrixXd g = c.transpose() * c;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(k).normalized();
  double lam = 0.0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd u = g * v;
    const double nv = u.norm();
    if (nv <= 0.0) return 0.0;
    u /= nv;
    const double lam_new = u.dot(g * u);
    if (std::abs(lam_new - lam) <= 1e-13 * std::max(1.0, lam_new)) {
      lam = lam_new;
      break;
    }
    lam = lam_new;
    v = u;
  }
  return lam;
}

struct SimplexQp {
  const Eigen::MatrixXd& c;  // m x k
  const Eigen::VectorXd& t;  // k
  double lambda;

  double objective(const Eigen::VectorXd& w) const {
    return (c.transpose() * w - t).squaredNorm() + lambda * w.squaredNorm();
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    return 2.0 * (c * (c.transpose() * w - t) + lambda * w);
  }
  double kkt_residual(const Eigen::VectorXd& w, double step) const {
    return (w - project_to_simplex(w - step * gradient(w))).norm() / step;
  }
};

// Exact solve of the equality-constrained QP restricted to a support set,
// shrinking the support while any weight comes out negative. Uses the
// Woodbury identity so the cost is O(|S| k^2) per pass. lambda must be > 0.
inline bool active_set_solve(const SimplexQp& qp, std::vector<Eigen::Index> support,
                             Eigen::VectorXd& w_out) {
  const Eigen::Index k = qp.c.cols();
  while (!support.empty()) {
    const Eigen::Index p = static_cast<Eigen::Index>(support.size());
    Eigen::MatrixXd cs(p, k);
    for (Eigen::Index r = 0; r < p; ++r) cs.row(r) = qp.c.row(support[r]);

    Eigen::LLT<Eigen::MatrixXd> mllt;
    if (k > 0) {
      Eigen::MatrixXd m = qp.lambda * Eigen::MatrixXd::Identity(k, k) + cs.transpose() * cs;
      mllt.compute(m);
      if (mllt.info() != Eigen::Success) return false;
    }
    const auto ainv = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
      if (k == 0) return u / qp.lambda;
      return (u - cs * mllt.solve(cs.transpose() * u)) / qp.lambda;
    };

    const Eigen::VectorXd a = ainv(cs * qp.t);
    const Eigen::VectorXd b = ainv(Eigen::VectorXd::Ones(p));
    const double bsum = b.sum();
    if (!(bsum > 0.0)) return false;
    const double nu = (1.0 - a.sum()) / bsum;
    Eigen::VectorXd ws = a + nu * b;

    if (ws.minCoeff() >= -1e-13) {
      w_out.setZero(qp.c.rows());
      for (Eigen::Index r = 0; r < p; ++r) w_out[support[r]] = std::max(ws[r], 0.0);
      return true;
    }
    std::vector<Eigen::Index> next;
    next.reserve(support.size());
    for (Eigen::Index r = 0; r < p; ++r)
      if (ws[r] > 0.0) next.push_back(support[r]);
    if (next.size() == support.size()) return false;  // no progress
    support.swap(next);
  }
  return false;
}

}  // namespace detail

// Standardize the covariates by the pooled unweighted SD (the SMD
// denominator), drop zero-variance columns, and collect the treated means
// as the balance target.
inline BalancingProblem build_balancing_problem(const Dataset& d, double lambda,
                                                const BalancingOptions& opts = {}) {
  validate_dataset(d);
  if (lambda < 0.0) throw Error(Errc::InvalidArgument, "lambda must be >= 0");

  const Eigen::Index n = d.n(), k = d.k();
  BalancingProblem p;
  p.lambda = lambda;
  p.tol = opts.tol;
  p.max_iter = opts.max_iter;
  p.record_trace = opts.record_trace;

  std::vector<Eigen::Index> kept;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double sd = detail::pooled_sd(d.covariates.col(j), d.treatment);
    const std::string name =
        d.covariate_names.empty() ? "x" + std::to_string(j + 1) : d.covariate_names[j];
    if (sd > 0.0) {
      kept.push_back(j);
      p.kept_names.push_back(name);
    } else {
      p.dropped_names.push_back(name);
    }
  }
  const Eigen::Index kk = static_cast<Eigen::Index>(kept.size());
  p.center.resize(kk);
  p.scale.resize(kk);
  for (Eigen::Index jj = 0; jj < kk; ++jj) {
    p.center[jj] = d.covariates.col(kept[jj]).mean();
    p.scale[jj] = detail::pooled_sd(d.covariates.col(kept[jj]), d.treatment);
  }

  for (Eigen::Index i = 0; i < n; ++i)
    if (d.treatment[i] == 0) p.control_rows.push_back(i);
  const Eigen::Index m = static_cast<Eigen::Index>(p.control_rows.size());

  p.control_covariates.resize(m, kk);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index jj = 0; jj < kk; ++jj)
      p.control_covariates(r, jj) =
          (d.covariates(p.control_rows[r], kept[jj]) - p.center[jj]) / p.scale[jj];

  p.target.resize(kk);
  const Eigen::Index n_t = d.n_treated();
  for (Eigen::Index jj = 0; jj < kk; ++jj) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (d.treatment[i] == 1) s += (d.covariates(i, kept[jj]) - p.center[jj]) / p.scale[jj];
    p.target[jj] = s / static_cast<double>(n_t);
  }
  return p;
}

// Monotone accelerated projected gradient (MFISTA) with step 1/L, where L is
// the gradient Lipschitz constant 2(||C||^2 + lambda) bounded by power
// iteration. For lambda > 0 the iterate's support is periodically handed to
// an exact active-set solve; a candidate is accepted only when its full KKT
// residual passes the tolerance, which certifies the unique minimizer.
inline BalancingSolution solve_balancing_weights(const BalancingProblem& p) {
  const Eigen::Index m = p.control_covariates.rows();
  if (m < 1) throw Error(Errc::EmptyInput, "balancing problem has no control units");
  if (p.target.size() != p.control_covariates.cols())
    throw Error(Errc::DimensionMismatch, "target length != covariate columns");

  BalancingSolution sol;
  const detail::SimplexQp qp{p.control_covariates, p.target, p.lambda};

  if (m == 1) {
    sol.control_weights = Eigen::VectorXd::Ones(1);
    sol.imbalance_norm = (p.control_covariates.transpose() * sol.control_weights - p.target).norm();
    sol.objective = qp.objective(sol.control_weights);
    sol.converged = true;
    return sol;
  }

  const double lip = 2.0 * (detail::spectral_norm_sq(p.control_covariates) * 1.01 + p.lambda);
  const double step = lip > 0.0 ? 1.0 / lip : 1.0;

  Eigen::VectorXd x = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  Eigen::VectorXd x_prev = x, y = x;
  double fx = qp.objective(x);
  double t_mom = 1.0;

  const auto finish = [&](int iters, bool conv) {
    sol.control_weights = x;
    sol.objective = fx;
    sol.imbalance_norm = (p.control_covariates.transpose() * x - p.target).norm();
    sol.iterations = iters;
    sol.converged = conv;
    sol.kkt_residual = qp.kkt_residual(x, step);
    return sol;
  };

  const auto try_polish = [&]() -> bool {
    if (p.lambda <= 0.0) return false;
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < m; ++i)
      if (x[i] > 0.0) support.push_back(i);
    Eigen::VectorXd cand;
    if (!detail::active_set_solve(qp, std::move(support), cand)) return false;
    const double fc = qp.objective(cand);
    if (qp.kkt_residual(cand, step) <= p.tol) {
      x = cand;
      fx = fc;
      return true;
    }
    if (fc < fx) {  // not certified but better: adopt and restart momentum
      x = x_prev = y = cand;
      fx = fc;
      t_mom = 1.0;
    }
    return false;
  };

  double kkt = qp.kkt_residual(x, step);
  if (p.record_trace) sol.trace.push_back({0, fx, kkt});
  if (kkt <= p.tol) return finish(0, true);

  for (int iter = 1; iter <= p.max_iter; ++iter) {
    const Eigen::VectorXd z = project_to_simplex(y - step * qp.gradient(y));
    const double fz = qp.objective(z);
    const Eigen::VectorXd x_new = fz <= fx ? z : x;
    const double fx_new = std::min(fz, fx);

    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom));
    y = x_new + (t_mom / t_next) * (z - x_new) + ((t_mom - 1.0) / t_next) * (x_new - x);
    x_prev = x;
    x = x_new;
    fx = fx_new;
    t_mom = t_next;

    kkt = qp.kkt_residual(x, step);
    if (p.record_trace) sol.trace.push_back({iter, fx, kkt});
    if (kkt <= p.tol) return finish(iter, true);
    if (p.lambda > 0.0 && iter % 50 == 10 && try_polish()) return finish(iter, true);
  }
  if (try_polish()) return finish(p.max_iter, true);
  return finish(p.max_iter, false);  // best iterate, converged = false
}

struct AttBalancingResult {
  WeightVector weights;
  BalancingProblem problem;
  BalancingSolution solution;
};

// ATT balancing weights over the whole dataset: uniform 1/n_treated on the
// treated arm, optimized simplex weights on the controls.
inline AttBalancingResult att_balancing_weights_detailed(const Dataset& d, double lambda,
                                                         const BalancingOptions& opts = {}) {
  AttBalancingResult out;
  out.problem = build_balancing_problem(d, lambda, opts);
  out.solution = solve_balancing_weights(out.problem);

  WeightVector w;
  w.estimand = Estimand::ATT;
  w.method = Method::Balancing;
  w.converged = out.solution.converged;
  w.weights.setZero(d.n());
  const double wt = 1.0 / static_cast<double>(d.n_treated());
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.treatment[i] == 1) w.weights[i] = wt;
  for (std::size_t r = 0; r < out.problem.control_rows.size(); ++r)
    w.weights[out.problem.control_rows[r]] = out.solution.control_weights[r];

  std::ostringstream rep;
  rep << "iterations=" << out.solution.iterations << " kkt=" << out.solution.kkt_residual
      << " imbalance=" << out.solution.imbalance_norm;
  if (!out.problem.dropped_names.empty()) {
    rep << " dropped_zero_variance=";
    for (std::size_t j = 0; j < out.problem.dropped_names.size(); ++j)
      rep << (j ? "," : "") << out.problem.dropped_names[j];
  }
  w.solver_report = rep.str();
  out.weights = std::move(w);
  return out;
}

inline WeightVector att_balancing_weights(const Dataset& d, double lambda,
                                          const BalancingOptions& opts = {}) {
  return att_balancing_weights_detailed(d, lambda, opts).weights;
}

// L2 norm of the weighted difference in covariate means on the pooled-SD
// standardized scale (Hajek means per arm). Zero-variance columns are
// skipped, matching build_balancing_problem.
inline double imbalance_norm(const Dataset& d, const WeightVector& w) {
  validate_dataset(d);
  detail::check_weights(d, w);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < d.k(); ++j) {
    const double sd = detail::pooled_sd(d.covariates.col(j), d.treatment);
    if (sd <= 0.0) continue;
    const auto t = detail::arm_stats(d.covariates.col(j), d.treatment, w.weights, 1);
    const auto c = detail::arm_stats(d.covariates.col(j), d.treatment, w.weights, 0);
    const double diff = (t.weighted_mean - c.weighted_mean) / sd;
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace causalweights
