#pragma once

#include "causalweights/core.hpp"

#include <algorithm>
#include <cmath>

namespace causalweights {

struct FitOptions {
  double grad_tol = 1e-8;              // 2-norm of the score vector
  int max_iter = 100;
  double separation_threshold = 30.0;  // |coefficient| cap during iteration
};

struct LogisticModel {
  Eigen::VectorXd coefficients;  // intercept first, then one slope per covariate
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = 0.0;
};

// Fitted propensities, strictly inside (0,1) after clipping.
struct PropensityVector {
  Eigen::VectorXd e;
};

namespace detail {

inline Eigen::MatrixXd design_matrix(const Dataset& d) {
  Eigen::MatrixXd x(d.n(), d.k() + 1);
  x.col(0).setOnes();
  x.rightCols(d.k()) = d.covariates;
  return x;
}

inline double log1pexp(double v) {
  // log(1 + exp(v)) without overflow
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}

}  // namespace detail

// Bernoulli log-likelihood of the treatment given design [1 | X] at beta.
inline double logistic_loglik(const Dataset& d, const Eigen::VectorXd& beta) {
  const Eigen::MatrixXd x = detail::design_matrix(d);
  if (beta.size() != x.cols())
    throw Error(Errc::DimensionMismatch, "coefficient length != k + 1");
  const Eigen::VectorXd eta = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    ll += d.treatment[i] * eta[i] - detail::log1pexp(eta[i]);
  return ll;
}

// Score vector d loglik / d beta = X' (z - p).
inline Eigen::VectorXd logistic_gradient(const Dataset& d, const Eigen::VectorXd& beta) {
  const Eigen::MatrixXd x = detail::design_matrix(d);
  if (beta.size() != x.cols())
    throw Error(Errc::DimensionMismatch, "coefficient length != k + 1");
  const Eigen::VectorXd eta = x * beta;
  Eigen::VectorXd resid(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i)
    resid[i] = static_cast<double>(d.treatment[i]) - 1.0 / (1.0 + std::exp(-eta[i]));
  return x.transpose() * resid;
}

// Maximum-likelihood logistic regression of treatment on [1 | X].
// Newton (IRLS) with step halving. Throws RANK_DEFICIENT when the design
// is collinear and SEPARATION_DETECTED when coefficients run away; a fit
// that merely hits max_iter is returned with converged = false.
inline LogisticModel fit_logistic(const Dataset& d, const FitOptions& opts = {}) {
  validate_dataset(d);
  const Eigen::MatrixXd x = detail::design_matrix(d);
  const Eigen::Index p = x.cols();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < p)
    throw Error(Errc::RankDeficient, "design matrix [1 | X] has rank " +
                                         std::to_string(qr.rank()) + " < " + std::to_string(p));

  const auto loglik_at = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = x * b;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < d.n(); ++i)
      ll += d.treatment[i] * eta[i] - detail::log1pexp(eta[i]);
    return ll;
  };
  const auto gradient_at = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = x * b;
    Eigen::VectorXd resid(d.n());
    for (Eigen::Index i = 0; i < d.n(); ++i)
      resid[i] = static_cast<double>(d.treatment[i]) - 1.0 / (1.0 + std::exp(-eta[i]));
    return Eigen::VectorXd(x.transpose() * resid);
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = loglik_at(beta);
  Eigen::VectorXd grad = gradient_at(beta);

  LogisticModel model;
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    // Hessian of -loglik: X' diag(p(1-p)) X
    const Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd wdiag(d.n());
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      const double pi = 1.0 / (1.0 + std::exp(-eta[i]));
      wdiag[i] = pi * (1.0 - pi);
    }
    Eigen::MatrixXd hess = x.transpose() * wdiag.asDiagonal() * x;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) {
      // quasi-complete separation flattens the Hessian; regularize the solve
      hess.diagonal().array() += 1e-10 * hess.trace() / static_cast<double>(p);
      step = hess.ldlt().solve(grad);
    }

    double scale = 1.0;
    Eigen::VectorXd cand;
    double cand_ll = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 40; ++h) {
      cand = beta + scale * step;
      cand_ll = loglik_at(cand);
      if (std::isfinite(cand_ll) && cand_ll >= ll) break;
      scale *= 0.5;
    }
    beta = cand;
    ll = cand_ll;
    grad = gradient_at(beta);
    model.iterations = iter;

    if (beta.cwiseAbs().maxCoeff() > opts.separation_threshold)
      throw Error(Errc::SeparationDetected,
                  "coefficient magnitude exceeded " + std::to_string(opts.separation_threshold) +
                      " at iteration " + std::to_string(iter));

    if (grad.norm() <= opts.grad_tol) {
      model.converged = true;
      break;
    }
  }
  model.coefficients = beta;
  model.final_gradient_norm = grad.norm();
  return model;
}

// e_i = inverse-logit(beta0 + X_i . beta), clipped into [eps, 1 - eps].
inline PropensityVector predict_propensity(const LogisticModel& m, const Dataset& d,
                                           double epsilon_clip = 1e-6) {
  if (m.coefficients.size() != d.k() + 1)
    throw Error(Errc::DimensionMismatch,
                "model has " + std::to_string(m.coefficients.size() - 1) + " slopes, dataset has " +
                    std::to_string(d.k()) + " covariates");
  const Eigen::VectorXd eta = detail::design_matrix(d) * m.coefficients;
  PropensityVector out;
  out.e.resize(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double e = 1.0 / (1.0 + std::exp(-eta[i]));
    out.e[i] = std::clamp(e, epsilon_clip, 1.0 - epsilon_clip);
  }
  return out;
}

// Model-based weights for the requested estimand.
//   ATE: 1/e treated, 1/(1-e) control     (inverse probability)
//   ATT: 1 treated, e/(1-e) control       (odds of treatment)
//   ATO: 1-e treated, e control           (overlap)
inline WeightVector model_weights(const PropensityVector& prop, const Eigen::VectorXi& treatment,
                                  Estimand estimand) {
  if (prop.e.size() != treatment.size())
    throw Error(Errc::DimensionMismatch, "propensity length != treatment length");
  if ((prop.e.array() <= 0.0).any() || (prop.e.array() >= 1.0).any())
    throw Error(Errc::NonFiniteValue, "propensities must lie strictly inside (0,1)");

  WeightVector w;
  w.estimand = estimand;
  w.weights.resize(treatment.size());
  for (Eigen::Index i = 0; i < treatment.size(); ++i) {
    const double e = prop.e[i];
    const bool treated = treatment[i] == 1;
    switch (estimand) {
      case Estimand::ATE:
        w.weights[i] = treated ? 1.0 / e : 1.0 / (1.0 - e);
        break;
      case Estimand::ATT:
        w.weights[i] = treated ? 1.0 : e / (1.0 - e);
        break;
      case Estimand::ATO:
        w.weights[i] = treated ? 1.0 - e : e;
        break;
      default:
        throw Error(Errc::UnknownEstimand, "unrecognized estimand tag");
    }
  }
  w.method = estimand == Estimand::ATO ? Method::Overlap : Method::IPW;
  return w;
}

inline WeightVector model_weights(const PropensityVector& prop, const Dataset& d,
                                  Estimand estimand) {
  return model_weights(prop, d.treatment, estimand);
}

}  // namespace causalweights
