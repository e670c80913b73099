#pragma once

#include "causalweights/core.hpp"

#include <cmath>

namespace causalweights {

namespace detail {

struct ArmStats {
  double weight_sum = 0.0;
  double weighted_mean = 0.0;  // Hajek: sum(w*y)/sum(w)
  Eigen::Index count = 0;
};

inline ArmStats arm_stats(const Eigen::VectorXd& y, const Eigen::VectorXi& z,
                          const Eigen::VectorXd& w, int arm) {
  ArmStats s;
  double wy = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] != arm) continue;
    ++s.count;
    s.weight_sum += w[i];
    wy += w[i] * y[i];
  }
  if (s.count == 0 || s.weight_sum <= 0.0)
    throw Error(Errc::ZeroWeightSum,
                std::string("arm ") + std::to_string(arm) + " has zero total weight");
  s.weighted_mean = wy / s.weight_sum;
  return s;
}

inline void check_weights(const Dataset& d, const WeightVector& w) {
  if (w.weights.size() != d.n())
    throw Error(Errc::LengthMismatch, "weight vector length != dataset size");
  if (!w.weights.allFinite() || (w.weights.array() < 0.0).any())
    throw Error(Errc::NonFiniteValue, "weights must be finite and nonnegative");
}

}  // namespace detail

// Hajek difference of weighted outcome means, treated minus control.
inline EffectEstimate weighted_effect(const Dataset& d, const WeightVector& w) {
  detail::check_weights(d, w);
  if (!d.outcome) throw Error(Errc::MissingOutcome, "dataset has no outcome column");
  const auto t = detail::arm_stats(*d.outcome, d.treatment, w.weights, 1);
  const auto c = detail::arm_stats(*d.outcome, d.treatment, w.weights, 0);
  EffectEstimate est;
  est.point = t.weighted_mean - c.weighted_mean;
  est.estimand = w.estimand;
  est.method = w.method;
  est.n_treated = t.count;
  est.n_control = c.count;
  return est;
}

// Linearization standard error of the Hajek ratio estimator. Per arm,
// Var = sum w_i^2 (y_i - mu)^2 / (sum w_i)^2 with mu the arm's weighted mean.
inline double effect_stderr(const Dataset& d, const WeightVector& w) {
  detail::check_weights(d, w);
  if (!d.outcome) throw Error(Errc::MissingOutcome, "dataset has no outcome column");
  const Eigen::VectorXd& y = *d.outcome;
  double var = 0.0;
  for (int arm : {1, 0}) {
    const auto s = detail::arm_stats(y, d.treatment, w.weights, arm);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      if (d.treatment[i] != arm) continue;
      const double r = y[i] - s.weighted_mean;
      acc += w.weights[i] * w.weights[i] * r * r;
    }
    var += acc / (s.weight_sum * s.weight_sum);
  }
  return std::sqrt(var);
}

// Kish effective sample size (sum w)^2 / sum w^2 over one arm.
inline double effective_sample_size(const WeightVector& w, const Eigen::VectorXi& treatment,
                                    int arm) {
  if (w.weights.size() != treatment.size())
    throw Error(Errc::LengthMismatch, "weight vector length != treatment length");
  double sum = 0.0, sumsq = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < treatment.size(); ++i) {
    if (treatment[i] != arm) continue;
    ++count;
    sum += w.weights[i];
    sumsq += w.weights[i] * w.weights[i];
  }
  if (count == 0 || sum <= 0.0 || sumsq <= 0.0)
    throw Error(Errc::ZeroWeightSum,
                std::string("arm ") + std::to_string(arm) + " has zero total weight");
  return sum * sum / sumsq;
}

inline double effective_sample_size(const WeightVector& w, const Dataset& d, int arm) {
  return effective_sample_size(w, d.treatment, arm);
}

}  // namespace causalweights
