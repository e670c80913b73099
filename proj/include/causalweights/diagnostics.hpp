#pragma once

#include "causalweights/core.hpp"
#include "causalweights/estimation.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace causalweights {

// PBR = 100 * (1 - mean|SMD after| / mean|SMD before|).
inline double percent_bias_reduction(double mean_abs_unweighted, double mean_abs_weighted) {
  if (!(mean_abs_unweighted > 0.0))
    throw Error(Errc::UndefinedPbr, "unweighted mean |SMD| is zero");
  return 100.0 * (1.0 - mean_abs_weighted / mean_abs_unweighted);
}

// Standardized mean differences before and after weighting. Both numerators
// share the unweighted-variance denominator sqrt((V_t + V_c)/2), so the
// pre/post columns are on a common scale. Pass w = nullptr for the
// unweighted baseline (weighted column then equals the unweighted one).
inline BalanceTable standardized_differences(const Dataset& d, const WeightVector* w = nullptr) {
  validate_dataset(d);
  WeightVector uniform;
  if (!w) {
    uniform.weights = Eigen::VectorXd::Ones(d.n());
    w = &uniform;
  }
  detail::check_weights(d, *w);

  BalanceTable table;
  double acc_u = 0.0, acc_w = 0.0;
  for (Eigen::Index j = 0; j < d.k(); ++j) {
    const Eigen::VectorXd col = d.covariates.col(j);
    BalanceRow row;
    row.name = d.covariate_names.empty() ? "x" + std::to_string(j + 1) : d.covariate_names[j];

    double mean_t = 0.0, mean_c = 0.0;
    Eigen::Index n_t = 0, n_c = 0;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      if (d.treatment[i] == 1) {
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
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      const double r = col[i] - (d.treatment[i] == 1 ? mean_t : mean_c);
      (d.treatment[i] == 1 ? ss_t : ss_c) += r * r;
    }
    const double var_t = n_t > 1 ? ss_t / static_cast<double>(n_t - 1) : 0.0;
    const double var_c = n_c > 1 ? ss_c / static_cast<double>(n_c - 1) : 0.0;
    const double denom = std::sqrt(0.5 * (var_t + var_c));

    if (denom > 0.0) {
      const auto wt = detail::arm_stats(col, d.treatment, w->weights, 1);
      const auto wc = detail::arm_stats(col, d.treatment, w->weights, 0);
      row.smd_unweighted = (mean_t - mean_c) / denom;
      row.smd_weighted = (wt.weighted_mean - wc.weighted_mean) / denom;
    } else {
      row.smd_unweighted = 0.0;
      row.smd_weighted = 0.0;
      row.zero_pooled_variance = true;
    }
    acc_u += std::abs(row.smd_unweighted);
    acc_w += std::abs(row.smd_weighted);
    table.rows.push_back(std::move(row));
  }

  const double kk = static_cast<double>(d.k());
  table.mean_abs_unweighted = d.k() > 0 ? acc_u / kk : 0.0;
  table.mean_abs_weighted = d.k() > 0 ? acc_w / kk : 0.0;
  table.pbr_percent = table.mean_abs_unweighted > 0.0
                          ? percent_bias_reduction(table.mean_abs_unweighted,
                                                   table.mean_abs_weighted)
                          : std::numeric_limits<double>::quiet_NaN();
  table.ess_treated = effective_sample_size(*w, d.treatment, 1);
  table.ess_control = effective_sample_size(*w, d.treatment, 0);
  return table;
}

struct BalanceReportEntry {
  Method method;
  Estimand estimand;
  BalanceTable table;
};

struct BalanceReport {
  BalanceTable baseline;  // uniform weights
  std::vector<BalanceReportEntry> entries;
};

inline BalanceReport balance_report(const Dataset& d, const std::vector<WeightVector>& sets) {
  if (sets.empty()) throw Error(Errc::EmptyInput, "no weight sets given");
  BalanceReport rep;
  rep.baseline = standardized_differences(d, nullptr);
  for (const auto& w : sets)
    rep.entries.push_back({w.method, w.estimand, standardized_differences(d, &w)});
  return rep;
}

}  // namespace causalweights
