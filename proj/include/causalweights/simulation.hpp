#pragma once

#include "causalweights/balancing.hpp"
#include "causalweights/core.hpp"
#include "causalweights/estimation.hpp"
#include "causalweights/propensity.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace causalweights {

enum class Dgp { Dgp1, Dgp2, Dgp3A, Dgp3B };

enum class SimMethod { IpwAtt, Overlap, BalancingAtt };

inline const char* dgp_name(Dgp d) {
  switch (d) {
    case Dgp::Dgp1: return "dgp1";
    case Dgp::Dgp2: return "dgp2";
    case Dgp::Dgp3A: return "dgp3a";
    case Dgp::Dgp3B: return "dgp3b";
  }
  return "?";
}

inline const char* sim_method_name(SimMethod m) {
  switch (m) {
    case SimMethod::IpwAtt: return "ipw-att";
    case SimMethod::Overlap: return "overlap";
    case SimMethod::BalancingAtt: return "balancing-att";
  }
  return "?";
}

// Overlap parameter values used in the reference studies.
inline const std::vector<double>& paper_grid(Dgp d) {
  static const std::vector<double> g1{20.0, 40.0, 60.0, 80.0, 100.0};
  static const std::vector<double> g2{2.0, 3.0, 4.0, 5.0, 6.0};
  static const std::vector<double> g3{1.0, 2.5, 5.0, 7.5, 10.0};
  switch (d) {
    case Dgp::Dgp1: return g1;
    case Dgp::Dgp2: return g2;
    default: return g3;
  }
}

// Counter-based child stream derivation (SplitMix64 of master + rep index),
// so rep r's stream never depends on how many reps ran before it.
inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t rep) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (rep + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace detail {

inline double normal_cdf(double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); }

}  // namespace detail

// Mean-zero multivariate normal draws, one row per sample, via the Cholesky
// factor of the covariance matrix.
inline Eigen::MatrixXd sample_mvn(Eigen::Index n, const Eigen::MatrixXd& cov,
                                  std::mt19937_64& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw Error(Errc::InvalidArgument, "covariance matrix is not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(n, cov.rows());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < cov.rows(); ++j) z(i, j) = normal(rng);
  return z * l.transpose();
}

// Six covariates; treatment from a latent linear index plus Normal(0, sigma2)
// noise (larger sigma2 = better overlap); linear outcomes with a constant
// effect of 5.
inline Dataset generate_dgp1(Eigen::Index n, double sigma2, std::mt19937_64& rng) {
  if (!(sigma2 > 0.0)) throw Error(Errc::InvalidArgument, "sigma2 must be > 0");
  Eigen::MatrixXd cov(3, 3);
  cov << 2.0, 1.0, -1.0, 1.0, 1.0, -0.5, -1.0, -0.5, 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_real_distribution<double> unif33(-3.0, 3.0);
  const double sigma = std::sqrt(sigma2);

  Dataset d;
  d.covariates.resize(n, 6);
  d.treatment.resize(n);
  Eigen::VectorXd y(n), y0(n), y1(n), e_true(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector3d z3(normal(rng), normal(rng), normal(rng));
    const Eigen::Vector3d x123 = l * z3;
    const double x1 = x123[0], x2 = x123[1], x3 = x123[2];
    const double x4 = unif33(rng);
    const double g = normal(rng);
    const double x5 = g * g;  // chi-square(1)
    const double x6 = unif(rng) < 0.5 ? 1.0 : 0.0;
    const double eps = sigma * normal(rng);
    const double index = x1 + 2.0 * x2 - 2.0 * x3 - x4 - 0.5 * x5 + x6;
    const int z = index + eps > 0.0 ? 1 : 0;
    const double eta = normal(rng);
    y0[i] = x1 + x2 + x3 - x4 + x5 + x6 + eta;
    y1[i] = y0[i] + 5.0;
    y[i] = z == 1 ? y1[i] : y0[i];
    d.covariates.row(i) << x1, x2, x3, x4, x5, x6;
    d.treatment[i] = z;
    e_true[i] = detail::normal_cdf(index / sigma);
  }
  d.outcome = y;
  d.covariate_names = {"x1", "x2", "x3", "x4", "x5", "x6"};
  TruthRecord t;
  t.y0 = y0;
  t.y1 = y1;
  t.unit_effect = Eigen::VectorXd::Constant(n, 5.0);
  t.true_propensity = e_true;
  t.true_att = 5.0;
  t.true_ato = 5.0;
  d.truth = t;
  return d;
}

// Six equicorrelated covariates, the last three dichotomized at zero; the
// true propensity is the inverse logit of the negated index
// 0.1 + gamma(0.5 x1 + 0.3 x2 + 0.3 x3 - 0.2 x4 - 0.25 x5 - 0.25 x6),
// evaluated exactly as written (larger gamma = weaker overlap).
inline Dataset generate_dgp2(Eigen::Index n, double gamma, std::mt19937_64& rng) {
  if (!(gamma > 0.0)) throw Error(Errc::InvalidArgument, "gamma must be > 0");
  Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(6, 6, 0.5);
  cov.diagonal().setOnes();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  constexpr double kDelta = 0.75;

  Dataset d;
  d.covariates.resize(n, 6);
  d.treatment.resize(n);
  Eigen::VectorXd y(n), y0(n), y1(n), e_true(n);
  Eigen::VectorXd z6(6);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < 6; ++j) z6[j] = normal(rng);
    Eigen::VectorXd latent = l * z6;
    const double x1 = latent[0], x2 = latent[1], x3 = latent[2];
    const double x4 = latent[3] > 0.0 ? 1.0 : 0.0;
    const double x5 = latent[4] > 0.0 ? 1.0 : 0.0;
    const double x6 = latent[5] > 0.0 ? 1.0 : 0.0;
    const double bracket =
        0.1 + gamma * (0.5 * x1 + 0.3 * x2 + 0.3 * x3 - 0.2 * x4 - 0.25 * x5 - 0.25 * x6);
    const double e = 1.0 / (1.0 + std::exp(bracket));
    const int z = unif(rng) < e ? 1 : 0;
    const double base = -0.5 * x1 - 0.5 * x2 - 1.5 * x3 + 0.8 * x4 + 0.8 * x5 + 1.0 * x6;
    y0[i] = base + 2.0 * normal(rng);
    y1[i] = y0[i] + kDelta;
    y[i] = z == 1 ? y1[i] : y0[i];
    d.covariates.row(i) << x1, x2, x3, x4, x5, x6;
    d.treatment[i] = z;
    e_true[i] = e;
  }
  d.outcome = y;
  d.covariate_names = {"x1", "x2", "x3", "x4", "x5", "x6"};
  TruthRecord t;
  t.y0 = y0;
  t.y1 = y1;
  t.unit_effect = Eigen::VectorXd::Constant(n, kDelta);
  t.true_propensity = e_true;
  t.true_att = kDelta;
  t.true_ato = kDelta;
  d.truth = t;
  return d;
}

enum class Dgp3Mode { A, B };

// Five independent standard normal covariates; treatment from
// (1.5 x1 + 1.5 x2 + 0.7 x1 x2)/c + Unif(-0.5, 0.5) crossing zero, so the
// true propensity is the clamped linear form. Heterogeneous effects
// 5 + Normal(mu, 2) with mu driven by covariates outside (mode A) or inside
// (mode B) the treatment index.
inline Dataset generate_dgp3(Eigen::Index n, double c, Dgp3Mode mode, std::mt19937_64& rng) {
  if (!(c > 0.0)) throw Error(Errc::InvalidArgument, "c must be > 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);

  Dataset d;
  d.covariates.resize(n, 5);
  d.treatment.resize(n);
  Eigen::VectorXd y(n), y0(n), y1(n), e_true(n), effect(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double x[5];
    for (auto& v : x) v = normal(rng);
    const double g = (1.5 * x[0] + 1.5 * x[1] + 0.7 * x[0] * x[1]) / c;
    const int z = g + unif(rng) > 0.0 ? 1 : 0;
    const double mu =
        mode == Dgp3Mode::A ? 0.5 * x[3] + 0.25 * x[4] : 0.5 * x[0] + 0.25 * x[1];
    const double dprime = mu + 2.0 * normal(rng);
    y0[i] = x[1] + x[2] + normal(rng);
    effect[i] = 5.0 + dprime;
    y1[i] = y0[i] + effect[i];
    y[i] = z == 1 ? y1[i] : y0[i];
    d.covariates.row(i) << x[0], x[1], x[2], x[3], x[4];
    d.treatment[i] = z;
    e_true[i] = std::clamp(0.5 + g, 0.0, 1.0);
  }
  d.outcome = y;
  d.covariate_names = {"x1", "x2", "x3", "x4", "x5"};

  TruthRecord t;
  t.y0 = y0;
  t.y1 = y1;
  t.unit_effect = effect;
  t.true_propensity = e_true;
  double att_sum = 0.0, h_sum = 0.0, ho_sum = 0.0;
  Eigen::Index n_t = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.treatment[i] == 1) {
      att_sum += effect[i];
      ++n_t;
    }
    const double h = e_true[i] * (1.0 - e_true[i]);
    h_sum += h;
    ho_sum += h * effect[i];
  }
  t.true_att = n_t > 0 ? att_sum / static_cast<double>(n_t)
                       : std::numeric_limits<double>::quiet_NaN();
  if (h_sum > 0.0) t.true_ato = ho_sum / h_sum;
  d.truth = t;
  return d;
}

struct ScenarioConfig {
  Dgp dgp = Dgp::Dgp1;
  double overlap_param = 100.0;  // sigma2 / gamma / c
  int n = 1000;
  int reps = 1000;
  std::uint64_t seed = 0;
  std::vector<SimMethod> methods = {SimMethod::IpwAtt, SimMethod::Overlap,
                                    SimMethod::BalancingAtt};
  double lambda = 1e-4;
  double epsilon_clip = 1e-6;
  bool allow_custom_overlap = false;
  int threads = 1;
  FitOptions fit_options;
  BalancingOptions balancing_options;
};

struct RepRecord {
  int rep = 0;
  SimMethod method = SimMethod::IpwAtt;
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double true_att = 0.0;
  double true_ato = 0.0;
  bool converged = false;
  bool failed = false;
  std::string error;
};

struct MethodAggregate {
  SimMethod method = SimMethod::IpwAtt;
  int n_success = 0;
  int failures = 0;
  double mean_estimate = 0.0;
  double bias_vs_att = 0.0;
  double rmse_vs_att = 0.0;
  double bias_vs_ato = 0.0;
  double rmse_vs_ato = 0.0;
  double mc_error = 0.0;  // sd(estimates) / sqrt(n_success)
};

struct ScenarioResult {
  ScenarioConfig config;
  std::vector<RepRecord> reps;  // rep-major, methods in config order
  std::vector<MethodAggregate> aggregates;
  bool high_failure_warning = false;
};

inline void validate_scenario(const ScenarioConfig& cfg) {
  if (cfg.n < 2) throw Error(Errc::InvalidArgument, "n must be >= 2");
  if (cfg.reps < 1) throw Error(Errc::InvalidArgument, "reps must be >= 1");
  if (cfg.methods.empty()) throw Error(Errc::InvalidArgument, "no methods requested");
  if (cfg.lambda < 0.0) throw Error(Errc::InvalidArgument, "lambda must be >= 0");
  if (cfg.threads < 1) throw Error(Errc::InvalidArgument, "threads must be >= 1");
  if (!(cfg.overlap_param > 0.0))
    throw Error(Errc::InvalidArgument, "overlap parameter must be > 0");
  if (!cfg.allow_custom_overlap) {
    const auto& grid = paper_grid(cfg.dgp);
    if (std::find(grid.begin(), grid.end(), cfg.overlap_param) == grid.end())
      throw Error(Errc::InvalidArgument,
                  "overlap value " + std::to_string(cfg.overlap_param) +
                      " is outside the study grid for " + dgp_name(cfg.dgp) +
                      " (use the custom-grid flag to override)");
  }
}

inline Dataset generate_scenario_dataset(const ScenarioConfig& cfg, std::mt19937_64& rng) {
  switch (cfg.dgp) {
    case Dgp::Dgp1: return generate_dgp1(cfg.n, cfg.overlap_param, rng);
    case Dgp::Dgp2: return generate_dgp2(cfg.n, cfg.overlap_param, rng);
    case Dgp::Dgp3A: return generate_dgp3(cfg.n, cfg.overlap_param, Dgp3Mode::A, rng);
    case Dgp::Dgp3B: return generate_dgp3(cfg.n, cfg.overlap_param, Dgp3Mode::B, rng);
  }
  throw Error(Errc::InvalidArgument, "unknown DGP");
}

namespace detail {

inline void run_one_rep(const ScenarioConfig& cfg, int rep, RepRecord* out) {
  const std::size_t n_methods = cfg.methods.size();
  for (std::size_t j = 0; j < n_methods; ++j) {
    out[j].rep = rep;
    out[j].method = cfg.methods[j];
  }

  std::mt19937_64 rng(child_seed(cfg.seed, static_cast<std::uint64_t>(rep)));
  Dataset d;
  try {
    d = generate_scenario_dataset(cfg, rng);
    validate_dataset(d);
  } catch (const std::exception& ex) {
    for (std::size_t j = 0; j < n_methods; ++j) {
      out[j].failed = true;
      out[j].error = ex.what();
    }
    return;
  }
  const double att = d.truth->true_att;
  const double ato = d.truth->true_ato.value_or(att);
  for (std::size_t j = 0; j < n_methods; ++j) {
    out[j].true_att = att;
    out[j].true_ato = ato;
  }

  const bool need_propensity =
      std::find(cfg.methods.begin(), cfg.methods.end(), SimMethod::IpwAtt) != cfg.methods.end() ||
      std::find(cfg.methods.begin(), cfg.methods.end(), SimMethod::Overlap) != cfg.methods.end();
  std::optional<LogisticModel> fit;
  std::optional<PropensityVector> prop;
  std::string fit_error;
  if (need_propensity) {
    try {
      fit = fit_logistic(d, cfg.fit_options);
      prop = predict_propensity(*fit, d, cfg.epsilon_clip);
    } catch (const std::exception& ex) {
      fit_error = ex.what();
    }
  }

  for (std::size_t j = 0; j < n_methods; ++j) {
    RepRecord& rec = out[j];
    try {
      WeightVector w;
      switch (cfg.methods[j]) {
        case SimMethod::IpwAtt:
        case SimMethod::Overlap: {
          if (!prop) throw Error(Errc::SeparationDetected, fit_error);
          const Estimand target =
              cfg.methods[j] == SimMethod::IpwAtt ? Estimand::ATT : Estimand::ATO;
          w = model_weights(*prop, d.treatment, target);
          w.converged = fit->converged;
          break;
        }
        case SimMethod::BalancingAtt:
          w = att_balancing_weights(d, cfg.lambda, cfg.balancing_options);
          break;
      }
      rec.estimate = weighted_effect(d, w).point;
      rec.converged = w.converged;
    } catch (const std::exception& ex) {
      rec.failed = true;
      rec.error = ex.what();
    }
  }
}

}  // namespace detail

// Runs the Monte Carlo scenario. Per-rep RNG streams derive only from
// (seed, rep index) and records land in preassigned slots, so the result is
// bit-identical for a given config at any thread count.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg) {
  validate_scenario(cfg);
  ScenarioResult res;
  res.config = cfg;
  const std::size_t n_methods = cfg.methods.size();
  res.reps.resize(static_cast<std::size_t>(cfg.reps) * n_methods);

  const auto run_block = [&](int lo, int hi) {
    for (int r = lo; r < hi; ++r)
      detail::run_one_rep(cfg, r, res.reps.data() + static_cast<std::size_t>(r) * n_methods);
  };

  const int threads = std::min(cfg.threads, cfg.reps);
  if (threads <= 1) {
    run_block(0, cfg.reps);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const int chunk = (cfg.reps + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int lo = t * chunk;
      const int hi = std::min(cfg.reps, lo + chunk);
      if (lo < hi) pool.emplace_back(run_block, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  for (std::size_t j = 0; j < n_methods; ++j) {
    MethodAggregate agg;
    agg.method = cfg.methods[j];
    double sum = 0.0, sum_d_att = 0.0, sum_sq_att = 0.0, sum_d_ato = 0.0, sum_sq_ato = 0.0;
    std::vector<double> estimates;
    estimates.reserve(cfg.reps);
    for (int r = 0; r < cfg.reps; ++r) {
      const RepRecord& rec = res.reps[static_cast<std::size_t>(r) * n_methods + j];
      if (rec.failed) {
        ++agg.failures;
        continue;
      }
      ++agg.n_success;
      estimates.push_back(rec.estimate);
      sum += rec.estimate;
      const double da = rec.estimate - rec.true_att;
      const double do_ = rec.estimate - rec.true_ato;
      sum_d_att += da;
      sum_sq_att += da * da;
      sum_d_ato += do_;
      sum_sq_ato += do_ * do_;
    }
    if (agg.n_success > 0) {
      const double ns = static_cast<double>(agg.n_success);
      agg.mean_estimate = sum / ns;
      agg.bias_vs_att = sum_d_att / ns;
      agg.rmse_vs_att = std::sqrt(sum_sq_att / ns);
      agg.bias_vs_ato = sum_d_ato / ns;
      agg.rmse_vs_ato = std::sqrt(sum_sq_ato / ns);
      if (agg.n_success > 1) {
        double ss = 0.0;
        for (double e : estimates) ss += (e - agg.mean_estimate) * (e - agg.mean_estimate);
        agg.mc_error = std::sqrt(ss / (ns - 1.0)) / std::sqrt(ns);
      }
    }
    if (agg.failures * 10 > cfg.reps) res.high_failure_warning = true;
    res.aggregates.push_back(agg);
  }
  return res;
}

struct GridRow {
  Dgp dgp = Dgp::Dgp1;
  double overlap_param = 0.0;
  SimMethod method = SimMethod::IpwAtt;
  double bias = 0.0;  // versus the method's own target (ATO for overlap)
  double rmse = 0.0;
  double mc_error = 0.0;
  int failures = 0;
  double bias_vs_att = 0.0;
  double rmse_vs_att = 0.0;
  double bias_vs_ato = 0.0;
  double rmse_vs_ato = 0.0;
};

inline std::vector<GridRow> grid_rows(const ScenarioResult& res) {
  std::vector<GridRow> rows;
  for (const auto& agg : res.aggregates) {
    GridRow row;
    row.dgp = res.config.dgp;
    row.overlap_param = res.config.overlap_param;
    row.method = agg.method;
    const bool targets_ato = agg.method == SimMethod::Overlap;
    row.bias = targets_ato ? agg.bias_vs_ato : agg.bias_vs_att;
    row.rmse = targets_ato ? agg.rmse_vs_ato : agg.rmse_vs_att;
    row.mc_error = agg.mc_error;
    row.failures = agg.failures;
    row.bias_vs_att = agg.bias_vs_att;
    row.rmse_vs_att = agg.rmse_vs_att;
    row.bias_vs_ato = agg.bias_vs_ato;
    row.rmse_vs_ato = agg.rmse_vs_ato;
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<GridRow> summarize_grid(const std::vector<ScenarioConfig>& configs) {
  if (configs.empty()) throw Error(Errc::EmptyInput, "no scenario configs");
  std::vector<GridRow> rows;
  for (const auto& cfg : configs)
    for (const auto& row : grid_rows(run_scenario(cfg))) rows.push_back(row);
  return rows;
}

}  // namespace causalweights
