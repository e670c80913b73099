#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace causalweights {

// Target causal estimand.
enum class Estimand { ATE, ATT, ATO };

// How a weight vector was produced.
enum class Method { IPW, Overlap, Balancing };

enum class Errc {
  // data model
  NonBinaryTreatment,
  DegenerateArm,
  NonFiniteValue,
  LengthMismatch,
  // propensity
  RankDeficient,
  SeparationDetected,
  DimensionMismatch,
  UnknownEstimand,
  // balancing
  ZeroVarianceCovariate,
  // estimation / diagnostics
  ZeroWeightSum,
  MissingOutcome,
  UndefinedPbr,
  ZeroPooledVariance,
  EmptyInput,
  // io
  ParseError,
  MissingColumn,
  MissingValue,
  InvalidArgument,
  IoError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::NonBinaryTreatment: return "NON_BINARY_TREATMENT";
    case Errc::DegenerateArm: return "DEGENERATE_ARM";
    case Errc::NonFiniteValue: return "NON_FINITE_VALUE";
    case Errc::LengthMismatch: return "LENGTH_MISMATCH";
    case Errc::RankDeficient: return "RANK_DEFICIENT";
    case Errc::SeparationDetected: return "SEPARATION_DETECTED";
    case Errc::DimensionMismatch: return "DIMENSION_MISMATCH";
    case Errc::UnknownEstimand: return "UNKNOWN_ESTIMAND";
    case Errc::ZeroVarianceCovariate: return "ZERO_VARIANCE_COVARIATE";
    case Errc::ZeroWeightSum: return "ZERO_WEIGHT_SUM";
    case Errc::MissingOutcome: return "MISSING_OUTCOME";
    case Errc::UndefinedPbr: return "UNDEFINED_PBR";
    case Errc::ZeroPooledVariance: return "ZERO_POOLED_VARIANCE";
    case Errc::EmptyInput: return "EMPTY_INPUT";
    case Errc::ParseError: return "PARSE_ERROR";
    case Errc::MissingColumn: return "MISSING_COLUMN";
    case Errc::MissingValue: return "MISSING_VALUE";
    case Errc::InvalidArgument: return "INVALID_ARGUMENT";
    case Errc::IoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline const char* estimand_name(Estimand e) {
  switch (e) {
    case Estimand::ATE: return "ATE";
    case Estimand::ATT: return "ATT";
    case Estimand::ATO: return "ATO";
  }
  return "?";
}

inline const char* method_name(Method m) {
  switch (m) {
    case Method::IPW: return "IPW";
    case Method::Overlap: return "OVERLAP";
    case Method::Balancing: return "BALANCING";
  }
  return "?";
}

// Per-unit ground truth carried by simulated datasets.
struct TruthRecord {
  Eigen::VectorXd y0;
  Eigen::VectorXd y1;
  Eigen::VectorXd unit_effect;  // y1 - y0, exactly
  std::optional<Eigen::VectorXd> true_propensity;
  double true_att = 0.0;  // mean unit effect over treated units
  std::optional<double> true_ato;
};

// A cross-sectional study: covariates, binary treatment, optional outcome.
// Immutable by convention after construction.
struct Dataset {
  Eigen::MatrixXd covariates;  // n x k
  Eigen::VectorXi treatment;   // length n, entries in {0,1}
  std::optional<Eigen::VectorXd> outcome;
  std::vector<std::string> covariate_names;
  std::optional<TruthRecord> truth;

  Eigen::Index n() const { return treatment.size(); }
  Eigen::Index k() const { return covariates.cols(); }
  Eigen::Index n_treated() const { return (treatment.array() == 1).count(); }
  Eigen::Index n_control() const { return (treatment.array() == 0).count(); }
};

// Per-unit weights tagged with provenance.
struct WeightVector {
  Eigen::VectorXd weights;  // length n, nonnegative and finite
  Estimand estimand = Estimand::ATT;
  Method method = Method::IPW;
  bool converged = true;
  std::string solver_report;
};

struct EffectEstimate {
  double point = 0.0;      // outcome units
  double std_error = 0.0;  // >= 0
  Estimand estimand = Estimand::ATT;
  Method method = Method::IPW;
  Eigen::Index n_treated = 0;
  Eigen::Index n_control = 0;
};

struct BalanceRow {
  std::string name;
  double smd_unweighted = 0.0;
  double smd_weighted = 0.0;
  bool zero_pooled_variance = false;  // SMD reported as 0 for this column
};

struct BalanceTable {
  std::vector<BalanceRow> rows;
  double mean_abs_unweighted = 0.0;
  double mean_abs_weighted = 0.0;
  double pbr_percent = 0.0;  // NaN when the unweighted mean |SMD| is zero
  double ess_treated = 0.0;
  double ess_control = 0.0;
};

// Checks every Dataset invariant and returns the dataset unchanged.
inline const Dataset& validate_dataset(const Dataset& d) {
  const Eigen::Index n = d.treatment.size();
  if (n < 2) throw Error(Errc::LengthMismatch, "need at least 2 units, got " + std::to_string(n));
  if (d.covariates.rows() != n)
    throw Error(Errc::LengthMismatch, "covariates rows " + std::to_string(d.covariates.rows()) +
                                          " != treatment length " + std::to_string(n));
  if (d.outcome && d.outcome->size() != n)
    throw Error(Errc::LengthMismatch, "outcome length " + std::to_string(d.outcome->size()) +
                                          " != treatment length " + std::to_string(n));
  if (!d.covariate_names.empty() &&
      static_cast<Eigen::Index>(d.covariate_names.size()) != d.covariates.cols())
    throw Error(Errc::LengthMismatch, "covariate_names size != number of columns");

  Eigen::Index n_t = 0, n_c = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int z = d.treatment[i];
    if (z == 1) {
      ++n_t;
    } else if (z == 0) {
      ++n_c;
    } else {
      throw Error(Errc::NonBinaryTreatment,
                  "treatment[" + std::to_string(i) + "] = " + std::to_string(z));
    }
  }
  if (n_t == 0) throw Error(Errc::DegenerateArm, "no treated units");
  if (n_c == 0) throw Error(Errc::DegenerateArm, "no control units");

  if (!d.covariates.allFinite())
    throw Error(Errc::NonFiniteValue, "covariate matrix contains a non-finite entry");
  if (d.outcome && !d.outcome->allFinite())
    throw Error(Errc::NonFiniteValue, "outcome vector contains a non-finite entry");

  if (d.truth) {
    const TruthRecord& t = *d.truth;
    if (t.y0.size() != n || t.y1.size() != n || t.unit_effect.size() != n)
      throw Error(Errc::LengthMismatch, "truth record length != n");
    if (t.true_propensity && t.true_propensity->size() != n)
      throw Error(Errc::LengthMismatch, "true_propensity length != n");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (t.unit_effect[i] != t.y1[i] - t.y0[i])
        throw Error(Errc::NonFiniteValue,
                    "unit_effect[" + std::to_string(i) + "] != y1 - y0 exactly");
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (d.treatment[i] == 1) sum += t.unit_effect[i];
    const double att = sum / static_cast<double>(n_t);
    if (std::abs(att - t.true_att) > 1e-12 * std::max(1.0, std::abs(att)))
      throw Error(Errc::NonFiniteValue, "stored true_att does not match unit effects");
  }
  return d;
}

}  // namespace causalweights
