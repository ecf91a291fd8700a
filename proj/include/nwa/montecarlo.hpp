#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nwa/design.hpp"
#include "nwa/linalg.hpp"
#include "nwa/response.hpp"
#include "nwa/working_models.hpp"

namespace nwa {

class Population;

// Scenario grid: which couple of auxiliary variables feeds the response model
// and which feeds the working model.
//   1: response {x1,x2}, model {x1,x2}
//   2: response {x3,x4}, model {x1,x2}
//   3: response {x1,x2}, model {x3,x4}
//   4: response {x3,x4}, model {x3,x4}
struct ScenarioConfig {
  int scenario = 1;
  ModelKind model = ModelKind::kGreg;
  Index k_neighbors = 5;
  Index sample_size = 200;
  Index replicates = 2000;
  std::uint64_t seed = 1;
  // Working models regress on (1, z1, z2); the response model never has an
  // intercept.
  bool model_intercept = true;
  bool compute_variance = false;  // variance estimator and linearized variance (GREG)
  bool compute_bridge = false;    // m_U bridge estimator and remainder
  int workers = 0;                // 0: NWA_WORKERS or hardware concurrency

  std::vector<Index> response_columns() const;
  std::vector<Index> model_columns() const;
  WorkingModelSpec model_spec() const;
  // Throws ConfigurationError on an invalid scenario, model or size.
  void validate(Index n_units) const;
};

// Estimators tracked per replicate, in table order.
enum class StudyEstimator : int {
  kModelAssisted = 0,    // t_{m_r, p_hat}
  kNwa,                  // t_NWA
  kImputed,              // t_imp
  kNaive,                // t_naive
  kHorvitzThompson,      // t_HT (full sample, comparison only)
  kDoubleExpansion,      // t_2HT (true p)
  kTwoPhaseModelAssisted // t_{m_r, p} (true p)
};
inline constexpr int kStudyEstimatorCount = 7;
const char* to_string(StudyEstimator e);

struct EstimatorSummary {
  std::string name;
  Index successes = 0;
  Index failures = 0;
  double relative_bias = 0.0;  // mean(t_hat - t)/t
  double relative_sd = 0.0;    // sqrt(sum (t_hat - t)^2 / (I - 1))/t
  double mc_se_bias = 0.0;     // Monte Carlo standard error of relative_bias
  double mean = 0.0;
  double empirical_variance = 0.0;  // variance of t_hat across replicates
};

// One replicate's numbers. Failed estimators hold nullopt.
struct ReplicateRecord {
  std::array<std::optional<double>, kStudyEstimatorCount> estimates;
  std::optional<double> mae;
  std::optional<double> mrpe;
  std::optional<double> variance_estimate;       // residual-based variance estimator
  std::optional<double> linearized_variance;     // estimated-p linearization (GREG)
  std::optional<double> bridge_remainder;        // t_{m_r,p_hat} - t_{m_U,p_hat}
  Index n_r = 0;
  std::string failure;  // first failure message, empty if none
};

struct StudyResult {
  ScenarioConfig config;
  double population_total = 0.0;
  Index population_size = 0;
  std::array<EstimatorSummary, kStudyEstimatorCount> estimators;
  double mean_mae = 0.0;
  double mean_mrpe = 0.0;
  double mean_n_r = 0.0;
  std::optional<double> mean_variance_estimate;
  std::optional<double> mean_linearized_variance;
  std::optional<double> mean_abs_bridge_remainder;  // mean |R| / N
  Index replicate_failures = 0;  // replicates where any estimator failed
  std::vector<std::string> failure_messages;  // distinct, first few

  const EstimatorSummary& summary(StudyEstimator e) const { return estimators[static_cast<int>(e)]; }
  // More than 1% of replicates lost an estimator.
  bool failure_rate_exceeded() const;
};

// Replicate-independent quantities, computed once per study.
struct StudyContext {
  Vector response_totals;               // population totals of the response covariates
  std::optional<Vector> population_fit;  // m_U over U, when bridge diagnostics are on
};

StudyContext prepare_study(const ScenarioConfig& cfg, const Population& pop);

// Runs one replicate. Library errors inside a replicate are recorded as
// failures, never thrown. run_study calls it for every index.
ReplicateRecord run_replicate(const ScenarioConfig& cfg, const Population& pop, const StudyContext& ctx,
                              Index replicate);

StudyResult run_study(const ScenarioConfig& cfg, const Population& pop);

// Aggregates records in replicate order.
StudyResult summarize(const ScenarioConfig& cfg, const Population& pop, const std::vector<ReplicateRecord>& records);

// mean over s_r of |p_hat - p|. Throws DomainError on empty input.
double mae(const Vector& p_hat_over_sr, const Vector& p_over_sr);

// sum_U |m - y| / sum_U y
double mrpe(const Vector& m_over_U, const Vector& y_over_U);
// The literal displayed form, with an extra 1/N: (1/N) sum|m - y| / sum y.
double mrpe_as_displayed(const Vector& m_over_U, const Vector& y_over_U);

struct BridgeDiagnostics {
  double model_assisted = 0.0;  // t_{m_r, p_hat}
  double bridge = 0.0;          // t_{m_U, p_hat}
  double remainder = 0.0;       // model_assisted - bridge
};

// m_U is the same working model refit with every population unit as a
// respondent (census, p_hat = 1). Needs the full population outcome.
BridgeDiagnostics diagnostics_bridge_estimators(const Population& pop, const SampleState& state,
                                                const WorkingModelSpec& spec, const WorkingModelFit& m_r,
                                                const Vector& p_hat_over_sr);

// m_U fitted on the whole population and evaluated at every unit.
Vector population_fit_predictions(const Population& pop, const WorkingModelSpec& spec);

// Same diagnostics from precomputed predictions over U.
BridgeDiagnostics bridge_from_predictions(const Population& pop, const SampleState& state, const Vector& m_r_over_U,
                                          const Vector& m_U_over_U, const Vector& p_hat_over_sr);

// Worker count: explicit value if positive, else NWA_WORKERS, else hardware.
int resolve_workers(int requested);

std::string study_to_json(const StudyResult& result);
std::string study_to_table(const StudyResult& result);
std::string study_to_csv(const StudyResult& result);

}  // namespace nwa
