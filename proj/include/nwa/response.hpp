#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nwa/design.hpp"
#include "nwa/linalg.hpp"

namespace nwa {

// Logistic response link, written through F(v) = 1 + exp(-v) so that the
// response probability is p = 1 / F(v).
struct LogisticLink {
  static double F(double v) { return 1.0 + std::exp(-v); }
  // dF/dv
  static double F_prime(double v) { return -std::exp(-v); }
  static double prob(double v) { return 1.0 / (1.0 + std::exp(-v)); }
};

enum class ResponseMethod { kCalibration, kGeneralizedCalibration, kMaximumLikelihood };

const char* to_string(ResponseMethod method);

struct SolverConfig {
  int max_iterations = 100;
  // Relative tolerance on the estimating equation residual.
  double tolerance = 1e-10;
  // Maximum number of step halvings per Newton iteration.
  int max_halvings = 40;
};

struct SolverDiagnostics {
  int iterations = 0;
  double residual_norm = 0.0;  // infinity norm of the estimating equation at lambda_hat
  bool converged = false;
  Index tiny_probabilities = 0;  // p_hat below 1e-12
  std::vector<std::string> warnings;
};

struct ResponseFit {
  Vector lambda_hat;
  Vector p_hat;  // over s_r
  ResponseMethod method = ResponseMethod::kCalibration;
  SolverDiagnostics solver;
};

// Solves sum_U x_k - sum_{s_r} x_k F(x_k' lambda) / pi_k = 0.
//
// `pop_aux_totals` are the population totals of the columns of `aux_over_sr`;
// they may be exact or estimated. Throws SingularSystemError when the
// respondent matrix is rank deficient and NonconvergenceError (carrying the
// best iterate) when the iteration budget is exhausted.
ResponseFit fit_calibration(const SampleState& state, const Vector& pop_aux_totals, const Matrix& aux_over_sr,
                            const SolverConfig& cfg = {});

// Solves sum_U z_k - sum_{s_r} z_k F(x_k' lambda) / pi_k = 0 with calibration
// variables z distinct from the response-model variables x.
ResponseFit fit_generalized_calibration(const SampleState& state, const Vector& pop_z_totals,
                                        const Matrix& z_over_sr, const Matrix& x_over_sr,
                                        const SolverConfig& cfg = {});

enum class MleWeights { kUnit, kInversePi };

// Weighted logistic maximum likelihood over the full sample:
// sum_s c_k {r_k - 1/F(x_k' lambda)} x_k = 0.
// `r_over_s` must agree with the respondent set of `state`.
ResponseFit fit_mle(const SampleState& state, const Matrix& x_over_s, const Eigen::VectorXi& r_over_s,
                    MleWeights weights, const SolverConfig& cfg = {});

// p_hat = 1 / F(x' lambda) for each row of x.
Vector response_probabilities(const Matrix& x, const Vector& lambda);

}  // namespace nwa
