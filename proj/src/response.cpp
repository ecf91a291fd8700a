#include "nwa/response.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "nwa/errors.hpp"

namespace nwa {

namespace {

constexpr double kTinyProbability = 1e-12;

void require_full_column_rank(const Matrix& m, const char* what) {
  if (m.rows() < m.cols()) {
    throw SingularSystemError(std::string(what) + ": fewer rows (" + std::to_string(m.rows()) +
                              ") than parameters (" + std::to_string(m.cols()) + ")");
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  if (qr.rank() < m.cols()) {
    throw SingularSystemError(std::string(what) + ": matrix is not of full column rank");
  }
}

void finalize_diagnostics(ResponseFit& fit) {
  fit.solver.tiny_probabilities = 0;
  for (Index k = 0; k < fit.p_hat.size(); ++k) {
    if (fit.p_hat[k] < kTinyProbability) ++fit.solver.tiny_probabilities;
  }
  if (fit.solver.tiny_probabilities > 0) {
    fit.solver.warnings.push_back(std::to_string(fit.solver.tiny_probabilities) +
                                  " estimated response probabilities below 1e-12");
  }
}

// Q(lambda) = target - sum_k z_k d_k F(x_k' lambda), and its Jacobian
// dQ/dlambda = sum_k d_k exp(-x_k' lambda) z_k x_k'.
struct CalibrationSystem {
  const Vector& target;
  const Matrix& z;
  const Matrix& x;
  const Vector& d;

  Vector residual(const Vector& lambda) const {
    const Vector v = x * lambda;
    Vector q = target;
    for (Index k = 0; k < x.rows(); ++k) q.noalias() -= z.row(k).transpose() * (d[k] * LogisticLink::F(v[k]));
    return q;
  }

  Matrix jacobian(const Vector& lambda) const {
    const Vector v = x * lambda;
    Vector scale(x.rows());
    for (Index k = 0; k < x.rows(); ++k) scale[k] = d[k] * std::exp(-v[k]);
    return z.transpose() * scale.asDiagonal() * x;
  }
};

double inf_norm(const Vector& v) {
  double out = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) return std::numeric_limits<double>::infinity();
    out = std::max(out, std::abs(v[i]));
  }
  return out;
}

// Damped Newton on Q(lambda) = 0 starting from lambda = 0. Step halving keeps
// the residual norm decreasing.
ResponseFit solve_calibration_system(const CalibrationSystem& sys, bool symmetric, ResponseMethod method,
                                     const SolverConfig& cfg, const char* what) {
  const Index dim = sys.x.cols();
  const double scale = std::max(inf_norm(sys.target), std::numeric_limits<double>::min());
  const double threshold = cfg.tolerance * scale;

  Vector lambda = Vector::Zero(dim);
  Vector q = sys.residual(lambda);
  double norm = inf_norm(q);

  Vector best = lambda;
  double best_norm = norm;
  int iteration = 0;

  while (norm > threshold && iteration < cfg.max_iterations) {
    ++iteration;
    const Matrix j = sys.jacobian(lambda);
    Vector step;
    if (symmetric) {
      Eigen::LDLT<Matrix> ldlt(j);
      if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14)) {
        if (iteration == 1) {
          throw SingularSystemError(std::string(what) + ": Jacobian is singular at the starting point");
        }
        // Flattening along a diverging path: no finite root was reached.
        break;
      }
      step = -ldlt.solve(q);
    } else {
      Eigen::FullPivLU<Matrix> lu(j);
      if (!lu.isInvertible() || !(lu.rcond() > 1e-14)) {
        if (iteration == 1) {
          throw SingularSystemError(std::string(what) + ": Jacobian is singular at the starting point");
        }
        // Flattening along a diverging path: no finite root was reached.
        break;
      }
      step = -lu.solve(q);
    }

    double t = 1.0;
    Vector candidate;
    Vector q_candidate;
    double candidate_norm = std::numeric_limits<double>::infinity();
    for (int h = 0; h <= cfg.max_halvings; ++h) {
      candidate = lambda + t * step;
      q_candidate = sys.residual(candidate);
      candidate_norm = inf_norm(q_candidate);
      if (candidate_norm < norm) break;
      t *= 0.5;
    }
    if (!(candidate_norm < norm)) break;  // no descent along the Newton direction

    lambda = std::move(candidate);
    q = std::move(q_candidate);
    norm = candidate_norm;
    if (norm < best_norm) {
      best_norm = norm;
      best = lambda;
    }
  }

  if (!(norm <= threshold)) {
    throw NonconvergenceError(std::string(what) + ": no root within " + std::to_string(iteration) +
                                  " iterations (residual " + std::to_string(best_norm) + ")",
                              best, best_norm, iteration);
  }

  ResponseFit fit;
  fit.lambda_hat = lambda;
  fit.p_hat = response_probabilities(sys.x, lambda);
  fit.method = method;
  fit.solver.iterations = iteration;
  fit.solver.residual_norm = norm;
  fit.solver.converged = true;
  finalize_diagnostics(fit);
  return fit;
}

Vector inverse_pi_over_respondents(const SampleState& state) {
  Vector d = state.pi_over_respondents();
  for (Index k = 0; k < d.size(); ++k) d[k] = 1.0 / d[k];
  return d;
}

}  // namespace

const char* to_string(ResponseMethod method) {
  switch (method) {
    case ResponseMethod::kCalibration:
      return "calibration";
    case ResponseMethod::kGeneralizedCalibration:
      return "generalized_calibration";
    case ResponseMethod::kMaximumLikelihood:
      return "mle";
  }
  return "unknown";
}

Vector response_probabilities(const Matrix& x, const Vector& lambda) {
  const Vector v = x * lambda;
  Vector p(v.size());
  for (Index k = 0; k < v.size(); ++k) p[k] = LogisticLink::prob(v[k]);
  return p;
}

ResponseFit fit_calibration(const SampleState& state, const Vector& pop_aux_totals, const Matrix& aux_over_sr,
                            const SolverConfig& cfg) {
  if (aux_over_sr.rows() != state.n_r()) {
    throw DimensionError("calibration: auxiliary matrix rows must equal the number of respondents");
  }
  if (pop_aux_totals.size() != aux_over_sr.cols()) {
    throw DimensionError("calibration: totals length must equal the number of auxiliary columns");
  }
  require_full_column_rank(aux_over_sr, "calibration");
  const Vector d = inverse_pi_over_respondents(state);
  const CalibrationSystem sys{pop_aux_totals, aux_over_sr, aux_over_sr, d};
  return solve_calibration_system(sys, /*symmetric=*/true, ResponseMethod::kCalibration, cfg, "calibration");
}

ResponseFit fit_generalized_calibration(const SampleState& state, const Vector& pop_z_totals,
                                        const Matrix& z_over_sr, const Matrix& x_over_sr,
                                        const SolverConfig& cfg) {
  if (z_over_sr.rows() != state.n_r() || x_over_sr.rows() != state.n_r()) {
    throw DimensionError("generalized calibration: matrices must have one row per respondent");
  }
  if (z_over_sr.cols() != x_over_sr.cols()) {
    throw DimensionError("generalized calibration: calibration and response variables must have equal dimension");
  }
  if (pop_z_totals.size() != z_over_sr.cols()) {
    throw DimensionError("generalized calibration: totals length must equal the number of calibration columns");
  }
  require_full_column_rank(x_over_sr, "generalized calibration");
  require_full_column_rank(z_over_sr, "generalized calibration");
  const Vector d = inverse_pi_over_respondents(state);
  const CalibrationSystem sys{pop_z_totals, z_over_sr, x_over_sr, d};
  return solve_calibration_system(sys, /*symmetric=*/false, ResponseMethod::kGeneralizedCalibration, cfg,
                                  "generalized calibration");
}

ResponseFit fit_mle(const SampleState& state, const Matrix& x_over_s, const Eigen::VectorXi& r_over_s,
                    MleWeights weights, const SolverConfig& cfg) {
  const Index n = state.n();
  if (x_over_s.rows() != n || r_over_s.size() != n) {
    throw DimensionError("mle: x and r must have one entry per sampled unit");
  }
  if (r_over_s != state.response_indicator()) {
    throw DomainError("mle: response indicator disagrees with the respondent set");
  }
  const Index n_resp = r_over_s.sum();
  if (n_resp == 0 || n_resp == n) {
    throw SeparationError("mle: only one response class present in the sample");
  }
  require_full_column_rank(x_over_s, "mle");

  Vector c = Vector::Ones(n);
  if (weights == MleWeights::kInversePi) c = state.pi_over_sample().cwiseInverse();
  const Vector r = r_over_s.cast<double>();

  auto log_likelihood = [&](const Vector& lambda) {
    const Vector v = x_over_s * lambda;
    CompensatedSum ll;
    for (Index k = 0; k < n; ++k) {
      // log(1 + e^v) computed stably
      const double softplus = v[k] > 0 ? v[k] + std::log1p(std::exp(-v[k])) : std::log1p(std::exp(v[k]));
      ll += c[k] * (r[k] * v[k] - softplus);
    }
    return ll.value();
  };
  auto score = [&](const Vector& lambda) {
    const Vector p = response_probabilities(x_over_s, lambda);
    return Vector(x_over_s.transpose() * (c.cwiseProduct(r - p)));
  };

  // Residual tolerance relative to the size of the weighted design.
  const double scale = std::max((x_over_s.transpose() * c).cwiseAbs().maxCoeff(), 1.0);
  const double threshold = cfg.tolerance * scale;

  Vector lambda = Vector::Zero(x_over_s.cols());
  Vector u = score(lambda);
  double ll = log_likelihood(lambda);
  double norm = inf_norm(u);
  Vector best = lambda;
  double best_norm = norm;
  int iteration = 0;

  while (norm > threshold && iteration < cfg.max_iterations) {
    ++iteration;
    const Vector p = response_probabilities(x_over_s, lambda);
    Vector w(n);
    for (Index k = 0; k < n; ++k) w[k] = c[k] * p[k] * (1.0 - p[k]);
    const Matrix info = x_over_s.transpose() * w.asDiagonal() * x_over_s;
    Eigen::LDLT<Matrix> ldlt(info);
    const bool saturated = (x_over_s * lambda).cwiseAbs().maxCoeff() > 30.0;
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14)) {
      if (saturated) throw SeparationError("mle: fitted probabilities saturate at 0 or 1 (separation)");
      throw SingularSystemError("mle: information matrix is singular");
    }
    const Vector step = ldlt.solve(u);

    double t = 1.0;
    Vector candidate;
    double candidate_ll = -std::numeric_limits<double>::infinity();
    for (int h = 0; h <= cfg.max_halvings; ++h) {
      candidate = lambda + t * step;
      candidate_ll = log_likelihood(candidate);
      if (candidate_ll >= ll) break;
      t *= 0.5;
    }
    if (!(candidate_ll >= ll)) break;

    lambda = std::move(candidate);
    ll = candidate_ll;
    u = score(lambda);
    norm = inf_norm(u);
    if (norm < best_norm) {
      best_norm = norm;
      best = lambda;
    }

    // Diverging coefficients with every unit fitted to its own class: the
    // likelihood has no finite maximizer.
    if ((x_over_s * lambda).cwiseAbs().maxCoeff() > 30.0) {
      const Vector p_now = response_probabilities(x_over_s, lambda);
      if ((r - p_now).cwiseAbs().maxCoeff() < 1e-6) {
        throw SeparationError("mle: complete separation of respondents and nonrespondents");
      }
    }
  }

  if (!(norm <= threshold)) {
    if ((x_over_s * best).cwiseAbs().maxCoeff() > 30.0) {
      throw SeparationError("mle: coefficients diverge without reducing the score (quasi-separation)");
    }
    throw NonconvergenceError("mle: no root within " + std::to_string(iteration) + " iterations", best,
                              best_norm, iteration);
  }

  const std::vector<Index> positions = state.respondent_positions();
  Matrix x_resp = select_rows(x_over_s, positions);

  ResponseFit fit;
  fit.lambda_hat = lambda;
  fit.p_hat = response_probabilities(x_resp, lambda);
  fit.method = ResponseMethod::kMaximumLikelihood;
  fit.solver.iterations = iteration;
  fit.solver.residual_norm = norm;
  fit.solver.converged = true;
  finalize_diagnostics(fit);
  return fit;
}

}  // namespace nwa
