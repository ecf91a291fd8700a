#include "nwa/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "nwa/errors.hpp"
#include "nwa/estimators.hpp"
#include "nwa/population.hpp"
#include "nwa/rng.hpp"
#include "nwa/variance.hpp"

namespace nwa {

namespace {

constexpr Index kX1X2[] = {simulation_column::kX1, simulation_column::kX2};
constexpr Index kX3X4[] = {simulation_column::kX3, simulation_column::kX4};

std::vector<Index> couple(bool first) {
  return first ? std::vector<Index>(std::begin(kX1X2), std::end(kX1X2))
               : std::vector<Index>(std::begin(kX3X4), std::end(kX3X4));
}

std::string column_names(const std::vector<Index>& cols) {
  std::string out;
  for (Index c : cols) {
    if (!out.empty()) out += ",";
    out += "x" + std::to_string(c + 1);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ScenarioConfig
// ---------------------------------------------------------------------------

std::vector<Index> ScenarioConfig::response_columns() const { return couple(scenario == 1 || scenario == 3); }

std::vector<Index> ScenarioConfig::model_columns() const { return couple(scenario == 1 || scenario == 2); }

WorkingModelSpec ScenarioConfig::model_spec() const {
  WorkingModelSpec spec;
  spec.kind = model;
  spec.features = FeatureMap{model_columns(), model_intercept};
  spec.k_neighbors = k_neighbors;
  return spec;
}

void ScenarioConfig::validate(Index n_units) const {
  if (scenario < 1 || scenario > 4) throw ConfigurationError("scenario must be 1, 2, 3 or 4");
  if (model == ModelKind::kNone) throw ConfigurationError("the study needs a working model");
  if (replicates < 1) throw ConfigurationError("replicates must be at least 1");
  if (sample_size < 1 || sample_size > n_units) {
    throw ConfigurationError("sample size must lie in [1, " + std::to_string(n_units) + "]");
  }
  if (model == ModelKind::kKnn && k_neighbors < 1) throw ConfigurationError("K must be at least 1");
}

const char* to_string(StudyEstimator e) {
  switch (e) {
    case StudyEstimator::kModelAssisted:
      return "t_mr_phat";
    case StudyEstimator::kNwa:
      return "t_nwa";
    case StudyEstimator::kImputed:
      return "t_imp";
    case StudyEstimator::kNaive:
      return "t_naive";
    case StudyEstimator::kHorvitzThompson:
      return "t_ht";
    case StudyEstimator::kDoubleExpansion:
      return "t_2ht";
    case StudyEstimator::kTwoPhaseModelAssisted:
      return "t_mr_p";
  }
  return "unknown";
}

bool StudyResult::failure_rate_exceeded() const {
  const double limit = 0.01 * static_cast<double>(config.replicates);
  for (const auto& e : estimators) {
    if (static_cast<double>(e.failures) > limit) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double mae(const Vector& p_hat_over_sr, const Vector& p_over_sr) {
  if (p_hat_over_sr.size() == 0) throw DomainError("MAE over an empty respondent set");
  if (p_hat_over_sr.size() != p_over_sr.size()) throw DimensionError("MAE inputs differ in length");
  return (p_hat_over_sr - p_over_sr).cwiseAbs().sum() / static_cast<double>(p_hat_over_sr.size());
}

double mrpe(const Vector& m_over_U, const Vector& y_over_U) {
  if (m_over_U.size() == 0) throw DomainError("MRPE over an empty population");
  if (m_over_U.size() != y_over_U.size()) throw DimensionError("MRPE inputs differ in length");
  return compensated_sum((m_over_U - y_over_U).cwiseAbs()) / compensated_sum(y_over_U);
}

double mrpe_as_displayed(const Vector& m_over_U, const Vector& y_over_U) {
  return mrpe(m_over_U, y_over_U) / static_cast<double>(m_over_U.size());
}

// ---------------------------------------------------------------------------
// Bridge diagnostics
// ---------------------------------------------------------------------------

Vector population_fit_predictions(const Population& pop, const WorkingModelSpec& spec) {
  const Index n = pop.n_units();
  std::vector<Index> all(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) all[static_cast<std::size_t>(k)] = k;
  SampleState census{all, all, DesignProbs::census(n), Vector::Ones(n)};
  const Vector ones = Vector::Ones(n);
  const WorkingModelFit m_U = fit_working_model(spec, census, pop.aux(), pop.outcome(), &ones);
  return predict_all(m_U, pop.aux());
}

BridgeDiagnostics bridge_from_predictions(const Population& pop, const SampleState& state, const Vector& m_r_over_U,
                                          const Vector& m_U_over_U, const Vector& p_hat_over_sr) {
  const Index n = pop.n_units();
  if (m_r_over_U.size() != n || m_U_over_U.size() != n) throw DimensionError("predictions must cover U");
  if (p_hat_over_sr.size() != state.n_r()) throw DimensionError("p_hat must cover the respondents");
  const Vector d = state.pi_over_respondents().cwiseProduct(p_hat_over_sr).cwiseInverse();
  const Vector& y = pop.outcome();
  CompensatedSum ma;
  CompensatedSum bridge;
  CompensatedSum remainder;
  for (Index k = 0; k < n; ++k) {
    ma += m_r_over_U[k];
    bridge += m_U_over_U[k];
    remainder += m_r_over_U[k] - m_U_over_U[k];
  }
  for (Index i = 0; i < state.n_r(); ++i) {
    const Index unit = state.respondents[static_cast<std::size_t>(i)];
    ma += d[i] * (y[unit] - m_r_over_U[unit]);
    bridge += d[i] * (y[unit] - m_U_over_U[unit]);
    remainder += -d[i] * (m_r_over_U[unit] - m_U_over_U[unit]);
  }
  // The remainder is accumulated directly as sum_U (m_r - m_U)(1 - a r/(pi p_hat))
  // rather than as a difference of two large totals.
  return BridgeDiagnostics{ma.value(), bridge.value(), remainder.value()};
}

BridgeDiagnostics diagnostics_bridge_estimators(const Population& pop, const SampleState& state,
                                                const WorkingModelSpec& spec, const WorkingModelFit& m_r,
                                                const Vector& p_hat_over_sr) {
  return bridge_from_predictions(pop, state, predict_all(m_r, pop.aux()), population_fit_predictions(pop, spec),
                                 p_hat_over_sr);
}

// ---------------------------------------------------------------------------
// Study
// ---------------------------------------------------------------------------

StudyContext prepare_study(const ScenarioConfig& cfg, const Population& pop) {
  cfg.validate(pop.n_units());
  if (!pop.true_resp_prob()) throw ConfigurationError("the study needs true response probabilities");
  StudyContext ctx;
  const Vector totals = pop.aux_totals();
  const std::vector<Index> cols = cfg.response_columns();
  ctx.response_totals.resize(static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) ctx.response_totals[static_cast<Index>(j)] = totals[cols[j]];
  if (cfg.compute_bridge) ctx.population_fit = population_fit_predictions(pop, cfg.model_spec());
  return ctx;
}

ReplicateRecord run_replicate(const ScenarioConfig& cfg, const Population& pop, const StudyContext& ctx,
                              Index replicate) {
  ReplicateRecord rec;
  auto fail = [&rec](const std::string& what, const std::exception& e) {
    if (rec.failure.empty()) rec.failure = what + ": " + e.what();
  };
  auto slot = [&rec](StudyEstimator e) -> std::optional<double>& { return rec.estimates[static_cast<int>(e)]; };

  const RngStream stream(cfg.seed, {stream_label::kReplicate, static_cast<std::uint64_t>(replicate)});
  RngStream sample_rng = stream.child(stream_label::kSample);
  RngStream response_rng = stream.child(stream_label::kResponse);

  SampleState state = srswor_sample(pop, cfg.sample_size, sample_rng);
  state = poisson_response(pop, std::move(state), response_rng);
  rec.n_r = state.n_r();

  const Index big_n = pop.n_units();
  const Vector& y_U = pop.outcome();
  const Vector& p_U = *pop.true_resp_prob();
  const Vector y_s = select(y_U, state.sample);
  const Vector pi_s = state.pi_over_sample();

  slot(StudyEstimator::kHorvitzThompson) = ht(state, y_s).estimate;

  if (state.n_r() == 0) {
    const DomainError e("no respondents in the sample");
    fail("sample", e);
    return rec;
  }

  const Vector y_sr = select(y_U, state.respondents);
  const Vector p_sr = select(p_U, state.respondents);
  const Matrix aux_sr = select_rows(pop.aux(), state.respondents);
  const Vector pi_sr = state.pi_over_respondents();

  slot(StudyEstimator::kDoubleExpansion) = double_expansion(state, y_sr, p_sr).estimate;
  slot(StudyEstimator::kNaive) = naive(state, y_sr, big_n).estimate;

  // Response model by calibration on the scenario couple.
  const FeatureMap resp_features{cfg.response_columns(), false};
  const Matrix x_sr = resp_features.apply(aux_sr);
  std::optional<ResponseFit> response;
  try {
    response = fit_calibration(state, ctx.response_totals, x_sr);
    slot(StudyEstimator::kNwa) = nwa(state, y_sr, *response).estimate;
    rec.mae = mae(response->p_hat, p_sr);
  } catch (const Error& e) {
    fail("response model", e);
  }

  // Working model, predicted once over U and reused by every estimator.
  std::optional<WorkingModelFit> model;
  Vector m_U;
  try {
    model = fit_working_model(cfg.model_spec(), state, aux_sr, y_sr);
    m_U = predict_all(*model, pop.aux());
    rec.mrpe = mrpe(m_U, y_U);
  } catch (const Error& e) {
    fail("working model", e);
    model.reset();
  }
  if (!model) return rec;

  const double sum_m = compensated_sum(m_U);
  Vector m_sr(state.n_r());
  for (Index i = 0; i < state.n_r(); ++i) m_sr[i] = m_U[state.respondents[static_cast<std::size_t>(i)]];

  {
    CompensatedSum t;
    t += sum_m;
    for (Index i = 0; i < state.n_r(); ++i) t += (y_sr[i] - m_sr[i]) / (pi_sr[i] * p_sr[i]);
    slot(StudyEstimator::kTwoPhaseModelAssisted) = t.value();
  }
  {
    CompensatedSum t;
    for (Index i = 0; i < state.n_r(); ++i) t += y_sr[i] / pi_sr[i];
    for (Index unit : state.nonrespondents()) t += m_U[unit] / state.design.first(unit);
    slot(StudyEstimator::kImputed) = t.value();
  }

  if (!response) return rec;
  const Vector& p_hat = response->p_hat;
  {
    CompensatedSum t;
    t += sum_m;
    for (Index i = 0; i < state.n_r(); ++i) t += (y_sr[i] - m_sr[i]) / (pi_sr[i] * p_hat[i]);
    slot(StudyEstimator::kModelAssisted) = t.value();
  }

  if (cfg.compute_variance) {
    try {
      rec.variance_estimate = nwa_ma_variance_estimate(state, m_sr, x_sr, p_hat, y_sr).total_var;
      if (cfg.model == ModelKind::kGreg) {
        rec.linearized_variance =
            greg_linearized_variance(state, *model, x_sr, p_hat, y_sr, LinearizationMode::kEstimatedP).total;
      }
    } catch (const Error& e) {
      fail("variance", e);
    }
  }
  if (cfg.compute_bridge && ctx.population_fit) {
    rec.bridge_remainder = bridge_from_predictions(pop, state, m_U, *ctx.population_fit, p_hat).remainder;
  }
  return rec;
}

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("NWA_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

StudyResult run_study(const ScenarioConfig& cfg, const Population& pop) {
  const StudyContext ctx = prepare_study(cfg, pop);
  std::vector<ReplicateRecord> records(static_cast<std::size_t>(cfg.replicates));

  const int workers = std::min<int>(resolve_workers(cfg.workers), static_cast<int>(cfg.replicates));
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    for (;;) {
      const Index i = next.fetch_add(1);
      if (i >= cfg.replicates) return;
      try {
        records[static_cast<std::size_t>(i)] = run_replicate(cfg, pop, ctx, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(cfg.replicates);
        return;
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return summarize(cfg, pop, records);
}

StudyResult summarize(const ScenarioConfig& cfg, const Population& pop, const std::vector<ReplicateRecord>& records) {
  StudyResult out;
  out.config = cfg;
  out.population_total = pop.total();
  out.population_size = pop.n_units();
  const double t = pop.total();

  for (int e = 0; e < kStudyEstimatorCount; ++e) {
    EstimatorSummary& s = out.estimators[static_cast<std::size_t>(e)];
    s.name = to_string(static_cast<StudyEstimator>(e));
    CompensatedSum dev;
    CompensatedSum dev2;
    CompensatedSum level;
    for (const auto& r : records) {
      const auto& v = r.estimates[static_cast<std::size_t>(e)];
      if (!v) {
        ++s.failures;
        continue;
      }
      ++s.successes;
      dev += *v - t;
      dev2 += (*v - t) * (*v - t);
      level += *v;
    }
    if (s.successes == 0) continue;
    const auto count = static_cast<double>(s.successes);
    const double mean_dev = dev.value() / count;
    s.mean = level.value() / count;
    s.relative_bias = mean_dev / t;
    // With a single replicate the divisor I - 1 is replaced by 1.
    s.relative_sd = std::sqrt(dev2.value() / std::max(count - 1.0, 1.0)) / t;
    CompensatedSum centred;
    for (const auto& r : records) {
      const auto& v = r.estimates[static_cast<std::size_t>(e)];
      if (v) centred += (*v - s.mean) * (*v - s.mean);
    }
    s.empirical_variance = centred.value() / std::max(count - 1.0, 1.0);
    s.mc_se_bias = std::sqrt(s.empirical_variance / count) / std::abs(t);
  }

  auto average = [&records](auto member) -> std::optional<double> {
    CompensatedSum sum;
    Index count = 0;
    for (const auto& r : records) {
      const std::optional<double>& v = r.*member;
      if (v) {
        sum += *v;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return sum.value() / static_cast<double>(count);
  };
  out.mean_mae = average(&ReplicateRecord::mae).value_or(0.0);
  out.mean_mrpe = average(&ReplicateRecord::mrpe).value_or(0.0);
  out.mean_variance_estimate = average(&ReplicateRecord::variance_estimate);
  out.mean_linearized_variance = average(&ReplicateRecord::linearized_variance);

  CompensatedSum abs_r;
  Index n_bridge = 0;
  CompensatedSum n_r;
  for (const auto& r : records) {
    n_r += static_cast<double>(r.n_r);
    if (r.bridge_remainder) {
      abs_r += std::abs(*r.bridge_remainder) / static_cast<double>(pop.n_units());
      ++n_bridge;
    }
    if (!r.failure.empty()) {
      ++out.replicate_failures;
      if (out.failure_messages.size() < 5 &&
          std::find(out.failure_messages.begin(), out.failure_messages.end(), r.failure) ==
              out.failure_messages.end()) {
        out.failure_messages.push_back(r.failure);
      }
    }
  }
  if (n_bridge > 0) out.mean_abs_bridge_remainder = abs_r.value() / static_cast<double>(n_bridge);
  if (!records.empty()) out.mean_n_r = n_r.value() / static_cast<double>(records.size());
  return out;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

std::string study_to_json(const StudyResult& r) {
  using nlohmann::ordered_json;
  const ScenarioConfig& c = r.config;
  ordered_json j;
  ordered_json cfg;
  cfg["scenario"] = c.scenario;
  cfg["model"] = to_string(c.model);
  if (c.model == ModelKind::kKnn) cfg["k_neighbors"] = c.k_neighbors;
  if (c.model == ModelKind::kLocalPoly) {
    cfg["local_poly"] = {{"order", 1}, {"kernel", "gaussian"}, {"bandwidth", "1.06*sd*n_r^(-1/5) per coordinate"}};
  }
  cfg["sample_size"] = c.sample_size;
  cfg["replicates"] = c.replicates;
  cfg["seed"] = c.seed;
  cfg["model_intercept"] = c.model_intercept;
  cfg["response_vars"] = column_names(c.response_columns());
  cfg["model_vars"] = column_names(c.model_columns());
  j["config"] = cfg;
  j["population"] = {{"n_units", r.population_size}, {"total", r.population_total}};
  ordered_json est = ordered_json::array();
  for (const auto& s : r.estimators) {
    est.push_back({{"name", s.name},
                   {"rb", s.relative_bias},
                   {"rsd", s.relative_sd},
                   {"mc_se_rb", s.mc_se_bias},
                   {"successes", s.successes},
                   {"failures", s.failures}});
  }
  j["estimators"] = est;
  j["mae_p_hat"] = r.mean_mae;
  j["mrpe"] = r.mean_mrpe;
  j["mean_n_r"] = r.mean_n_r;
  if (r.mean_variance_estimate) {
    j["variance"] = {{"mean_estimate", *r.mean_variance_estimate},
                     {"empirical", r.summary(StudyEstimator::kModelAssisted).empirical_variance}};
    if (r.mean_linearized_variance) j["variance"]["mean_linearized"] = *r.mean_linearized_variance;
  }
  if (r.mean_abs_bridge_remainder) j["bridge_mean_abs_remainder_per_unit"] = *r.mean_abs_bridge_remainder;
  j["replicate_failures"] = r.replicate_failures;
  j["failure_messages"] = r.failure_messages;
  return j.dump(2) + "\n";
}

std::string study_to_table(const StudyResult& r) {
  const ScenarioConfig& c = r.config;
  std::string out = fmt::format("scenario {}  model {}{}  n {}  replicates {}  seed {}\n", c.scenario,
                                to_string(c.model),
                                c.model == ModelKind::kKnn ? fmt::format(" (K={})", c.k_neighbors) : "",
                                c.sample_size, c.replicates, c.seed);
  out += fmt::format("response vars {}  model vars {}  N {}  t {:.6f}\n\n", column_names(c.response_columns()),
                     column_names(c.model_columns()), r.population_size, r.population_total);
  out += fmt::format("{:<12}{:>10}{:>10}{:>12}{:>10}\n", "estimator", "RB", "RSd", "MC-SE(RB)", "failed");
  for (const auto& s : r.estimators) {
    out += fmt::format("{:<12}{:>10.4f}{:>10.4f}{:>12.5f}{:>10}\n", s.name, s.relative_bias, s.relative_sd,
                       s.mc_se_bias, s.failures);
  }
  out += fmt::format("\nMAE(p_hat) {:.4f}  MRPE {:.4f}  mean n_r {:.2f}\n", r.mean_mae, r.mean_mrpe, r.mean_n_r);
  if (r.mean_variance_estimate) {
    out += fmt::format("variance: mean estimate {:.6g}  empirical {:.6g}", *r.mean_variance_estimate,
                       r.summary(StudyEstimator::kModelAssisted).empirical_variance);
    if (r.mean_linearized_variance) out += fmt::format("  mean linearized {:.6g}", *r.mean_linearized_variance);
    out += "\n";
  }
  if (r.mean_abs_bridge_remainder) {
    out += fmt::format("mean |R|/N {:.6g}\n", *r.mean_abs_bridge_remainder);
  }
  return out;
}

std::string study_to_csv(const StudyResult& r) {
  std::string out = "estimator,rb,rsd,mc_se_rb,successes,failures\n";
  for (const auto& s : r.estimators) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{},{}\n", s.name, s.relative_bias, s.relative_sd, s.mc_se_bias,
                       s.successes, s.failures);
  }
  return out;
}

}  // namespace nwa
