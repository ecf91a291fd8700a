#include "nwa/cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "nwa/errors.hpp"
#include "nwa/estimators.hpp"
#include "nwa/montecarlo.hpp"
#include "nwa/population.hpp"
#include "nwa/response.hpp"
#include "nwa/variance.hpp"
#include "nwa/working_models.hpp"

namespace nwa::cli {

namespace {

using json = nlohmann::ordered_json;

// Bad flag values found after parsing (unknown variable names and the like).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("usage", message) {}
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                                       : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool have_header = false;
  long row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      for (std::size_t i = 0; i < t.header.size(); ++i) {
        if (t.header[i].empty()) throw SchemaError("empty column name in header");
        for (std::size_t j = 0; j < i; ++j) {
          if (t.header[i] == t.header[j]) throw SchemaError("duplicate column '" + t.header[i] + "'");
        }
      }
      continue;
    }
    ++row;
    if (fields.size() != t.header.size()) {
      throw SchemaError(fmt::format("row {}: {} fields, header has {}", row, fields.size(), t.header.size()), row);
    }
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw SchemaError("missing header row");
  return t;
}

double parse_number(const std::string& field, const std::string& column, long row) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value);
  if (field.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(value)) {
    throw SchemaError(fmt::format("row {}: column '{}' is not a finite number: '{}'", row, column, field), row);
  }
  return value;
}

bool is_reserved(const std::string& name) { return name == "id" || name == "y" || name == "pi"; }

}  // namespace

Dataset parse_dataset(std::istream& in) {
  const CsvTable t = read_csv(in);
  int id_col = -1;
  int y_col = -1;
  int pi_col = -1;
  std::vector<int> aux_cols;
  Dataset d;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    const std::string& h = t.header[j];
    if (h == "id") {
      id_col = static_cast<int>(j);
    } else if (h == "y") {
      y_col = static_cast<int>(j);
    } else if (h == "pi") {
      pi_col = static_cast<int>(j);
    } else {
      aux_cols.push_back(static_cast<int>(j));
      d.aux_names.push_back(h);
    }
  }
  if (y_col < 0) throw SchemaError("missing column 'y'");
  if (pi_col < 0) throw SchemaError("missing column 'pi'");
  if (t.rows.empty()) throw SchemaError("no data rows");

  const auto n = static_cast<Index>(t.rows.size());
  d.aux.resize(n, static_cast<Index>(aux_cols.size()));
  d.pi.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& f = t.rows[static_cast<std::size_t>(i)];
    const long row = static_cast<long>(i) + 1;
    d.ids.push_back(id_col >= 0 ? f[static_cast<std::size_t>(id_col)] : std::to_string(row));
    const std::string& y = f[static_cast<std::size_t>(y_col)];
    d.y.push_back(y.empty() ? std::nullopt : std::optional<double>(parse_number(y, "y", row)));
    const double pi = parse_number(f[static_cast<std::size_t>(pi_col)], "pi", row);
    if (!(pi > 0.0 && pi <= 1.0)) {
      throw SchemaError(fmt::format("row {}: pi = {} outside (0, 1]", row, f[static_cast<std::size_t>(pi_col)]),
                        row);
    }
    d.pi[i] = pi;
    for (std::size_t j = 0; j < aux_cols.size(); ++j) {
      const std::string& name = t.header[static_cast<std::size_t>(aux_cols[j])];
      const std::string& cell = f[static_cast<std::size_t>(aux_cols[j])];
      if (cell.empty()) throw SchemaError(fmt::format("row {}: auxiliary '{}' is missing", row, name), row);
      d.aux(i, static_cast<Index>(j)) = parse_number(cell, name, row);
    }
  }
  return d;
}

AuxTable parse_aux_table(std::istream& in) {
  const CsvTable t = read_csv(in);
  AuxTable a;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (is_reserved(t.header[j])) continue;
    cols.push_back(j);
    a.names.push_back(t.header[j]);
  }
  if (t.rows.empty()) throw SchemaError("population file has no data rows");
  a.values.resize(static_cast<Index>(t.rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      a.values(static_cast<Index>(i), static_cast<Index>(j)) =
          parse_number(t.rows[i][cols[j]], t.header[cols[j]], static_cast<long>(i) + 1);
    }
  }
  return a;
}

Totals parse_totals(std::istream& in) {
  const CsvTable t = read_csv(in);
  if (t.rows.size() != 1) throw SchemaError("totals file must have exactly one data row");
  Totals out;
  std::vector<double> values;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    const double v = parse_number(t.rows[0][j], t.header[j], 1);
    if (t.header[j] == "N") {
      if (!(v >= 1.0) || v != std::floor(v)) throw SchemaError("N must be a positive integer", 1);
      out.n_units = v;
    } else {
      out.names.push_back(t.header[j]);
      values.push_back(v);
    }
  }
  out.values = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (auto& f : split(s)) {
    if (f.empty()) throw UsageError("empty name in list '" + s + "'");
    out.push_back(f);
  }
  return out;
}

Index column_of(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return static_cast<Index>(j);
  }
  throw UsageError("unknown auxiliary variable '" + name + "'");
}

std::vector<Index> resolve_columns(const std::vector<std::string>& names, const std::string& list) {
  std::vector<Index> out;
  const std::vector<std::string> wanted = split_list(list);
  if (wanted.empty()) {
    for (std::size_t j = 0; j < names.size(); ++j) out.push_back(static_cast<Index>(j));
    return out;
  }
  for (const auto& w : wanted) out.push_back(column_of(names, w));
  return out;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open '" + path + "'");
  return in;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    out.flush();
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigurationError("cannot write '" + path + "'");
  f << text;
  if (!f) throw ConfigurationError("failed writing '" + path + "'");
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message,
                  const json& extra = json::object()) {
  json j;
  j["error"] = kind;
  j["message"] = message;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  err << j.dump() << "\n";
  err.flush();
}

// ---------------------------------------------------------------------------
// estimate / weights
// ---------------------------------------------------------------------------

struct EstimateOptions {
  std::string input;
  std::string design = "generic";
  std::string response_method = "calibration";
  std::string mle_weights = "unit";
  std::string model = "greg";
  Index k_neighbors = 5;
  int poly_order = 1;
  std::string kernel = "gaussian";
  std::string response_vars;
  std::string model_vars;
  std::string calib_vars;
  bool intercept = false;
  std::string totals;
  std::string population;
  bool sample_level = false;
  bool variance = false;
  std::string out;
};

struct EstimateOutcome {
  Dataset data;
  EstimateReport report;
  std::string response_method;
  std::optional<ResponseFit> response;
  std::optional<VarianceReport> variance;
  std::string design;
  std::vector<std::string> response_vars;
  std::vector<std::string> model_vars;
};

ModelKind parse_model(const std::string& s) {
  if (s == "none") return ModelKind::kNone;
  if (s == "greg") return ModelKind::kGreg;
  if (s == "knn") return ModelKind::kKnn;
  if (s == "localpoly") return ModelKind::kLocalPoly;
  throw UsageError("unknown model '" + s + "'");
}

Kernel parse_kernel(const std::string& s) {
  if (s == "gaussian") return Kernel::kGaussian;
  if (s == "epanechnikov") return Kernel::kEpanechnikov;
  if (s == "uniform") return Kernel::kUniform;
  throw UsageError("unknown kernel '" + s + "'");
}

DesignProbs build_design(const std::string& tag, const Dataset& d, std::optional<double>* n_units) {
  const Index n = d.pi.size();
  if (tag == "generic") return DesignProbs::poisson(d.pi);
  if (tag.rfind("srswor:", 0) == 0) {
    const std::string num = tag.substr(7);
    long big_n = 0;
    const auto res = std::from_chars(num.data(), num.data() + num.size(), big_n);
    if (num.empty() || res.ec != std::errc() || res.ptr != num.data() + num.size() || big_n < 1) {
      throw UsageError("design must be 'generic' or 'srswor:N' with a positive integer N");
    }
    if (big_n < n) throw UsageError(fmt::format("srswor:{} is smaller than the {} sample rows", big_n, n));
    const double pi = static_cast<double>(n) / static_cast<double>(big_n);
    for (Index i = 0; i < n; ++i) {
      if (std::abs(d.pi[i] - pi) > 1e-9 * pi) {
        throw SchemaError(fmt::format("row {}: pi = {} but srswor:{} with n = {} implies {}", i + 1, d.pi[i], big_n,
                                      n, pi),
                          static_cast<long>(i) + 1);
      }
    }
    *n_units = static_cast<double>(big_n);
    return DesignProbs::srswor(big_n, n);
  }
  throw UsageError("design must be 'generic' or 'srswor:N'");
}

void merge_population_size(std::optional<double>* n_units, double value, const char* source) {
  if (*n_units && **n_units != value) {
    throw ConfigurationError(fmt::format("population size from {} ({}) disagrees with {}", source, value, **n_units));
  }
  *n_units = value;
}

EstimateOutcome run_estimate(const EstimateOptions& o) {
  EstimateOutcome result;
  {
    std::ifstream in = open_input(o.input);
    result.data = parse_dataset(in);
  }
  const Dataset& d = result.data;
  const Index n = d.pi.size();
  const Index p = d.aux.cols();

  if (!o.totals.empty() && !o.population.empty()) throw UsageError("use either --totals or --population");

  std::optional<double> n_units;
  std::vector<Index> sample(static_cast<std::size_t>(n));
  std::vector<Index> respondents;
  for (Index i = 0; i < n; ++i) {
    sample[static_cast<std::size_t>(i)] = i;
    if (d.y[static_cast<std::size_t>(i)]) respondents.push_back(i);
  }
  SampleState state{sample, respondents, build_design(o.design, d, &n_units), std::nullopt};
  result.design = o.design;
  if (state.n_r() == 0) throw DomainError("no respondents: every y is missing");
  Vector y_sr(state.n_r());
  for (Index i = 0; i < state.n_r(); ++i) y_sr[i] = *d.y[static_cast<std::size_t>(respondents[i])];

  const std::vector<Index> resp_cols = resolve_columns(d.aux_names, o.response_vars);
  const std::vector<Index> model_cols = resolve_columns(d.aux_names, o.model_vars);
  for (Index c : resp_cols) result.response_vars.push_back(d.aux_names[static_cast<std::size_t>(c)]);
  for (Index c : model_cols) result.model_vars.push_back(d.aux_names[static_cast<std::size_t>(c)]);
  const Matrix aux_sr = select_rows(d.aux, respondents);

  // Population-level auxiliary information, in the sample's column order.
  std::optional<Matrix> pop_aux;
  std::optional<Vector> aux_totals;
  if (!o.population.empty()) {
    std::ifstream in = open_input(o.population);
    const AuxTable table = parse_aux_table(in);
    Matrix m(table.values.rows(), p);
    for (Index j = 0; j < p; ++j) {
      bool found = false;
      for (std::size_t c = 0; c < table.names.size(); ++c) {
        if (table.names[c] == d.aux_names[static_cast<std::size_t>(j)]) {
          m.col(j) = table.values.col(static_cast<Index>(c));
          found = true;
        }
      }
      if (!found) throw SchemaError("population file lacks column '" + d.aux_names[static_cast<std::size_t>(j)] + "'");
    }
    aux_totals = compensated_colwise_sum(m);
    merge_population_size(&n_units, static_cast<double>(m.rows()), "population file");
    pop_aux = std::move(m);
  } else if (!o.totals.empty()) {
    std::ifstream in = open_input(o.totals);
    const Totals t = parse_totals(in);
    Vector v(p);
    for (Index j = 0; j < p; ++j) {
      bool found = false;
      for (std::size_t c = 0; c < t.names.size(); ++c) {
        if (t.names[c] == d.aux_names[static_cast<std::size_t>(j)]) {
          v[j] = t.values[static_cast<Index>(c)];
          found = true;
        }
      }
      if (!found) throw SchemaError("totals file lacks column '" + d.aux_names[static_cast<std::size_t>(j)] + "'");
    }
    aux_totals = v;
    if (t.n_units) merge_population_size(&n_units, *t.n_units, "totals file");
  }

  // Working model on the respondents.
  WorkingModelSpec spec;
  spec.kind = parse_model(o.model);
  spec.features = FeatureMap{model_cols, o.intercept};
  spec.k_neighbors = o.k_neighbors;
  spec.poly_order = o.poly_order;
  spec.kernel = parse_kernel(o.kernel);
  const WorkingModelFit model = fit_working_model(spec, state, aux_sr, y_sr);

  auto population_prediction_total = [&]() -> double {
    if (pop_aux) return compensated_sum(predict_all(model, *pop_aux));
    if (o.sample_level) return compensated_sum(predict_all(model, d.aux).cwiseQuotient(d.pi));
    if (const auto* g = std::get_if<GregFit>(&model); g && aux_totals) {
      if (g->features.intercept && !n_units) throw ConfigurationError("an intercept needs the population size N");
      return g->features.apply_totals(*aux_totals, n_units ? static_cast<Index>(*n_units) : 0).dot(g->coeff);
    }
    throw ConfigurationError("the population total of m_r needs --population or --sample-level");
  };
  auto require_totals = [&]() -> const Vector& {
    if (!aux_totals) {
      throw ConfigurationError("calibration needs population totals: pass --totals or --population");
    }
    return *aux_totals;
  };

  // Response model.
  Vector p_hat;
  result.response_method = o.response_method;
  const Matrix x_sr = FeatureMap{resp_cols, false}.apply(aux_sr);
  if (o.response_method == "none") {
    if (state.n_r() != n) throw ConfigurationError("response method 'none' requires every y to be present");
    p_hat = Vector::Ones(n);
  } else if (o.response_method == "calibration") {
    const Vector t = FeatureMap{resp_cols, false}.apply_row(require_totals().transpose()).transpose();
    result.response = fit_calibration(state, t, x_sr);
  } else if (o.response_method == "gencal") {
    const std::vector<std::string> z_names = split_list(o.calib_vars);
    if (z_names.empty()) throw UsageError("gencal needs --calib-vars");
    Matrix z_sr(state.n_r(), static_cast<Index>(z_names.size()));
    Vector z_totals(static_cast<Index>(z_names.size()));
    for (std::size_t j = 0; j < z_names.size(); ++j) {
      const auto col = static_cast<Index>(j);
      if (z_names[j] == "mhat") {
        if (std::holds_alternative<NoModel>(model)) throw UsageError("'mhat' needs a working model");
        z_sr.col(col) = predict_all(model, aux_sr);
        z_totals[col] = population_prediction_total();
      } else {
        const Index c = column_of(d.aux_names, z_names[j]);
        z_sr.col(col) = aux_sr.col(c);
        z_totals[col] = require_totals()[c];
      }
    }
    result.response = fit_generalized_calibration(state, z_totals, z_sr, x_sr);
  } else if (o.response_method == "mle") {
    MleWeights w = MleWeights::kUnit;
    if (o.mle_weights == "inverse-pi") {
      w = MleWeights::kInversePi;
    } else if (o.mle_weights != "unit") {
      throw UsageError("--mle-weights must be 'unit' or 'inverse-pi'");
    }
    result.response = fit_mle(state, FeatureMap{resp_cols, false}.apply(d.aux), state.response_indicator(), w);
  } else {
    throw UsageError("unknown response method '" + o.response_method + "'");
  }
  if (result.response) p_hat = result.response->p_hat;

  // Point estimate and weights.
  if (std::holds_alternative<NoModel>(model)) {
    result.report = nwa(state, y_sr, p_hat);
  } else if (o.sample_level) {
    result.report = nwa_model_assisted_sample_level(d.aux, state, model, p_hat, y_sr);
  } else if (pop_aux) {
    result.report = nwa_model_assisted(*pop_aux, aux_sr, state, model, p_hat, y_sr);
  } else if (const auto* g = std::get_if<GregFit>(&model); g && aux_totals) {
    if (g->features.intercept && !n_units) throw ConfigurationError("an intercept needs the population size N");
    result.report = greg_model_assisted_from_totals(*aux_totals, n_units ? static_cast<Index>(*n_units) : 0, state,
                                                    *g, p_hat, y_sr);
  } else {
    throw ConfigurationError(std::string(to_string(spec.kind)) +
                             " needs population unit data: pass --population or --sample-level");
  }

  if (o.variance) result.variance = nwa_ma_variance_estimate(state, model, aux_sr, x_sr, p_hat, y_sr);
  return result;
}

std::string estimate_json(const EstimateOutcome& r) {
  json j;
  j["estimator"] = to_string(r.report.kind);
  j["estimate"] = r.report.estimate;
  j["n"] = r.report.n;
  j["n_r"] = r.report.n_r;
  j["design"] = r.design;
  j["lambda_hat"] = r.response ? vector_json(r.response->lambda_hat) : json::array();
  json resp;
  resp["method"] = r.response_method;
  resp["variables"] = r.response_vars;
  if (r.response) {
    resp["lambda_hat"] = vector_json(r.response->lambda_hat);
    resp["iterations"] = r.response->solver.iterations;
    resp["converged"] = r.response->solver.converged;
    resp["residual_norm"] = r.response->solver.residual_norm;
    resp["warnings"] = r.response->solver.warnings;
  } else {
    resp["lambda_hat"] = json::array();
  }
  j["response"] = resp;
  j["model_variables"] = r.model_vars;
  j["tags"] = r.report.tags;
  if (r.variance) {
    j["variance"] = r.variance->total_var;
    j["components"] = {{"sampling", r.variance->sampling_component},
                       {"nonresponse", r.variance->nonresponse_component},
                       {"floored", r.variance->floored}};
  }
  json w = json::array();
  if (r.report.weights) {
    Index i = 0;
    for (std::size_t k = 0; k < r.data.y.size(); ++k) {
      if (!r.data.y[k]) continue;
      w.push_back({{"id", r.data.ids[k]}, {"w", (*r.report.weights)[i++]}});
    }
  }
  j["weights"] = w;
  return j.dump(2) + "\n";
}

std::string weights_csv(const EstimateOutcome& r) {
  std::string out = "id,w\n";
  Index i = 0;
  for (std::size_t k = 0; k < r.data.y.size(); ++k) {
    if (!r.data.y[k]) continue;
    out += fmt::format("{},{:.17g}\n", r.data.ids[k], (*r.report.weights)[i++]);
  }
  return out;
}

void add_estimate_flags(CLI::App* cmd, EstimateOptions& o) {
  cmd->add_option("--input", o.input, "sample CSV (columns id?, y, pi, auxiliaries)")->required();
  cmd->add_option("--design", o.design, "generic | srswor:N");
  cmd->add_option("--response-method", o.response_method, "calibration | gencal | mle | none")
      ->check(CLI::IsMember({"calibration", "gencal", "mle", "none"}));
  cmd->add_option("--mle-weights", o.mle_weights, "unit | inverse-pi")->check(CLI::IsMember({"unit", "inverse-pi"}));
  cmd->add_option("--model", o.model, "greg | knn | localpoly | none")
      ->check(CLI::IsMember({"greg", "knn", "localpoly", "none"}));
  cmd->add_option("--k", o.k_neighbors, "neighbours for knn")->check(CLI::PositiveNumber);
  cmd->add_option("--poly-order", o.poly_order, "local polynomial order")->check(CLI::NonNegativeNumber);
  cmd->add_option("--kernel", o.kernel, "gaussian | epanechnikov | uniform")
      ->check(CLI::IsMember({"gaussian", "epanechnikov", "uniform"}));
  cmd->add_option("--response-vars", o.response_vars, "comma list; default all auxiliaries");
  cmd->add_option("--model-vars", o.model_vars, "comma list; default all auxiliaries");
  cmd->add_option("--calib-vars", o.calib_vars, "gencal calibration variables; 'mhat' adds m_r(x)");
  cmd->add_flag("--intercept", o.intercept, "add an intercept to the GREG model");
  cmd->add_option("--totals", o.totals, "CSV with one row of population totals (optional column N)");
  cmd->add_option("--population", o.population, "CSV with the auxiliaries of every population unit");
  cmd->add_flag("--sample-level", o.sample_level, "sum m_r(x)/pi over the sample instead of m_r(x) over U");
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateOptions {
  int scenario = 0;
  std::string model = "greg";
  Index k_neighbors = 5;
  Index replicates = 2000;
  std::uint64_t seed = 1;
  std::uint64_t population_seed = 1;
  Index population_size = 1000;
  Index sample_size = 200;
  bool no_intercept = false;
  bool variance = false;
  bool bridge = false;
  int workers = 0;
  std::string format = "table";
  std::string out;
};

int run_simulate(const SimulateOptions& o, std::ostream& out, std::ostream& err) {
  PopulationSpec ps;
  ps.seed = o.population_seed;
  ps.n_units = o.population_size;
  const Population pop = generate_population(ps);

  ScenarioConfig cfg;
  cfg.scenario = o.scenario;
  cfg.model = parse_model(o.model);
  cfg.k_neighbors = o.k_neighbors;
  cfg.replicates = o.replicates;
  cfg.seed = o.seed;
  cfg.sample_size = o.sample_size;
  cfg.model_intercept = !o.no_intercept;
  cfg.compute_variance = o.variance;
  cfg.compute_bridge = o.bridge;
  cfg.workers = o.workers;
  const StudyResult r = run_study(cfg, pop);

  if (r.failure_rate_exceeded()) {
    json extra;
    json counts;
    for (const auto& e : r.estimators) counts[e.name] = e.failures;
    extra["failures"] = counts;
    extra["replicates"] = r.config.replicates;
    extra["examples"] = r.failure_messages;
    report_error(err, "failure_rate", "more than 1% of replicates failed", extra);
    return 3;
  }
  std::string text;
  if (o.format == "json") {
    text = study_to_json(r);
  } else if (o.format == "csv") {
    text = study_to_csv(r);
  } else {
    text = study_to_table(r);
  }
  emit(text, o.out, out);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nonresponse-weighting-adjusted model-assisted estimation of finite-population totals", "nwa"};
  app.require_subcommand(1);

  SimulateOptions sim;
  CLI::App* simulate = app.add_subcommand("simulate", "run the Monte Carlo study for one scenario");
  simulate->add_option("--scenario", sim.scenario, "1-4")->required()->check(CLI::Range(1, 4));
  simulate->add_option("--model", sim.model, "greg | localpoly | knn")
      ->check(CLI::IsMember({"greg", "localpoly", "knn"}));
  simulate->add_option("--k", sim.k_neighbors, "neighbours for knn")->check(CLI::PositiveNumber);
  simulate->add_option("--replicates", sim.replicates)->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "master seed of the replicate streams");
  simulate->add_option("--population-seed", sim.population_seed);
  simulate->add_option("--population-size", sim.population_size)->check(CLI::Range(Index{2}, Index{10000000}));
  simulate->add_option("--sample-size", sim.sample_size)->check(CLI::PositiveNumber);
  simulate->add_flag("--no-intercept", sim.no_intercept, "working model without intercept");
  simulate->add_flag("--variance", sim.variance, "average the variance estimators");
  simulate->add_flag("--bridge", sim.bridge, "population-fit bridge diagnostics");
  simulate->add_option("--workers", sim.workers, "worker threads (default NWA_WORKERS or all cores)")
      ->check(CLI::NonNegativeNumber);
  simulate->add_option("--format", sim.format)->check(CLI::IsMember({"json", "table", "csv"}));
  simulate->add_option("--out", sim.out, "output file (default stdout)");

  EstimateOptions est;
  CLI::App* estimate = app.add_subcommand("estimate", "estimate a total from a sample file");
  add_estimate_flags(estimate, est);
  estimate->add_flag("--variance", est.variance, "add the variance estimate and its components");
  estimate->add_option("--out", est.out, "output JSON file (default stdout)");

  EstimateOptions wts;
  CLI::App* weights = app.add_subcommand("weights", "export per-respondent weights");
  add_estimate_flags(weights, wts);
  weights->add_option("--out", wts.out, "output CSV file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return 2;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim, out, err);
    if (estimate->parsed()) {
      const EstimateOutcome r = run_estimate(est);
      emit(estimate_json(r), est.out, out);
      return 0;
    }
    const EstimateOutcome r = run_estimate(wts);
    emit(weights_csv(r), wts.out, out);
    return 0;
  } catch (const UsageError& e) {
    report_error(err, "usage", e.what());
    return 2;
  } catch (const SchemaError& e) {
    json extra;
    if (e.row() > 0) extra["row"] = e.row();
    report_error(err, e.kind(), e.what(), extra);
    return 1;
  } catch (const NonconvergenceError& e) {
    report_error(err, e.kind(), e.what(),
                 {{"iterations", e.iterations()},
                  {"best_residual", e.best_residual()},
                  {"best_iterate", vector_json(e.best_iterate())}});
    return 1;
  } catch (const Error& e) {
    report_error(err, e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return 1;
  }
}

}  // namespace nwa::cli
