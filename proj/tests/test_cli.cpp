#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <fmt/format.h>
#include <json.hpp>

#include "nwa/cli.hpp"
#include "nwa/estimators.hpp"
#include "nwa/population.hpp"
#include "nwa/response.hpp"
#include "nwa/rng.hpp"

using namespace nwa;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nwa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / fmt::format("nwa_cli_test_{}", static_cast<long>(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string write_file(const std::string& name, const std::string& text) {
  const fs::path p = scratch_dir() / name;
  std::ofstream(p) << text;
  return p.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_single_error_line(const Outcome& o, const std::string& kind) {
  CHECK(o.out.empty());
  REQUIRE_FALSE(o.err.empty());
  CHECK(std::count(o.err.begin(), o.err.end(), '\n') == 1);
  const json j = json::parse(o.err);
  CHECK(j["error"] == kind);
  CHECK(j.contains("message"));
}

// Sampled data of one simulated replicate, written in the CLI's file format.
struct SimulatedFiles {
  Population pop;
  SampleState state;
  std::string sample_csv;
  std::string population_csv;
  std::string totals_csv;
};

SimulatedFiles simulated(std::uint64_t seed) {
  Population pop = generate_population(PopulationSpec{.seed = seed});
  RngStream rng(seed + 1);
  SampleState s = poisson_response(pop, srswor_sample(pop, 200, rng), rng);
  std::string sample = "id,x1,x2,x3,x4,y,pi\n";
  std::size_t r = 0;
  for (Index unit : s.sample) {
    const bool responded = r < s.respondents.size() && s.respondents[r] == unit;
    if (responded) ++r;
    const auto row = pop.aux().row(unit);
    sample += fmt::format("u{},{:.17g},{:.17g},{:.17g},{:.17g},{},{:.17g}\n", unit, row[0], row[1], row[2], row[3],
                          responded ? fmt::format("{:.17g}", pop.outcome()[unit]) : "", s.design.first(unit));
  }
  std::string population = "x1,x2,x3,x4\n";
  for (Index k = 0; k < pop.n_units(); ++k) {
    const auto row = pop.aux().row(k);
    population += fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", row[0], row[1], row[2], row[3]);
  }
  const Vector t = pop.aux_totals();
  const std::string totals = fmt::format("x1,x2,x3,x4,N\n{:.17g},{:.17g},{:.17g},{:.17g},{}\n", t[0], t[1], t[2],
                                         t[3], pop.n_units());
  const std::string tag = std::to_string(seed);
  return SimulatedFiles{pop, s, write_file("sample" + tag + ".csv", sample),
                        write_file("population" + tag + ".csv", population),
                        write_file("totals" + tag + ".csv", totals)};
}

std::vector<std::pair<std::string, double>> parse_weights(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "id,w");
  std::vector<std::pair<std::string, double>> out;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    out.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
  }
  return out;
}

}  // namespace

TEST_CASE("cli estimate: three rows, full response, pi = 1") {
  const std::string f = write_file("three.csv", "id,y,pi,x1\na,1.5,1,2\nb,2,1,3\nc,4,1,1\n");
  const Outcome o = run_cli({"estimate", "--input", f, "--model", "none", "--response-method", "none"});
  REQUIRE(o.code == 0);
  const json j = json::parse(o.out);
  CHECK(j["estimate"].get<double>() == 7.5);
  CHECK(j["n_r"] == 3);
  CHECK(j["weights"].size() == 3);
}

TEST_CASE("cli schema errors name the row") {
  SUBCASE("pi = 0") {
    const std::string f = write_file("pi0.csv", "id,y,pi,x1\na,1,0.5,2\nb,2,0,3\nc,4,0.5,1\n");
    const Outcome o = run_cli({"estimate", "--input", f, "--model", "none", "--response-method", "none"});
    CHECK(o.code == 1);
    check_single_error_line(o, "schema");
    CHECK(json::parse(o.err)["row"] == 2);
  }
  SUBCASE("ragged row") {
    const std::string f = write_file("ragged.csv", "id,y,pi,x1\na,1,0.5,2\nb,2,0.5\n");
    const Outcome o = run_cli({"estimate", "--input", f, "--model", "none", "--response-method", "none"});
    CHECK(o.code == 1);
    check_single_error_line(o, "schema");
    CHECK(json::parse(o.err)["row"] == 2);
  }
  SUBCASE("missing auxiliary and bad number") {
    const std::string f = write_file("missingx.csv", "id,y,pi,x1\na,1,0.5,2\nb,2,0.5,\n");
    const Outcome o = run_cli({"estimate", "--input", f, "--model", "none", "--response-method", "none"});
    check_single_error_line(o, "schema");
    CHECK(json::parse(o.err)["row"] == 2);
    const std::string g = write_file("badnum.csv", "id,y,pi,x1\na,1,0.5,2\nb,2,0.5,3\nc,1x,0.5,3\n");
    const Outcome p = run_cli({"estimate", "--input", g, "--model", "none", "--response-method", "none"});
    check_single_error_line(p, "schema");
    CHECK(json::parse(p.err)["row"] == 3);
  }
  SUBCASE("missing pi column") {
    const std::string f = write_file("nopi.csv", "id,y,x1\na,1,2\n");
    const Outcome o = run_cli({"estimate", "--input", f, "--model", "none", "--response-method", "none"});
    check_single_error_line(o, "schema");
  }
}

TEST_CASE("cli usage errors") {
  const Outcome o = run_cli({"simulate", "--scenario", "9", "--replicates", "5"});
  CHECK(o.code == 2);
  check_single_error_line(o, "usage");
  const Outcome p = run_cli({"simulate", "--scenario", "1", "--model", "tree"});
  CHECK(p.code == 2);
  check_single_error_line(p, "usage");
  const Outcome q = run_cli({"frobnicate"});
  CHECK(q.code == 2);
}

TEST_CASE("cli simulate is byte-identical across runs and worker counts") {
  const std::string a = (scratch_dir() / "sim_a.json").string();
  const std::string b = (scratch_dir() / "sim_b.json").string();
  const std::vector<std::string> base{"simulate", "--scenario", "2", "--model", "knn", "--replicates", "40",
                                      "--seed", "7"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
  };
  REQUIRE(with({"--format", "json", "--out", a, "--workers", "1"}).code == 0);
  REQUIRE(with({"--format", "json", "--out", b, "--workers", "3"}).code == 0);
  CHECK(read_file(a) == read_file(b));
  CHECK_FALSE(read_file(a).empty());

  const Outcome t1 = with({"--format", "table"});
  const Outcome t2 = with({"--format", "table"});
  CHECK(t1.out == t2.out);
  CHECK(t1.out.find("t_mr_phat") != std::string::npos);
}

TEST_CASE("cli simulate: failure-rate breach exits 3 without output") {
  // About 50 respondents cannot support K = 150 neighbours.
  const Outcome o = run_cli({"simulate", "--scenario", "1", "--model", "knn", "--k", "150", "--replicates", "5",
                             "--sample-size", "100"});
  CHECK(o.code == 3);
  check_single_error_line(o, "failure_rate");
}

TEST_CASE("cli estimate matches the library") {
  const SimulatedFiles f = simulated(20240601);
  const SampleState& s = f.state;
  const Matrix aux_sr = select_rows(f.pop.aux(), s.respondents);
  const Vector y_sr = select(f.pop.outcome(), s.respondents);
  const FeatureMap resp_map{{0, 1}, false};
  const ResponseFit resp =
      fit_calibration(s, resp_map.apply_totals(f.pop.aux_totals(), f.pop.n_units()), resp_map.apply(aux_sr));

  for (const std::string model : {"greg", "knn", "localpoly"}) {
    WorkingModelSpec spec;
    spec.kind = model == "greg" ? ModelKind::kGreg : model == "knn" ? ModelKind::kKnn : ModelKind::kLocalPoly;
    spec.features = FeatureMap{{0, 1}, model == "greg"};
    const WorkingModelFit fit = fit_working_model(spec, s, aux_sr, y_sr);
    const EstimateReport lib = nwa_model_assisted(f.pop.aux(), s, fit, resp.p_hat, y_sr);

    std::vector<std::string> args{"estimate", "--input", f.sample_csv, "--design", "srswor:1000",
                                  "--response-method", "calibration", "--response-vars", "x1,x2",
                                  "--model", model, "--model-vars", "x1,x2", "--population", f.population_csv};
    if (model == "greg") args.push_back("--intercept");
    const Outcome o = run_cli(args);
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const json j = json::parse(o.out);
    CHECK(std::abs(j["estimate"].get<double>() - lib.estimate) <= 1e-12 * std::abs(lib.estimate));
    CHECK(j["estimator"] == "nwa_model_assisted");
    REQUIRE(j["weights"].size() == static_cast<std::size_t>(s.n_r()));
    for (Index i = 0; i < s.n_r(); ++i) {
      CHECK(j["weights"][static_cast<std::size_t>(i)]["id"] == fmt::format("u{}", s.respondents[static_cast<std::size_t>(i)]));
      CHECK(std::abs(j["weights"][static_cast<std::size_t>(i)]["w"].get<double>() - (*lib.weights)[i]) <=
            1e-12 * std::abs((*lib.weights)[i]) + 1e-12);
    }
    CHECK(std::abs(j["lambda_hat"][0].get<double>() - resp.lambda_hat[0]) <= 1e-12 * std::abs(resp.lambda_hat[0]));
  }
}

TEST_CASE("cli weights: calibration identity, round trip, and model none") {
  const SimulatedFiles f = simulated(7);
  const Vector t = f.pop.aux_totals();
  const std::vector<std::string> common{"--input", f.sample_csv, "--design", "srswor:1000", "--response-method",
                                        "calibration", "--response-vars", "x1,x2", "--totals", f.totals_csv};
  auto cmd = [&](const std::string& sub, std::vector<std::string> extra) {
    std::vector<std::string> args{sub};
    args.insert(args.end(), common.begin(), common.end());
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
  };

  // GREG on all four columns with an intercept: weights reproduce each total.
  const Outcome w = cmd("weights", {"--model", "greg", "--intercept"});
  REQUIRE_MESSAGE(w.code == 0, w.err);
  const auto weights = parse_weights(w.out);
  REQUIRE(weights.size() == f.state.respondents.size());
  Vector reproduced = Vector::Zero(4);
  double count = 0.0, wy = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Index unit = f.state.respondents[i];
    CHECK(weights[i].first == fmt::format("u{}", unit));
    reproduced += weights[i].second * f.pop.aux().row(unit).transpose();
    count += weights[i].second;
    wy += weights[i].second * f.pop.outcome()[unit];
  }
  for (Index j = 0; j < 4; ++j) CHECK(std::abs(reproduced[j] - t[j]) <= 1e-8 * std::abs(t[j]));
  CHECK(std::abs(count - 1000.0) <= 1e-8 * 1000.0);

  const Outcome e = cmd("estimate", {"--model", "greg", "--intercept"});
  REQUIRE(e.code == 0);
  const double estimate = json::parse(e.out)["estimate"].get<double>();
  CHECK(std::abs(wy - estimate) <= 1e-9 * std::abs(estimate));
  CHECK(cmd("weights", {"--model", "greg", "--intercept"}).out == w.out);

  // No working model: w = 1/(pi p_hat).
  const Outcome n = cmd("estimate", {"--model", "none"});
  REQUIRE(n.code == 0);
  const json jn = json::parse(n.out);
  CHECK(jn["estimator"] == "nwa");
  const Vector lambda = Eigen::Map<const Vector>(jn["lambda_hat"].get<std::vector<double>>().data(), 2);
  for (std::size_t i = 0; i < f.state.respondents.size(); ++i) {
    const Index unit = f.state.respondents[i];
    const double p_hat = 1.0 / (1.0 + std::exp(-f.pop.aux().row(unit).head(2).dot(lambda)));
    CHECK(jn["weights"][i]["w"].get<double>() == doctest::Approx(1.0 / (0.2 * p_hat)).epsilon(1e-12));
  }
}

TEST_CASE("cli generalized calibration with m_r collapses to NWA") {
  const SimulatedFiles f = simulated(11);
  const Outcome o = run_cli({"estimate", "--input", f.sample_csv, "--design", "srswor:1000", "--response-method",
                             "gencal", "--response-vars", "x1,x2", "--calib-vars", "x1,mhat", "--model", "greg",
                             "--model-vars", "x1,x2", "--intercept", "--population", f.population_csv});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const json j = json::parse(o.out);
  const Vector lambda = Eigen::Map<const Vector>(j["lambda_hat"].get<std::vector<double>>().data(), 2);
  double plain = 0.0;
  for (Index unit : f.state.respondents) {
    const double p_hat = 1.0 / (1.0 + std::exp(-f.pop.aux().row(unit).head(2).dot(lambda)));
    plain += f.pop.outcome()[unit] / (0.2 * p_hat);
  }
  CHECK(std::abs(j["estimate"].get<double>() - plain) <= 1e-9 * plain);
}

TEST_CASE("cli estimate: variance, mle, sample level") {
  const SimulatedFiles f = simulated(13);
  const Outcome v = run_cli({"estimate", "--input", f.sample_csv, "--design", "srswor:1000", "--response-vars",
                             "x1,x2", "--model-vars", "x1,x2", "--intercept", "--totals", f.totals_csv,
                             "--variance"});
  REQUIRE_MESSAGE(v.code == 0, v.err);
  const json jv = json::parse(v.out);
  CHECK(jv["variance"].get<double>() > 0.0);
  CHECK(jv["components"]["nonresponse"].get<double>() >= 0.0);

  const Outcome m = run_cli({"estimate", "--input", f.sample_csv, "--design", "srswor:1000", "--response-method",
                             "mle", "--response-vars", "x1,x2", "--model", "knn", "--model-vars", "x1,x2",
                             "--sample-level"});
  REQUIRE_MESSAGE(m.code == 0, m.err);
  CHECK(json::parse(m.out)["estimator"] == "nwa_model_assisted_sample_level");
}

TEST_CASE("cli configuration and solver errors") {
  const SimulatedFiles f = simulated(17);
  // Calibration without population totals is an error, never estimated.
  const Outcome a = run_cli({"estimate", "--input", f.sample_csv, "--model", "none"});
  CHECK(a.code == 1);
  check_single_error_line(a, "configuration");

  // Totals far below the respondent sum: no root.
  const std::string tiny = write_file("tiny_totals.csv", "x1,x2,x3,x4\n1,1,1,1\n");
  const Outcome b = run_cli({"estimate", "--input", f.sample_csv, "--design", "srswor:1000", "--model", "none",
                             "--response-vars", "x2", "--totals", tiny});
  CHECK(b.code == 1);
  check_single_error_line(b, "nonconvergence");
  const json jb = json::parse(b.err);
  CHECK(jb.contains("iterations"));
  CHECK(jb["best_iterate"].size() == 1);

  // Design tag inconsistent with pi.
  const Outcome c = run_cli({"estimate", "--input", f.sample_csv, "--design", "srswor:500", "--model", "none",
                             "--totals", f.totals_csv});
  CHECK(c.code == 1);
  check_single_error_line(c, "schema");

  const Outcome d = run_cli({"estimate", "--input", f.sample_csv, "--model", "none", "--response-vars", "x9",
                             "--totals", f.totals_csv});
  CHECK(d.code == 2);
  check_single_error_line(d, "usage");
}
