#include "qsdlab/experiments.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace qsdlab;

namespace {

SweepRow row(double eps, double q) {
  SweepRow r;
  r.epsilon = eps;
  r.one_minus_lambda = q;
  r.lambda = 1.0 - q;
  return r;
}

json ricker_config(std::vector<double> eps, json regions = json::array()) {
  return json{{"model", {{"type", "ricker"}, {"f0", 2.0}}},
              {"kernel", {{"kind", "poisson"}, {"epsilons", std::move(eps)}}},
              {"regions", std::move(regions)}};
}

std::string csv_of(const std::vector<SweepRow>& rows, const std::vector<Region>& regions) {
  std::ostringstream os;
  write_sweep_csv(os, rows, regions);
  return os.str();
}

}  // namespace

TEST(Fit, ExactLogLinearRows) {
  std::vector<SweepRow> rows;
  for (double n = 5; n <= 50; n += 5) rows.push_back(row(1.0 / n, std::exp(-3.0 * n)));
  const auto fit = fit_extinction_exponent(rows);
  EXPECT_NEAR(fit.c_hat, 3.0, 1e-10);
  EXPECT_NEAR(fit.intercept, 0.0, 1e-8);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  EXPECT_EQ(fit.used, 10u);
  EXPECT_FALSE(fit.residual_trend);
}

TEST(Fit, NoisyRowsMatchRegressionOracle) {
  // uniform(-0.05, 0.05) multipliers; the OLS values were computed by numpy.polyfit
  const double noise[] = {0.012509546660466692,  0.039721380096957554, 0.02756856902451936,  -0.027479281000940815,
                          -0.019983371508877457, 0.03735534453962619,  -0.04947346954344253, 0.03212284183827663,
                          0.02970694287520463,   -0.003206504715627924};
  std::vector<SweepRow> rows;
  for (int i = 0; i < 10; ++i) {
    const double n = 5.0 * (i + 1);
    rows.push_back(row(1.0 / n, std::exp(-3.0 * n) * (1 + noise[i])));
  }
  const auto fit = fit_extinction_exponent(rows);
  EXPECT_NEAR(fit.c_hat, 3.000240238006262, 1e-9);
  EXPECT_NEAR(fit.intercept, 0.01402115421324551, 1e-7);
  EXPECT_NEAR(fit.r_squared, 0.9999995306889619, 1e-10);
  EXPECT_NEAR(fit.c_hat, 3.0, 0.3);
}

TEST(Fit, ExcludedRowsAndErrors) {
  std::vector<SweepRow> rows{row(0.2, 0.1), row(0.1, 0.01), row(0.05, 1e-4), row(0.04, 0.0), row(0.025, 1e-8)};
  rows.push_back(row(0.02, 1e-10));
  rows.back().status = "error: boom";
  const auto fit = fit_extinction_exponent(rows);
  EXPECT_EQ(fit.used, 4u);
  EXPECT_EQ(fit.warnings.size(), 2u);
  rows.resize(4);
  EXPECT_THROW(fit_extinction_exponent(rows), DomainError);
}

TEST(Fit, CurvedResidualsAreFlagged) {
  std::vector<SweepRow> rows;
  for (double n = 5; n <= 50; n += 5) rows.push_back(row(1.0 / n, std::exp(-0.5 * n - 0.02 * n * n)));
  const auto fit = fit_extinction_exponent(rows);
  EXPECT_TRUE(fit.residual_trend);
  EXPECT_FALSE(fit.warnings.empty());
}

TEST(Monotone, FractionWithRelativeTolerance) {
  EXPECT_EQ(monotone_fraction({5, 4, 3, 2}, true), 1.0);
  EXPECT_EQ(monotone_fraction({1, 2, 2, 3}, false), 2.0 / 3.0);
  EXPECT_EQ(monotone_fraction({1e-20, 0.5e-20}, true), 1.0);  // relative, so tiny values still count
  EXPECT_EQ(monotone_fraction({1.0, 1.0 - 1e-12}, true), 0.0);
  EXPECT_EQ(monotone_fraction({1.0}, true), 1.0);
}

TEST(Config, RoundTripIsIdentity) {
  for (const auto& e : experiment_catalogue()) {
    std::function<void(const json&)> visit = [&](const json& j) {
      if (j.is_object() && j.contains("model") && j.contains("kernel") && j.at("kernel").is_object()) {
        json block = j;
        if (!block.contains("seed")) block["seed"] = 5;
        const auto c1 = config_from_json(block);
        const json s1 = to_json(c1);
        const auto c2 = config_from_json(s1);
        EXPECT_EQ(to_json(c2), s1) << e.name;
        EXPECT_EQ(config_hash(to_json(c2)), config_hash(s1));
      }
      if (j.is_structured())
        for (const auto& child : j) visit(child);
    };
    visit(e.defaults);
  }
}

TEST(Config, ValidationErrors) {
  EXPECT_THROW(config_from_json(ricker_config({0.1, 0.2})), DomainError);  // not decreasing
  EXPECT_THROW(config_from_json(ricker_config({0.1, 0.1})), DomainError);
  EXPECT_THROW(config_from_json(ricker_config({})), DomainError);
  json j = ricker_config({0.1});
  j["solver"] = {{"method", "fv"}};
  EXPECT_THROW(config_from_json(j), DomainError);  // stochastic without a seed
  j["seed"] = 3;
  EXPECT_NO_THROW(config_from_json(j));
  j["model"]["type"] = "lotka";
  EXPECT_THROW(config_from_json(j), DomainError);
  json m{{"model", {{"type", "neutral"}, {"k", 2}}}, {"kernel", {{"kind", "multinomial"}, {"sites", {5, 3}}}}};
  EXPECT_THROW(config_from_json(m), DomainError);
}

TEST(Config, OverridesAndHash) {
  json cfg = find_experiment("ricker_dichotomy").defaults;
  const auto h0 = config_hash(cfg);
  apply_override(cfg, "dichotomy.metastable_ball_min=0.8");
  EXPECT_EQ(cfg["dichotomy"]["metastable_ball_min"], 0.8);
  EXPECT_NE(config_hash(cfg), h0);
  apply_override(cfg, "dichotomy.extinction_sweep.kernel.epsilons.0=0.04");
  EXPECT_EQ(cfg["dichotomy"]["extinction_sweep"]["kernel"]["epsilons"][0], 0.04);
  apply_override(cfg, "dichotomy.extinction_sweep.name=plain words");
  EXPECT_EQ(cfg["dichotomy"]["extinction_sweep"]["name"], "plain words");
  EXPECT_THROW(apply_override(cfg, "dichotomy.nope.x=1"), DomainError);
  EXPECT_THROW(apply_override(cfg, "no_equals_sign"), DomainError);
  EXPECT_EQ(find_experiment("ricker_dichotomy").defaults.dump(), find_experiment("ricker_dichotomy").defaults.dump());
}

TEST(Config, ShippedExperimentConfigsMatchDefaults) {
  for (const auto& e : experiment_catalogue()) {
    std::ifstream is(std::string(QSDLAB_SOURCE_DIR) + "/configs/experiments/" + e.name + ".json");
    ASSERT_TRUE(is) << e.name;
    EXPECT_EQ(json::parse(is), e.defaults) << e.name;
  }
}

TEST(Sweep, NeutralClosedForms) {
  const json j{{"model", {{"type", "neutral"}, {"k", 2}}}, {"kernel", {{"kind", "multinomial"}, {"sites", {2, 3}}}}};
  const auto rows = run_epsilon_sweep(config_from_json(j));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NEAR(rows[0].lambda, 0.5, 1e-12);
  EXPECT_NEAR(rows[1].lambda, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(rows[1].sites, 3);
  EXPECT_EQ(rows[1].states, 2u);
  EXPECT_TRUE(rows[0].masses.empty());
}

TEST(Sweep, RickerOneMinusLambdaStrictlyDecreasing) {
  const auto rows = run_epsilon_sweep(config_from_json(ricker_config({0.2, 0.1, 0.05, 0.04, 0.025, 0.02})));
  std::vector<double> q;
  for (const auto& r : rows) {
    ASSERT_TRUE(r.ok()) << r.status;
    EXPECT_GT(r.lambda, 0.0);
    EXPECT_LT(r.lambda, 1.0);
    q.push_back(r.one_minus_lambda);
  }
  EXPECT_EQ(monotone_fraction(q, true), 1.0);
}

TEST(Sweep, WarmStartAgreesWithColdStart) {
  json j = ricker_config({0.1, 0.05, 0.025}, json::array({{{"name", "all"}, {"type", "all"}}}));
  const auto warm = run_epsilon_sweep(config_from_json(j));
  j["solver"] = {{"warm_start", false}};
  const auto cold = run_epsilon_sweep(config_from_json(j));
  for (std::size_t i = 0; i < warm.size(); ++i) {
    EXPECT_NEAR(warm[i].lambda, cold[i].lambda, 1e-12);
    EXPECT_NEAR(warm[i].masses[0], 1.0, 1e-12);
  }
}

TEST(Sweep, EmptyRegionsGiveLambdaOnlyColumns) {
  const auto cfg = config_from_json(ricker_config({0.2, 0.1}));
  const auto csv = csv_of(run_epsilon_sweep(cfg), cfg.regions);
  const auto header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header, "epsilon,sites,lambda,one_minus_lambda,residual,iterations,states,mode_x0,status");
  EXPECT_EQ(header.find("mass_"), std::string::npos);
}

TEST(Sweep, RowFailureIsRecordedAndSweepContinues) {
  json j = ricker_config({0.1, 0.01});
  j["lattice"] = {{"max_entries", 2000}};
  const auto rows = run_epsilon_sweep(config_from_json(j));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].ok());
  EXPECT_FALSE(rows[1].ok());
  EXPECT_TRUE(std::isnan(rows[1].lambda));
  const auto csv = csv_of(rows, {});
  EXPECT_NE(csv.find("error"), std::string::npos);
}

TEST(Sweep, CsvHasSeventeenDigits) {
  EXPECT_EQ(fmt17(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(fmt17(2.0 / 3.0)), 2.0 / 3.0);
  EXPECT_EQ(csv_quote("a,b"), "\"a,b\"");
}

TEST(Reproducibility, StochasticSweepIsBitIdentical) {
  json j = ricker_config({0.2, 0.1}, json::array({{{"name", "ball"}, {"type", "ball"}, {"center", {0.7}}, {"radius", 0.2}}}));
  j["solver"] = {{"method", "fv"}, {"particles", 500}, {"steps", 200}, {"burn_in", 20}};
  j["seed"] = 99;
  const auto cfg = config_from_json(j);
  const auto a = csv_of(run_epsilon_sweep(cfg), cfg.regions);
  const auto b = csv_of(run_epsilon_sweep(cfg), cfg.regions);
  EXPECT_EQ(a, b);
  auto cfg2 = cfg;
  cfg2.threads = 3;
  EXPECT_EQ(csv_of(run_epsilon_sweep(cfg2), cfg.regions), a);
  j["seed"] = 100;
  EXPECT_NE(csv_of(run_epsilon_sweep(config_from_json(j)), cfg.regions), a);
}

TEST(Reproducibility, ExperimentVerdictIsBitIdentical) {
  json cfg = experiment_config("qsd_vs_oracle", {"oracle.instances=4", "geometric.samples=2000",
                                                 "estimators.instances.1.solver.particles=500",
                                                 "estimators.instances.1.solver.samples=500"});
  const RunContext ctx;
  const auto a = run_named_experiment("qsd_vs_oracle", cfg, ctx);
  const auto b = run_named_experiment("qsd_vs_oracle", cfg, ctx);
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_EQ(a["config_hash"], config_hash(cfg));
  EXPECT_EQ(a["version"], version_string());
  EXPECT_EQ(a["criteria"].size(), 4u);
}

TEST(Experiments, CatalogueAndCriterionOwnership) {
  const std::vector<std::string> names{"ricker_dichotomy", "leslie_gower",    "host_parasitoid",     "replicator_rps",
                                       "lambda_scaling",   "qsd_vs_oracle",   "chainrec_consistency"};
  EXPECT_EQ(experiment_catalogue().size(), names.size());
  for (const auto& n : names) EXPECT_NO_THROW(find_experiment(n));
  EXPECT_THROW(find_experiment("nope"), DomainError);
  for (int id = 1; id <= 10; ++id) EXPECT_NO_THROW(find_criterion(id)) << id;
  EXPECT_THROW(find_criterion(11), DomainError);
}

TEST(Experiments, BudgetErrorMarksReportPartial) {
  json cfg = experiment_config("lambda_scaling", {"scaling.sweep.lattice={\"max_entries\":10}"});
  const auto r = run_check(find_criterion(3).second, 3, cfg, RunContext{});
  EXPECT_FALSE(r.pass);
  EXPECT_TRUE(r.budget_exceeded);
}

TEST(HostParasitoid, IndicatorMatchesOracle) {
  const auto co = host_parasitoid_indicator(ThompsonParams{1.0, 1.0, 0.8, 0.5});
  EXPECT_EQ(co.y_star, 0.0);
  EXPECT_NEAR(co.value, std::exp(1.0), 1e-14);
  // 40-digit root of exp(-r)((1 + y/(bk))^k - 1) = y
  const auto ex = host_parasitoid_indicator(ThompsonParams{0.5, 2.0, 0.1, 0.5});
  EXPECT_NEAR(ex.y_star, 6.144527504003579584, 1e-12);
  EXPECT_NEAR(ex.value, 0.14812492734465439980, 1e-13);
  EXPECT_THROW(host_parasitoid_indicator(ThompsonParams{1.0, 1.0, 0.8, 1.5}), DomainError);
}

TEST(Oracle, DenseMultinomialRowsAreSubstochastic) {
  const auto m = MapModel::replicator((Mat(3, 3) << 0, -1, 2, 2, 0, -1, -1, 2, 0).finished(), 10.0);
  const auto d = oracle::dense_multinomial(m, 9);
  EXPECT_EQ(d.states.size(), 28u);
  for (Eigen::Index r = 0; r < d.Q.rows(); ++r) {
    EXPECT_GT(d.Q.row(r).sum(), 0.0);
    EXPECT_LT(d.Q.row(r).sum(), 1.0);
  }
}

TEST(RoundCounts, SumsAndFloors) {
  const Vec x = (Vec(3) << 0.34, 0.33, 0.33).finished();
  const auto n = detail::round_counts(x, 0.1, 10);
  EXPECT_EQ(n[0] + n[1] + n[2], 10);
  const auto m = detail::round_counts((Vec(3) << 1.0, 0.0, 0.0).finished(), 0.2, 5, 1);
  EXPECT_EQ(m, (Counts{3, 1, 1}));
  EXPECT_EQ(detail::round_counts((Vec(1) << 0.74).finished(), 0.05), Counts{15});
}
