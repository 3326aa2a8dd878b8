#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "pennma/selection.hpp"
#include "pennma/simulator.hpp"

using namespace pennma;

namespace {

struct Small
{
    SimulatedData sim;
    PeriodGrid grid;
    PenalizedProblem problem;
};

Small small_problem(const std::string& scenario, double tau, int tpe, std::uint64_t seed, Heterogeneity het,
                    std::size_t periods = 3)
{
    auto spec = ScenarioSpec::preset(scenario, tau, tpe);
    Small s{simulate_dataset(spec, seed), {}, {}};
    s.grid = choose_boundaries(s.sim.dataset, periods, BoundaryStrategy::event_quantiles);
    ModelConfig m;
    m.heterogeneity = het;
    s.problem = prepare_problem(s.sim.dataset, s.grid, m, CollapseMode::always);
    return s;
}

}  // namespace

TEST_SUITE("selection")
{
TEST_CASE("tau and lambda are inverse")
{
    for (double tau : {0.1, 0.2, 0.3, 0.4, 0.5}) CHECK(tau_from_lambda(lambda_from_tau(tau)) == tau);
    CHECK(tau_from_lambda(25.0) == 0.2);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 5.0);
    for (int i = 0; i < 1000; ++i) {
        const double t = u(rng);
        CHECK(std::abs(tau_from_lambda(lambda_from_tau(t)) - t) <= 4 * std::numeric_limits<double>::epsilon() * t);
    }
    CHECK_THROWS(tau_from_lambda(0.0));
    CHECK_THROWS(lambda_from_tau(-1.0));
}

TEST_CASE("calibrated lambdas satisfy the fixed point")
{
    const auto s = small_problem("S1", 0.3, 3, 2, Heterogeneity::per_contrast);
    const auto lasso = s.problem.lasso_indices();
    std::vector<bool> fixed(static_cast<std::size_t>(s.problem.cols()), false);
    for (auto j : lasso) fixed[static_cast<std::size_t>(j)] = true;
    SelectionOptions opts;
    const auto c = calibrate_ridge(s.problem, Eigen::VectorXd::Zero(s.problem.cols()), fixed, {}, std::nullopt, opts);
    REQUIRE(c.state.lambdas.size() == s.problem.ridge_groups.size());
    if (c.state.converged) {
        for (std::size_t g = 0; g < c.state.lambdas.size(); ++g) {
            const double lam = c.state.lambdas[g];
            CHECK(lam > 0.0);
            CHECK(lam <= opts.lambda_cap);
            CHECK(c.state.df[g] >= 0.0);
            CHECK(c.state.df[g] <= double(s.problem.ridge_groups[g].members.size()));
            if (lam < opts.lambda_cap) {
                CHECK(std::abs(lam - c.state.df[g] / c.state.sum_squares[g]) / lam < opts.calibration_tol);
            }
        }
    } else {
        CHECK(c.state.iterations == opts.calibration_max_iter);
    }
}

TEST_CASE("no treatment heterogeneity drives tau towards zero")
{
    const auto s = small_problem("S1", 0.0, 3, 4, Heterogeneity::common);
    std::vector<bool> fixed(static_cast<std::size_t>(s.problem.cols()), false);
    for (auto j : s.problem.lasso_indices()) fixed[static_cast<std::size_t>(j)] = true;
    SelectionOptions opts;
    opts.calibration_max_iter = 200;
    const auto c = calibrate_ridge(s.problem, Eigen::VectorXd::Zero(s.problem.cols()), fixed, {}, std::nullopt, opts);
    REQUIRE(c.state.lambdas.size() == 2);
    CHECK(tau_from_lambda(c.state.lambdas[1]) < 0.05);
}

TEST_CASE("adaptive weights")
{
    const auto s = small_problem("S4", 0.1, 2, 6, Heterogeneity::per_contrast);
    SelectionOptions opts;
    const auto w = adaptive_weights(s.problem, opts);
    for (auto j : s.problem.lasso_indices()) {
        const double a = std::abs(w.unpenalized(j));
        CHECK(w.rho(j) > 0.0);
        CHECK(w.rho(j) <= opts.rho_cap);
        CHECK(w.rho(j) == (a > 0 ? std::min(1.0 / a, opts.rho_cap) : opts.rho_cap));
    }
    // lambda_max is the KKT bound at zero
    double bound = 0.0;
    for (auto j : s.problem.lasso_indices()) bound = std::max(bound, std::abs(w.null_gradient(j)) / w.rho(j));
    CHECK(w.lambda_max == bound);

    // row permutation of the problem leaves the weights unchanged
    PenalizedProblem perm = s.problem;
    const Eigen::Index n = perm.rows();
    Eigen::VectorXi idx(n);
    for (Eigen::Index i = 0; i < n; ++i) idx(i) = static_cast<int>(n - 1 - i);
    Eigen::PermutationMatrix<Eigen::Dynamic> P(idx);
    perm.X = P * s.problem.X;
    perm.y = P * s.problem.y;
    perm.offset = P * s.problem.offset;
    const auto w2 = adaptive_weights(perm, opts);
    for (auto j : s.problem.lasso_indices()) CHECK(w2.rho(j) == doctest::Approx(w.rho(j)).epsilon(1e-5));
}

TEST_CASE("default grid")
{
    SelectionOptions opts;
    const auto g = default_grid(2.0, opts);
    REQUIRE(g.size() == 30);
    CHECK(g.front() == 2.0);
    CHECK(g.back() == doctest::Approx(2e-3).epsilon(1e-12));
    for (std::size_t i = 1; i < g.size(); ++i) {
        CHECK(g[i] < g[i - 1]);
        CHECK(g[i] / g[i - 1] == doctest::Approx(std::pow(1e-3, 1.0 / 29.0)).epsilon(1e-12));
    }
}

TEST_CASE("path endpoints")
{
    const auto s = small_problem("S3", 0.1, 2, 8, Heterogeneity::per_contrast);
    SelectionOptions opts;
    const auto w = adaptive_weights(s.problem, opts);
    const double gmax = [&] {
        double m = 0;
        for (auto j : s.problem.lasso_indices()) m = std::max(m, std::abs(w.null_gradient(j)));
        return m;
    }();
    const double eps = opts.weight_epsilon * gmax;
    const auto path = lasso_path(s.problem, w, {w.lambda_max * 1.5, eps / w.rho.maxCoeff()}, opts);
    CHECK(path[0].support.empty());
    std::vector<Eigen::Index> expected;
    for (auto j : s.problem.lasso_indices()) {
        if (std::abs(w.unpenalized(j)) > 1e-6) expected.push_back(j);
    }
    for (auto j : expected) CHECK(std::find(path[1].support.begin(), path[1].support.end(), j) != path[1].support.end());
    CHECK_THROWS_AS(lasso_path(s.problem, w, {1.0, 2.0}, opts), ConfigError);
}

TEST_CASE("two-step BIC")
{
    const auto s = small_problem("S3", 0.1, 2, 10, Heterogeneity::per_contrast);
    SelectionOptions opts;
    const auto w = adaptive_weights(s.problem, opts);
    auto grid = default_grid(w.lambda_max, opts);
    grid.resize(12);
    const auto path = lasso_path(s.problem, w, grid, opts);

    SUBCASE("single-support path")
    {
        const std::vector<PathPoint> one{path.front()};
        const auto rep = two_step_bic(one, s.problem, opts);
        CHECK(rep.candidates.size() == 1);
        CHECK(rep.chosen_index == 0);
        CHECK(rep.selected.empty());
    }
    SUBCASE("minimum BIC with deduplicated supports")
    {
        const auto rep = two_step_bic(path, s.problem, opts);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : rep.candidates) {
            if (c.ok) best = std::min(best, c.bic);
        }
        CHECK(rep.chosen().bic == best);
        for (std::size_t a = 0; a < rep.candidates.size(); ++a) {
            for (std::size_t b = a + 1; b < rep.candidates.size(); ++b) CHECK(rep.candidates[a].support != rep.candidates[b].support);
        }
        for (const auto& c : rep.candidates) {
            if (!c.ok) continue;
            CHECK(c.bic == doctest::Approx(-2.0 * c.loglik + c.df * std::log(double(s.problem.n_obs))).epsilon(1e-12));
        }
        // a duplicated grid point does not change the choice
        auto dup = path;
        dup.insert(dup.begin() + 3, path[3]);
        const auto rep2 = two_step_bic(dup, s.problem, opts);
        CHECK(rep2.selected == rep.selected);
        CHECK(rep2.chosen().bic == rep.chosen().bic);
        // refits are L1-free: off-support lasso coefficients are exactly zero
        for (auto j : s.problem.lasso_indices()) {
            const bool on = std::find(rep.chosen().support.begin(), rep.chosen().support.end(), j) != rep.chosen().support.end();
            if (!on) CHECK(rep.estimates(j) == 0.0);
        }
    }
}

TEST_CASE("BIC of an unpenalized problem is textbook")
{
    std::mt19937_64 rng(12);
    const auto d = fixtures::random_poisson(80, 4, rng);
    PenalizedProblem prob;
    prob.X = d.X;
    prob.y = d.y;
    prob.offset = d.offset;
    prob.n_obs = 80;
    for (int j = 0; j < 4; ++j) prob.coefficients.push_back({"b" + std::to_string(j), Role::mean_treatment, PenaltyKind::none});
    PathPoint pt;
    pt.lambda = 1.0;
    const auto rep = two_step_bic({pt}, prob, SelectionOptions{});
    const auto& c = rep.chosen();
    CHECK(c.df == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(c.bic == doctest::Approx(-2.0 * c.loglik + 4.0 * std::log(80.0)).epsilon(1e-12));
}

TEST_CASE("strong signal beats the null support")
{
    auto spec = ScenarioSpec::preset("S3", 0.1, 3);
    spec.delta = {0.0, std::log(2.0)};
    spec.alpha[{1, "B"}] = std::log(2.0);
    spec.alpha[{1, "D"}] = std::log(2.0);
    const auto sim = simulate_dataset(spec, 21);
    const auto grid = choose_boundaries(sim.dataset, 3, BoundaryStrategy::event_quantiles);
    const auto prob = prepare_problem(sim.dataset, grid, ModelConfig{}, CollapseMode::always);
    SelectionOptions opts;
    std::vector<Eigen::Index> signal;
    for (const auto& name : {"delta[z2]", "alpha[z2:B]", "alpha[z2:D]"}) signal.push_back(prob.find(name));
    std::sort(signal.begin(), signal.end());
    const auto bic_of = [&](const std::vector<Eigen::Index>& support) {
        const auto r = refit_support(prob, support, {}, std::nullopt, opts);
        const double df = hat_diagonal<double>(r.fit, prob, r.penalty).sum();
        return -2.0 * r.fit.loglik + df * std::log(double(prob.n_obs));
    };
    CHECK(bic_of(signal) < bic_of({}));
}

TEST_CASE("pipelines")
{
    const auto sim = simulate_dataset(ScenarioSpec::preset("S1", 0.1, 2), 30);
    PipelineConfig pc;
    pc.periods = 3;
    pc.collapse = CollapseMode::when_categorical;
    pc.selection.grid_points = 10;

    const auto het = run_het_adlasso(sim.dataset, pc, {});
    CHECK(het.report.method == "het");
    CHECK(het.report.tau_hat.size() == 4);
    CHECK(het.report.sigma_hat.has_value());
    // consistency identity for the reconstructed HR of C vs B
    const auto& th = het.report.estimates;
    CHECK(log_hazard_ratio(het.problem, th, 2, 1) == th(het.problem.find("beta[C]")) - th(het.problem.find("beta[B]")));

    const auto fx = run_fx_adlasso(sim.dataset, pc, {});
    CHECK(fx.report.method == "fx");
    CHECK(fx.problem.ridge_groups.empty());
    CHECK(fx.report.tau_hat.empty());
    CHECK(!fx.report.sigma_hat.has_value());
    // the fx refit is a plain fixed-support Poisson fit
    const auto direct = refit_support(fx.problem, fx.report.chosen().support, {}, std::nullopt, pc.selection);
    CHECK(direct.state.iterations == 1);
    CHECK((direct.fit.theta - fx.report.estimates).cwiseAbs().maxCoeff() < 1e-8);

    // collapsing does not change the selected model
    pc.collapse = CollapseMode::never;
    const auto fx_full = run_fx_adlasso(sim.dataset, pc, {});
    CHECK(fx_full.report.selected == fx.report.selected);
    CHECK((fx_full.report.estimates - fx.report.estimates).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("stage errors carry the stage name")
{
    const auto sim = simulate_dataset(ScenarioSpec::preset("S1", 0.1, 1), 3);
    PipelineConfig pc;
    pc.periods = 100000;
    try {
        run_fx_adlasso(sim.dataset, pc, {});
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).rfind("boundaries:", 0) == 0);
    }
}

TEST_CASE("selection ignores the scale of a continuous covariate")
{
    auto spec = ScenarioSpec::preset("S1", 0.1, 2);
    auto sim = simulate_dataset(spec, 40);
    // replace z1 by a continuous covariate carrying a real effect
    std::mt19937_64 rng(9);
    std::normal_distribution<double> norm(0.0, 1.0);
    auto schema = sim.dataset.schema;
    schema.covariates[0].kind = CovariateKind::continuous;
    auto records = sim.dataset.records;
    std::vector<double> x;
    for (auto& r : records) {
        x.push_back(norm(rng));
        r.covariates[0] = format_double(x.back());
    }
    const auto ds1 = make_dataset(records, schema);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].covariates[0] = format_double(x[i] * 10.0);
    const auto ds2 = make_dataset(records, schema);

    PipelineConfig pc;
    pc.periods = 3;
    pc.selection.grid_points = 8;
    const auto r1 = run_fx_adlasso(ds1, pc, {});
    const auto r2 = run_fx_adlasso(ds2, pc, {});
    CHECK(r1.report.selected == r2.report.selected);
    const auto j = r1.problem.find("delta[z1]");
    if (std::find(r1.report.selected.begin(), r1.report.selected.end(), "delta[z1]") != r1.report.selected.end()) {
        CHECK(r2.report.estimates(j) == doctest::Approx(r1.report.estimates(j) / 10.0).epsilon(1e-4));
    }
}

TEST_CASE("bootstrap")
{
    const auto sim = simulate_dataset(ScenarioSpec::preset("S3", 0.1, 2), 50);
    const auto grid = choose_boundaries(sim.dataset, 3, BoundaryStrategy::event_quantiles);
    ModelConfig model;
    model.heterogeneity = Heterogeneity::none;
    const auto prob = prepare_problem(sim.dataset, grid, model, CollapseMode::always);
    SelectionOptions opts;
    const std::vector<std::string> support{"delta[z2]"};
    std::vector<Eigen::Index> sup{prob.find("delta[z2]")};
    const auto base = refit_support(prob, sup, {}, std::nullopt, opts);
    std::vector<std::string> theta_names;
    Eigen::VectorXd est(static_cast<Eigen::Index>(prob.theta_indices().size()));
    for (auto j : prob.theta_indices()) {
        est(static_cast<Eigen::Index>(theta_names.size())) = base.fit.theta(j);
        theta_names.push_back(prob.coefficients[static_cast<std::size_t>(j)].name);
    }

    const auto a = bootstrap_ci(sim.dataset, grid, model, CollapseMode::always, support, theta_names, est, {}, 2, 77, opts, 1);
    const auto b = bootstrap_ci(sim.dataset, grid, model, CollapseMode::always, support, theta_names, est, {}, 2, 77, opts, 2);
    CHECK(a.requested == 2);
    CHECK(a.succeeded == 2);
    CHECK(a.draws == b.draws);
    for (std::size_t k = 0; k < a.intervals.size(); ++k) {
        const auto& iv = a.intervals[k];
        CHECK(iv.lower == b.intervals[k].lower);
        CHECK(iv.upper == b.intervals[k].upper);
        CHECK(iv.lower <= iv.upper);
        if (iv.name == "omega[B:C]" || iv.name == "alpha[z1:B]") {
            CHECK(iv.fixed_zero);
            CHECK(iv.lower == 0.0);
            CHECK(iv.upper == 0.0);
        }
    }
    CHECK_THROWS_AS(bootstrap_ci(sim.dataset, grid, model, CollapseMode::always, support, theta_names, est, {}, 1, 77, opts),
                    ConfigError);

    // strata are preserved by resampling
    const auto rs = resample_dataset(sim.dataset, 1, 0);
    CHECK(rs.records.size() == sim.dataset.records.size());
    for (std::size_t t = 0; t < rs.trials.size(); ++t) {
        for (std::size_t k = 0; k < rs.trials[t].arms.size(); ++k) {
            CHECK(rs.trials[t].arms[k].patients == sim.dataset.trials[t].arms[k].patients);
        }
    }
    CHECK(quantile_sorted({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
}
}
