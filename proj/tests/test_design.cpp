#include "doctest.h"

#include <map>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "pennma/design.hpp"
#include "pennma/simulator.hpp"

using namespace pennma;
using fixtures::record;

namespace {

// T1: A vs B, T2: B vs C (reference arm B), each patient observed over two periods
IpdDataset two_trials()
{
    const auto schema = parse_schema(R"({"reference_treatment": "A", "covariates": {"z": {"kind": "binary"}}})");
    return make_dataset({record("T1", "A", 3.0, 1, {"0"}), record("T1", "B", 0.5, 1, {"1"}), record("T1", "B", 2.0, 0, {"0"}),
                         record("T2", "B", 1.5, 1, {"1"}), record("T2", "C", 2.5, 0, {"1"}), record("T2", "C", 0.2, 1, {"0"}),
                         record("T3", "A", 1.0, 0, {"1"}), record("T3", "C", 2.0, 1, {"0"})},
                        schema);
}

Eigen::VectorXi contrasts(const IpdDataset& ds, const std::string& trial, const std::string& arm)
{
    return treatment_contrasts(ds.trials[static_cast<std::size_t>(ds.trial_index(trial))], arm, ds.network);
}

int rank_of(const Eigen::MatrixXd& m)
{
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    qr.setThreshold(1e-10);
    return static_cast<int>(qr.rank());
}

}  // namespace

TEST_SUITE("design")
{
TEST_CASE("treatment contrasts")
{
    const auto ds = two_trials();
    // network order A, B, C; vector entries for B, C
    CHECK(contrasts(ds, "T1", "B") == Eigen::Vector2i(1, 0));
    CHECK(contrasts(ds, "T1", "A") == Eigen::Vector2i(0, 0));
    CHECK(contrasts(ds, "T2", "C") == Eigen::Vector2i(-1, 1));
    CHECK(contrasts(ds, "T2", "B") == Eigen::Vector2i(0, 0));
    CHECK_THROWS_AS(contrasts(ds, "T1", "C"), ConfigError);
}

TEST_CASE("inconsistency columns")
{
    const auto ds = two_trials();
    REQUIRE(ds.network.reference_loops.size() == 1);
    CHECK(inconsistency_columns(ds.network, contrasts(ds, "T2", "C"))(0) == 1.0);
    CHECK(inconsistency_columns(ds.network, contrasts(ds, "T2", "B"))(0) == 0.0);
    CHECK(inconsistency_columns(ds.network, contrasts(ds, "T1", "B"))(0) == 0.0);
}

TEST_CASE("linear predictor matches the model term by term")
{
    const auto ds = two_trials();
    const PeriodGrid grid{{1.0}};
    const auto table = expand(ds, grid);
    const auto prob = build_problem(table, ds, ModelConfig{});

    // assign a distinct value to every coefficient by name
    std::map<std::string, double> value;
    Eigen::VectorXd theta(prob.cols());
    for (Eigen::Index j = 0; j < prob.cols(); ++j) {
        theta(j) = 0.1 * double(j + 1) * (j % 2 ? -1.0 : 1.0);
        value[prob.coefficients[static_cast<std::size_t>(j)].name] = theta(j);
    }
    auto v = [&](const std::string& n) { return value.count(n) ? value.at(n) : 0.0; };

    const Eigen::VectorXd eta = prob.X * theta;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto& trial = ds.trials[static_cast<std::size_t>(row.trial)];
        const auto trt = treatment_contrasts(trial, ds.network.treatments[static_cast<std::size_t>(row.arm)], ds.network);
        const double z = row.pattern[0];
        const int k = row.period;
        double expected = v("gamma") + v("u[" + trial.trial_id + "]") + v("delta[z]") * z;
        if (k > 0) expected += v("pi[" + std::to_string(k + 1) + "]");
        for (int q = 1; q < 3; ++q) {
            const std::string t = ds.network.treatments[static_cast<std::size_t>(q)];
            const double c = trt(q - 1);
            expected += (v("beta[" + t + "]") + v("v[" + t + ":" + trial.trial_id + "]")) * c;
            expected += v("alpha[z:" + t + "]") * z * c;
            if (k > 0) expected += v("zeta[" + std::to_string(k + 1) + ":" + t + "]") * c;
        }
        expected += v("omega[B:C]") * std::abs(trt(0) * trt(1));
        CHECK(eta(static_cast<Eigen::Index>(r)) == doctest::Approx(expected).epsilon(1e-14));
        CHECK(prob.offset(static_cast<Eigen::Index>(r)) == std::log(row.xi));
        CHECK(prob.y(static_cast<Eigen::Index>(r)) == row.d);
    }
}

TEST_CASE("u columns sum to the intercept")
{
    const auto ds = two_trials();
    const auto prob = build_problem(expand(ds, PeriodGrid{{1.0}}), ds, ModelConfig{});
    const Eigen::MatrixXd x = prob.dense();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(x.rows());
    for (auto j : prob.indices(Role::baseline_deviation)) sum += x.col(j);
    CHECK(sum.isApprox(x.col(prob.find("gamma"))));
}

TEST_CASE("theta column count on the simulated network")
{
    const auto sim = simulate_dataset(ScenarioSpec::preset("S1", 0.1, 3), 5);
    const auto grid = choose_boundaries(sim.dataset, 6, BoundaryStrategy::event_quantiles);
    const auto table = expand(sim.dataset, grid);
    const auto prob = build_problem(table, sim.dataset, ModelConfig{});
    const std::size_t K = 6, Q = 5, C = 2;
    const std::size_t loops = sim.dataset.network.reference_loops.size();
    CHECK(loops == 5);
    const std::size_t expected = (K - 1) + 1 + (Q - 1) + loops + C + C * (Q - 1) + (K - 1) * (Q - 1);
    CHECK(prob.theta_indices().size() == expected);
    CHECK(expected == 45);
    CHECK(prob.lasso_indices().size() == loops + C + C * (Q - 1) + (K - 1) * (Q - 1));

    ModelConfig none;
    none.heterogeneity = Heterogeneity::none;
    const auto fx = build_problem(table, sim.dataset, none);
    CHECK(fx.cols() == static_cast<Eigen::Index>(expected));
    CHECK(fx.ridge_groups.empty());
    for (std::size_t j = 0; j < expected; ++j) CHECK(fx.coefficients[j].name == prob.coefficients[j].name);
    // heterogeneity=none: the theta block of X is unchanged
    const Eigen::MatrixXd a = fx.dense();
    const Eigen::MatrixXd b = prob.dense().leftCols(static_cast<Eigen::Index>(expected));
    CHECK(a == b);
}

TEST_CASE("lasso column count follows the configuration")
{
    // 3 categorical covariates with 3, 4 and 2 levels (2+3+1 = 6 indicator columns)
    const auto schema = parse_schema(R"({"reference_treatment": "A", "covariates": {
        "x": {"kind": "categorical", "reference": "a", "levels": ["a", "b", "c"]},
        "y": {"kind": "categorical", "reference": "p", "levels": ["p", "q", "r", "s"]},
        "w": {"kind": "binary"}}})");
    std::vector<PatientRecord> recs;
    const std::vector<std::pair<std::string, std::string>> pairs{{"A", "B"}, {"A", "C"}, {"B", "C"}, {"A", "D"}};
    for (std::size_t t = 0; t < pairs.size(); ++t) {
        for (int i = 0; i < 6; ++i) {
            const auto arm = i % 2 ? pairs[t].second : pairs[t].first;
            recs.push_back(record("T" + std::to_string(t), arm, 1.0 + i + t, i % 3 == 0, {"a", "q", i % 2 ? "1" : "0"}));
        }
    }
    const auto ds = make_dataset(recs, schema);
    const auto table = expand(ds, PeriodGrid{{2.0, 4.0, 6.0}});
    ModelConfig cfg;
    cfg.covariates_for_interaction = std::vector<std::string>{"y"};
    const auto prob = build_problem(table, ds, cfg);
    const std::size_t K = 4, Q = 4, loops = 1, C = 6, CI = 3;
    CHECK(prob.lasso_indices().size() == loops + C + CI * (Q - 1) + (K - 1) * (Q - 1));
    CHECK(prob.find("alpha[y=q:B]") >= 0);
    CHECK(prob.find("alpha[x=b:B]") < 0);
}

TEST_CASE("single-trial contrasts lose their v group")
{
    const auto ds = two_trials();  // B in T1, T2; C in T2, T3
    const auto prob = build_problem(expand(ds, PeriodGrid{}), ds, ModelConfig{});
    CHECK(prob.warnings.empty());
    const auto ds2 = make_dataset({record("T1", "A", 1, 1), record("T1", "B", 2, 0), record("T2", "A", 1, 0),
                                   record("T2", "B", 1, 1), record("T3", "A", 3, 1), record("T3", "C", 2, 1)},
                                  {});
    const auto p2 = build_problem(expand(ds2, PeriodGrid{}), ds2, ModelConfig{});
    REQUIRE(p2.warnings.size() == 1);
    CHECK(p2.warnings[0].find("contrast C") != std::string::npos);
    CHECK(p2.ridge_groups.size() == 2);  // u and v[B]
}

TEST_CASE("common heterogeneity merges the v groups")
{
    const auto ds = two_trials();
    ModelConfig cfg;
    cfg.heterogeneity = Heterogeneity::common;
    const auto prob = build_problem(expand(ds, PeriodGrid{}), ds, cfg);
    REQUIRE(prob.ridge_groups.size() == 2);
    CHECK(prob.ridge_groups[1].members.size() == prob.indices(Role::contrast_deviation).size());
    CHECK(prob.ridge_groups[1].treatments == std::vector<int>{1, 2});
}

TEST_CASE("log hazard ratio under consistency")
{
    const auto ds = two_trials();
    const auto prob = build_problem(expand(ds, PeriodGrid{}), ds, ModelConfig{});
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(prob.cols());
    theta(prob.find("beta[B]")) = -0.26;
    theta(prob.find("beta[C]")) = 0.4;
    CHECK(log_hazard_ratio(prob, theta, 2, 1) == 0.4 - -0.26);
    CHECK(log_hazard_ratio(prob, theta, 1, 0) == -0.26);
}

TEST_CASE("relabelling treatments keeps the predictor space")
{
    // without covariates or periods each trial spans {1, arm indicator} under any labelling;
    // covariate interactions are measured against the trial reference arm and do move
    auto recs = two_trials().records;
    for (auto& r : recs) r.covariates.clear();
    const auto ds = make_dataset(recs, {});
    for (auto& r : recs) {
        if (r.arm_treatment == "B") r.arm_treatment = "C";
        else if (r.arm_treatment == "C") r.arm_treatment = "B";
    }
    const auto ds2 = make_dataset(recs, {});
    const PeriodGrid grid{};
    const Eigen::MatrixXd x1 = build_problem(expand(ds, grid), ds, ModelConfig{}).dense();
    const Eigen::MatrixXd x2 = build_problem(expand(ds2, grid), ds2, ModelConfig{}).dense();
    Eigen::MatrixXd both(x1.rows(), x1.cols() + x2.cols());
    both << x1, x2;
    CHECK(rank_of(x1) == rank_of(x2));
    CHECK(rank_of(both) == rank_of(x1));
}

TEST_CASE("model config JSON round trip")
{
    ModelConfig c;
    c.include_inconsistency = false;
    c.covariates_for_interaction = std::vector<std::string>{"z2"};
    c.heterogeneity = Heterogeneity::common;
    const auto back = parse_model_config(model_config_to_json(c));
    CHECK(back.include_inconsistency == false);
    CHECK(!back.covariates_for_baseline.has_value());
    CHECK(*back.covariates_for_interaction == std::vector<std::string>{"z2"});
    CHECK(back.heterogeneity == Heterogeneity::common);
    CHECK_THROWS_AS(parse_model_config(R"({"heterogeneity": "sometimes"})"), ConfigError);
}
}
