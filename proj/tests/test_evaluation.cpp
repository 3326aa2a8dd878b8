#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "pennma/evaluation.hpp"

using namespace pennma;

namespace {

std::vector<std::string> universe(std::size_t n)
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("delta[x" + std::to_string(i) + "]");
    return out;
}

ReplicateScore with_acc(double acc)
{
    ReplicateScore s;
    s.acc = acc;
    return s;
}

}  // namespace

TEST_SUITE("evaluation")
{
TEST_CASE("false positive rate")
{
    const auto names = universe(10);
    const auto s = score_replicate(names, {names[0], names[1]}, {}, {}, TrueModel{});
    CHECK(s.confusion.fp == 2);
    CHECK(s.confusion.tn == 8);
    CHECK(*s.fpr == 0.2);
    CHECK(!s.fnr.has_value());
    CHECK(s.acc == 0.8);
    CHECK(s.acc + double(s.confusion.fp + s.confusion.fn) / double(s.confusion.total()) == 1.0);
}

TEST_CASE("empty truth and empty selection")
{
    const auto s = score_replicate(universe(4), {}, {}, {}, TrueModel{});
    CHECK(s.acc == 1.0);
    CHECK(!s.fnr.has_value());
    CHECK(*s.fpr == 0.0);
    const auto none = score_replicate({}, {}, {}, {}, TrueModel{});
    CHECK(none.acc == 1.0);
    CHECK(!none.fpr.has_value());
}

TEST_CASE("exact recovery")
{
    TrueModel truth;
    truth.nonzero = {{"delta[z2]", 0.2}, {"alpha[z2:B]", 0.2}, {"omega[B:C]", -0.7}};
    truth.beta = {{"B", -0.26}, {"C", -0.43}};
    truth.tau = {{"B", 0.3}, {"C", 0.3}};
    const std::vector<std::string> names{"delta[z1]", "delta[z2]", "alpha[z2:B]", "alpha[z1:C]", "omega[B:C]", "zeta[2:B]"};
    const std::vector<std::string> sel{"omega[B:C]", "delta[z2]", "alpha[z2:B]"};
    const auto s = score_replicate(names, sel, {{"B", -0.2}, {"C", -0.5}}, {{"B", 0.25}}, truth);
    CHECK(s.acc == 1.0);
    CHECK(*s.fnr == 0.0);
    for (auto cat : all_categories()) CHECK(s.category_correct.at(cat));
    CHECK(s.beta_abs_bias.at("B") == doctest::Approx(0.06));
    CHECK(s.beta_abs_bias.at("C") == doctest::Approx(0.07));
    CHECK(s.tau_abs_bias.at("B") == doctest::Approx(0.05));
    CHECK(s.tau_abs_bias.count("C") == 0);

    // missing one interaction: only that category fails
    const auto miss = score_replicate(names, {"omega[B:C]", "delta[z2]"}, {}, {}, truth);
    CHECK(!miss.category_correct.at(Category::interactions));
    CHECK(miss.category_correct.at(Category::covariates));
    CHECK(miss.confusion.fn == 1);
    CHECK(*miss.fnr == doctest::Approx(1.0 / 3.0));

    // order of names does not matter
    auto rev = names;
    std::reverse(rev.begin(), rev.end());
    auto rsel = sel;
    std::reverse(rsel.begin(), rsel.end());
    const auto r = score_replicate(rev, rsel, {}, {}, truth);
    CHECK(r.confusion.tp == s.confusion.tp);
    CHECK(r.confusion.tn == s.confusion.tn);
    CHECK(r.category_correct == s.category_correct);

    CHECK_THROWS_AS(score_replicate(names, {"omega[D:E]"}, {}, {}, truth), ConfigError);
    truth.nonzero["pi[2]"] = 1.0;
    CHECK_THROWS_AS(score_replicate(names, sel, {}, {}, truth), ConfigError);
}

TEST_CASE("non-proportionality rule")
{
    TrueModel truth;
    truth.nonprop_treatments = {"E"};
    for (int k = 2; k <= 3; ++k) truth.nonzero["zeta[" + std::to_string(k) + ":E]"] = std::nan("");
    const std::vector<std::string> names{"zeta[2:B]", "zeta[3:B]", "zeta[2:E]", "zeta[3:E]"};
    CHECK(score_replicate(names, {"zeta[3:E]"}, {}, {}, truth).category_correct.at(Category::nonproportionality));
    CHECK(!score_replicate(names, {}, {}, {}, truth).category_correct.at(Category::nonproportionality));
    CHECK(!score_replicate(names, {"zeta[2:E]", "zeta[2:B]"}, {}, {}, truth).category_correct.at(Category::nonproportionality));
}

TEST_CASE("aggregate")
{
    SUBCASE("mean of two")
    {
        const auto a = aggregate({with_acc(1.0), with_acc(0.8)});
        CHECK(*a.get("acc_mean") == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(a.replicates == 2);
    }
    SUBCASE("single score reproduces itself")
    {
        TrueModel truth;
        truth.beta = {{"B", 0.1}};
        truth.nonzero = {{"delta[x1]", 1.0}};
        const auto s = score_replicate(universe(3), {"delta[x1]", "delta[x2]"}, {{"B", 0.3}}, {}, truth);
        const auto a = aggregate({s});
        CHECK(*a.get("acc_mean") == s.acc);
        CHECK(*a.get("fpr_mean") == *s.fpr);
        CHECK(*a.get("covariates_proportion") == 0.0);
        CHECK(*a.get("beta_abs_bias_B_median") == doctest::Approx(0.2));
        CHECK(*a.get("beta_abs_bias_B_q1") == *a.get("beta_abs_bias_B_q3"));
    }
    SUBCASE("undefined rates are skipped")
    {
        ReplicateScore a = with_acc(1.0), b = with_acc(1.0);
        a.fnr = 0.5;
        const auto s = aggregate({a, b});
        CHECK(*s.get("fnr_mean") == 0.5);
        CHECK(!s.get("fpr_mean").has_value());
    }
    SUBCASE("replicate order is irrelevant")
    {
        std::vector<ReplicateScore> v;
        for (int i = 0; i < 5; ++i) {
            auto s = with_acc(0.1 * i);
            s.beta_abs_bias["B"] = 0.01 * (i * 7 % 5);
            s.category_correct[Category::covariates] = i % 2;
            v.push_back(s);
        }
        const auto a = aggregate(v);
        std::reverse(v.begin(), v.end());
        const auto b = aggregate(v);
        REQUIRE(a.metrics.size() == b.metrics.size());
        for (std::size_t i = 0; i < a.metrics.size(); ++i) {
            CHECK(a.metrics[i].first == b.metrics[i].first);
            CHECK(a.metrics[i].second == doctest::Approx(b.metrics[i].second).epsilon(1e-15));
        }
    }
    CHECK_THROWS(aggregate({}));
}

TEST_CASE("JSON output")
{
    const auto s = score_replicate(universe(10), {"delta[x0]"}, {}, {}, TrueModel{});
    const auto j = nlohmann::json::parse(score_to_json(s));
    CHECK(j["fpr"].get<double>() == 0.1);
    CHECK(j["fnr"].is_null());
    const auto agg = nlohmann::json::parse(summary_to_json(aggregate({s})));
    CHECK(agg["replicates"].get<int>() == 1);
}
}
