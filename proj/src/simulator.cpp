#include "pennma/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "json.hpp"
#include "pennma/design.hpp"

namespace pennma {

namespace {

// Reference A is compared with every treatment, plus five of the six pairs among B..E.
const std::vector<std::pair<std::string, std::string>> kNetworkEdges = {
    {"A", "B"}, {"A", "C"}, {"A", "D"}, {"A", "E"}, {"B", "C"}, {"B", "D"}, {"C", "D"}, {"C", "E"}, {"D", "E"},
};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x51A7u};
    return std::mt19937_64(seq);
}

double normal(std::mt19937_64& rng, double sd)
{
    std::normal_distribution<double> n(0.0, 1.0);
    const double z = n(rng);
    return sd * z;
}

}  // namespace

const std::vector<std::string>& ScenarioSpec::scenario_ids()
{
    static const std::vector<std::string> ids{"S1", "S2", "S3", "S4", "S5"};
    return ids;
}

ScenarioSpec ScenarioSpec::preset(const std::string& id, double tau, int trials_per_edge)
{
    const auto& ids = scenario_ids();
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
        throw ConfigError("unknown scenario '" + id + "' (valid: S1, S2, S3, S4, S5)");
    }
    ScenarioSpec s;
    s.id = id;
    s.tau = tau;
    s.trials_per_edge = trials_per_edge;
    s.edges = kNetworkEdges;
    s.beta = {{"B", std::log(0.77)}, {"C", std::log(0.65)}, {"D", std::log(0.96)}, {"E", std::log(0.87)}};
    s.delta.assign(s.covariates, 0.0);
    const bool inconsistency = id == "S2" || id == "S4" || id == "S5";
    const bool covariate = id == "S3" || id == "S4" || id == "S5";
    if (inconsistency) {
        s.omega[{"B", "C"}] = std::log(0.5);
        s.omega[{"D", "E"}] = std::log(2.0);
    }
    if (covariate) {
        s.delta = {0.0, std::log(1.25)};
        s.alpha[{1, "B"}] = std::log(1.25);
        s.alpha[{1, "D"}] = std::log(1.25);
    }
    if (id == "S5") s.nonprop_treatment = "E";
    s.validate();
    return s;
}

void ScenarioSpec::validate() const
{
    if (treatments.size() < 2) throw ConfigError("scenario: need at least two treatments");
    if (trials_per_edge < 1) throw ConfigError("scenario: trials_per_edge must be >= 1");
    if (!(tau >= 0.0) || !(sigma >= 0.0)) throw ConfigError("scenario: tau and sigma must be nonnegative");
    if (size_min < 2 || size_max < size_min) throw ConfigError("scenario: invalid trial size range");
    if (!(weibull_shape > 0.0)) throw ConfigError("scenario: Weibull shape must be positive");
    if (delta.size() != covariates) throw ConfigError("scenario: delta must have one entry per covariate");
    if (!(covariate_probability >= 0.0 && covariate_probability <= 1.0)) {
        throw ConfigError("scenario: covariate probability must be in [0, 1]");
    }
    if (periods < 1) throw ConfigError("scenario: periods must be >= 1");
    const std::set<std::string> known(treatments.begin(), treatments.end());
    for (const auto& [a, b] : edges) {
        if (!known.count(a) || !known.count(b) || a == b) throw ConfigError("scenario: invalid edge " + a + "-" + b);
    }
    for (const auto& [t, v] : beta) {
        if (!known.count(t) || t == treatments.front()) throw ConfigError("scenario: invalid beta treatment " + t);
        if (!std::isfinite(v)) throw ConfigError("scenario: beta must be finite (HR positive)");
    }
    for (const auto& [key, v] : alpha) {
        if (key.first >= covariates || !known.count(key.second)) throw ConfigError("scenario: invalid alpha entry");
    }
    if (!nonprop_treatment.empty() && !known.count(nonprop_treatment)) {
        throw ConfigError("scenario: unknown non-proportional treatment " + nonprop_treatment);
    }
}

TrueModel true_support(const ScenarioSpec& spec)
{
    spec.validate();
    TrueModel truth;
    for (const auto& [pair, v] : spec.omega) {
        if (v != 0.0) truth.nonzero[names::omega(pair.first, pair.second)] = v;
    }
    for (std::size_t c = 0; c < spec.delta.size(); ++c) {
        if (spec.delta[c] != 0.0) truth.nonzero[names::delta(spec.covariate_name(c))] = spec.delta[c];
    }
    for (const auto& [key, v] : spec.alpha) {
        if (v != 0.0) truth.nonzero[names::alpha(spec.covariate_name(key.first), key.second)] = v;
    }
    if (!spec.nonprop_treatment.empty()) {
        truth.nonprop_treatments.push_back(spec.nonprop_treatment);
        for (std::size_t k = 1; k < spec.periods; ++k) {
            truth.nonzero[names::zeta(k, spec.nonprop_treatment)] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    for (std::size_t q = 1; q < spec.treatments.size(); ++q) {
        const auto& t = spec.treatments[q];
        const auto it = spec.beta.find(t);
        truth.beta[t] = it == spec.beta.end() ? 0.0 : it->second;
        truth.tau[t] = spec.tau;
    }
    return truth;
}

double event_time_from_uniform(double m, const Baseline& baseline, double u)
{
    const double e = -std::log(u) / std::exp(m);
    if (baseline.kind == Baseline::Kind::exponential) return e / baseline.rate;
    return baseline.scale * std::pow(e, 1.0 / baseline.shape);
}

double draw_event_time(double m, const Baseline& baseline, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = 1.0 - unif(rng);  // (0, 1]
    return event_time_from_uniform(m, baseline, u);
}

double matched_weibull_scale(double rate, double shape)
{
    const double median = std::log(2.0) / rate;
    return median / std::pow(std::log(2.0), 1.0 / shape);
}

SimulatedData simulate_dataset(const ScenarioSpec& spec, std::uint64_t seed)
{
    spec.validate();
    const auto& tr = spec.treatments;
    auto order = [&](const std::string& t) {
        return static_cast<int>(std::find(tr.begin(), tr.end(), t) - tr.begin());
    };
    auto beta = [&](const std::string& t) {
        const auto it = spec.beta.find(t);
        return it == spec.beta.end() ? 0.0 : it->second;
    };

    const double rate = std::exp(spec.event_log_rate);
    const Baseline exponential{Baseline::Kind::exponential, rate, 1.0, 1.0};
    const Baseline weibull{Baseline::Kind::weibull, rate, spec.weibull_shape,
                           matched_weibull_scale(rate, spec.weibull_shape)};
    const Baseline censoring{Baseline::Kind::exponential, std::exp(spec.censor_log_rate), 1.0, 1.0};

    std::vector<PatientRecord> records;
    std::uint64_t trial_index = 0;
    char id[32];
    for (const auto& [e1, e2] : spec.edges) {
        const bool first_ref = order(e1) < order(e2);
        const std::string ref = first_ref ? e1 : e2;
        const std::string exp = first_ref ? e2 : e1;
        for (int t = 0; t < spec.trials_per_edge; ++t, ++trial_index) {
            auto rng = stream(seed, trial_index);
            std::snprintf(id, sizeof(id), "T%03llu", static_cast<unsigned long long>(trial_index + 1));

            std::uniform_int_distribution<int> size_dist(spec.size_min, spec.size_max);
            const int n = size_dist(rng);
            const int n_exp = n / 2;
            const int n_ref = n - n_exp;
            const double u = spec.sigma > 0.0 ? normal(rng, spec.sigma) : 0.0;
            // deviations on each basic contrast the edge involves
            std::map<std::string, double> v;
            for (const auto& t_name : {ref, exp}) {
                if (t_name != tr.front()) v[t_name] = spec.tau > 0.0 ? normal(rng, spec.tau) : 0.0;
            }
            auto omega_of = [&] {
                const auto it = spec.omega.find({ref, exp});
                return it == spec.omega.end() ? 0.0 : it->second;
            }();

            std::bernoulli_distribution cov(spec.covariate_probability);
            for (int arm = 0; arm < 2; ++arm) {
                const bool is_exp = arm == 1;
                const std::string& treatment = is_exp ? exp : ref;
                const int count = is_exp ? n_exp : n_ref;
                const Baseline& base = treatment == spec.nonprop_treatment ? weibull : exponential;
                for (int j = 0; j < count; ++j) {
                    std::vector<int> z(spec.covariates);
                    for (auto& zc : z) zc = cov(rng) ? 1 : 0;
                    double m = u;
                    for (std::size_t c = 0; c < spec.covariates; ++c) m += spec.delta[c] * z[c];
                    if (is_exp) {
                        // contrast coding: +1 on the experimental treatment, -1 on the trial reference
                        auto contrast = [&](const std::string& q, double sign) {
                            double s = beta(q) + v[q];
                            for (std::size_t c = 0; c < spec.covariates; ++c) {
                                const auto it = spec.alpha.find({c, q});
                                if (it != spec.alpha.end()) s += it->second * z[c];
                            }
                            return sign * s;
                        };
                        m += contrast(exp, 1.0);
                        if (ref != tr.front()) m += contrast(ref, -1.0);
                        m += omega_of;
                    }
                    const double t_event = draw_event_time(m, base, rng);
                    const double t_censor = draw_event_time(0.0, censoring, rng);
                    PatientRecord rec;
                    rec.trial_id = id;
                    rec.arm_treatment = treatment;
                    rec.followup_time = std::min(t_event, t_censor);
                    rec.event = t_event <= t_censor ? 1 : 0;
                    for (int zc : z) rec.covariates.push_back(zc ? "1" : "0");
                    records.push_back(std::move(rec));
                }
            }
        }
    }

    CovariateSchema schema;
    schema.reference_treatment = tr.front();
    for (std::size_t c = 0; c < spec.covariates; ++c) {
        schema.covariates.push_back(CovariateSpec{spec.covariate_name(c), CovariateKind::binary, {}, {}});
    }
    return SimulatedData{make_dataset(std::move(records), std::move(schema)), true_support(spec)};
}

std::string truth_to_json(const ScenarioSpec& spec, const TrueModel& truth, std::uint64_t seed)
{
    nlohmann::ordered_json j;
    j["scenario"] = spec.id;
    j["seed"] = seed;
    j["true_support"] = nlohmann::ordered_json::array();
    for (const auto& [name, v] : truth.nonzero) j["true_support"].push_back(name);
    j["true_values"] = nlohmann::ordered_json::object();
    for (const auto& [name, v] : truth.nonzero) {
        j["true_values"][name] = std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
    }
    j["nonprop_treatments"] = truth.nonprop_treatments;
    j["beta"] = truth.beta;
    j["tau"] = truth.tau;

    auto& g = j["generator"];
    g["treatments"] = spec.treatments;
    g["edges"] = nlohmann::ordered_json::array();
    for (const auto& [a, b] : spec.edges) g["edges"].push_back({a, b});
    g["beta"] = spec.beta;
    g["omega"] = nlohmann::ordered_json::array();
    for (const auto& [k, v] : spec.omega) g["omega"].push_back({{"q", k.first}, {"p", k.second}, {"value", v}});
    g["delta"] = spec.delta;
    g["alpha"] = nlohmann::ordered_json::array();
    for (const auto& [k, v] : spec.alpha) {
        g["alpha"].push_back({{"covariate", spec.covariate_name(k.first)}, {"treatment", k.second}, {"value", v}});
    }
    g["nonprop_treatment"] = spec.nonprop_treatment;
    g["weibull_shape"] = spec.weibull_shape;
    g["tau"] = spec.tau;
    g["sigma"] = spec.sigma;
    g["trials_per_edge"] = spec.trials_per_edge;
    g["event_log_rate"] = spec.event_log_rate;
    g["censor_log_rate"] = spec.censor_log_rate;
    g["size_min"] = spec.size_min;
    g["size_max"] = spec.size_max;
    g["covariates"] = spec.covariates;
    g["covariate_probability"] = spec.covariate_probability;
    g["periods"] = spec.periods;
    return j.dump(2) + "\n";
}

TrueModel truth_from_json(const std::string& json_text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("truth: invalid JSON: ") + e.what());
    }
    TrueModel t;
    for (const auto& [name, v] : j.at("true_values").items()) {
        t.nonzero[name] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
    t.nonprop_treatments = j.value("nonprop_treatments", std::vector<std::string>{});
    t.beta = j.value("beta", std::map<std::string, double>{});
    t.tau = j.value("tau", std::map<std::string, double>{});
    return t;
}

}  // namespace pennma
