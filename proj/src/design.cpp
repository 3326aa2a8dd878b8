#include "pennma/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

namespace pennma {

std::string to_string(Heterogeneity h)
{
    switch (h) {
        case Heterogeneity::none: return "none";
        case Heterogeneity::per_contrast: return "per-contrast";
        case Heterogeneity::common: return "common";
    }
    return "none";
}

Heterogeneity heterogeneity_from_string(const std::string& s)
{
    if (s == "none") return Heterogeneity::none;
    if (s == "per-contrast") return Heterogeneity::per_contrast;
    if (s == "common") return Heterogeneity::common;
    throw ConfigError("unknown heterogeneity mode '" + s + "' (expected none|per-contrast|common)");
}

std::string to_string(Role role)
{
    switch (role) {
        case Role::period: return "period";
        case Role::mean_baseline: return "mean_baseline";
        case Role::mean_treatment: return "mean_treatment";
        case Role::inconsistency: return "inconsistency";
        case Role::covariate: return "covariate";
        case Role::interaction: return "interaction";
        case Role::nonprop: return "nonproportionality";
        case Role::baseline_deviation: return "baseline_deviation";
        case Role::contrast_deviation: return "contrast_deviation";
    }
    return "period";
}

std::string to_string(PenaltyKind kind)
{
    switch (kind) {
        case PenaltyKind::none: return "unpenalized";
        case PenaltyKind::ridge: return "ridge";
        case PenaltyKind::adaptive_lasso: return "adaptive_lasso";
    }
    return "unpenalized";
}

ModelConfig parse_model_config(const std::string& json_text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: invalid JSON: ") + e.what());
    }
    ModelConfig c;
    c.include_inconsistency = j.value("include_inconsistency", c.include_inconsistency);
    c.include_nonproportionality = j.value("include_nonproportionality", c.include_nonproportionality);
    if (j.contains("covariates_for_baseline") && !j["covariates_for_baseline"].is_null()) {
        c.covariates_for_baseline = j["covariates_for_baseline"].get<std::vector<std::string>>();
    }
    if (j.contains("covariates_for_interaction") && !j["covariates_for_interaction"].is_null()) {
        c.covariates_for_interaction = j["covariates_for_interaction"].get<std::vector<std::string>>();
    }
    if (j.contains("heterogeneity")) c.heterogeneity = heterogeneity_from_string(j["heterogeneity"].get<std::string>());
    return c;
}

std::string model_config_to_json(const ModelConfig& config)
{
    nlohmann::ordered_json j;
    j["include_inconsistency"] = config.include_inconsistency;
    j["covariates_for_baseline"] =
        config.covariates_for_baseline ? nlohmann::ordered_json(*config.covariates_for_baseline) : nullptr;
    j["covariates_for_interaction"] =
        config.covariates_for_interaction ? nlohmann::ordered_json(*config.covariates_for_interaction) : nullptr;
    j["include_nonproportionality"] = config.include_nonproportionality;
    j["heterogeneity"] = to_string(config.heterogeneity);
    return j.dump(2) + "\n";
}

namespace names {
std::string period(std::size_t k) { return "pi[" + std::to_string(k + 1) + "]"; }
std::string beta(const std::string& q) { return "beta[" + q + "]"; }
std::string omega(const std::string& q, const std::string& p) { return "omega[" + q + ":" + p + "]"; }
std::string delta(const std::string& covariate) { return "delta[" + covariate + "]"; }
std::string alpha(const std::string& covariate, const std::string& q) { return "alpha[" + covariate + ":" + q + "]"; }
std::string zeta(std::size_t k, const std::string& q) { return "zeta[" + std::to_string(k + 1) + ":" + q + "]"; }
}  // namespace names

std::vector<Eigen::Index> PenalizedProblem::indices(Role role) const
{
    std::vector<Eigen::Index> out;
    for (std::size_t j = 0; j < coefficients.size(); ++j) {
        if (coefficients[j].role == role) out.push_back(static_cast<Eigen::Index>(j));
    }
    return out;
}

std::vector<Eigen::Index> PenalizedProblem::lasso_indices() const
{
    std::vector<Eigen::Index> out;
    for (std::size_t j = 0; j < coefficients.size(); ++j) {
        if (coefficients[j].penalty == PenaltyKind::adaptive_lasso) out.push_back(static_cast<Eigen::Index>(j));
    }
    return out;
}

std::vector<Eigen::Index> PenalizedProblem::theta_indices() const
{
    std::vector<Eigen::Index> out;
    for (std::size_t j = 0; j < coefficients.size(); ++j) {
        const auto r = coefficients[j].role;
        if (r != Role::baseline_deviation && r != Role::contrast_deviation) out.push_back(static_cast<Eigen::Index>(j));
    }
    return out;
}

Eigen::Index PenalizedProblem::find(const std::string& name) const
{
    for (std::size_t j = 0; j < coefficients.size(); ++j) {
        if (coefficients[j].name == name) return static_cast<Eigen::Index>(j);
    }
    return -1;
}

std::vector<std::string> PenalizedProblem::names() const
{
    std::vector<std::string> out;
    out.reserve(coefficients.size());
    for (const auto& c : coefficients) out.push_back(c.name);
    return out;
}

Eigen::VectorXi treatment_contrasts(const Trial& trial, const std::string& arm, const TreatmentNetwork& network)
{
    if (!trial.has_arm(arm)) {
        throw ConfigError("treatment '" + arm + "' is not an arm of trial '" + trial.trial_id + "'");
    }
    const auto q_count = static_cast<Eigen::Index>(network.size());
    Eigen::VectorXi trt = Eigen::VectorXi::Zero(q_count - 1);
    if (arm == trial.reference_arm) return trt;
    const int q = network.index_of(arm);
    const int p = network.index_of(trial.reference_arm);
    trt(q - 1) = 1;
    if (p > 0) trt(p - 1) = -1;
    return trt;
}

Eigen::VectorXd inconsistency_columns(const TreatmentNetwork& network, const Eigen::VectorXi& contrasts)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(network.reference_loops.size()));
    for (std::size_t l = 0; l < network.reference_loops.size(); ++l) {
        const auto [q, p] = network.reference_loops[l];
        out(static_cast<Eigen::Index>(l)) = std::abs(contrasts(q - 1) * contrasts(p - 1));
    }
    return out;
}

PenalizedProblem build_problem(const RiskTable& table, const IpdDataset& dataset, const ModelConfig& config)
{
    const auto& net = dataset.network;
    const int q_count = static_cast<int>(net.size());
    const std::size_t k_count = table.grid.periods();
    const auto n_rows = static_cast<Eigen::Index>(table.rows.size());
    if (n_rows == 0) throw ConfigError("build_problem: empty risk table");

    PenalizedProblem prob;
    prob.treatments = net.treatments;
    prob.n_obs = table.expanded_rows;
    prob.periods = k_count;

    // resolve covariate selections against the encoded pattern columns
    const auto& covs = dataset.schema.covariates;
    auto selected = [&](const std::optional<std::vector<std::string>>& list) {
        std::vector<bool> use(covs.size(), !list.has_value());
        if (list) {
            for (const auto& name : *list) {
                const auto it = std::find_if(covs.begin(), covs.end(), [&](const CovariateSpec& c) { return c.name == name; });
                if (it == covs.end()) throw ConfigError("model config: unknown covariate '" + name + "'");
                use[static_cast<std::size_t>(it - covs.begin())] = true;
            }
        }
        return use;
    };
    const auto use_baseline = selected(config.covariates_for_baseline);
    const auto use_interaction = selected(config.covariates_for_interaction);
    const auto encoded_names = table.pattern_names;
    std::vector<std::size_t> encoded_source;
    {
        // pattern columns follow encode_covariates' order
        for (std::size_t c = 0; c < covs.size(); ++c) {
            const std::size_t count =
                covs[c].kind == CovariateKind::categorical ? covs[c].levels.size() - 1 : std::size_t{1};
            for (std::size_t i = 0; i < count; ++i) encoded_source.push_back(c);
        }
        if (encoded_source.size() != encoded_names.size()) {
            throw ConfigError("build_problem: risk table covariate columns do not match the dataset schema");
        }
    }

    auto add = [&](CoefficientSpec spec) { prob.coefficients.push_back(std::move(spec)); };

    for (std::size_t k = 1; k < k_count; ++k) add({names::period(k), Role::period, PenaltyKind::none, -1, -1, -1, int(k)});
    add({"gamma", Role::mean_baseline, PenaltyKind::none});
    for (int q = 1; q < q_count; ++q) add({names::beta(net.treatments[q]), Role::mean_treatment, PenaltyKind::none, -1, q});
    if (config.include_inconsistency) {
        for (const auto& [q, p] : net.reference_loops) {
            add({names::omega(net.treatments[q], net.treatments[p]), Role::inconsistency, PenaltyKind::adaptive_lasso, -1, q, p});
        }
    }
    for (std::size_t c = 0; c < encoded_names.size(); ++c) {
        if (!use_baseline[encoded_source[c]]) continue;
        add({names::delta(encoded_names[c]), Role::covariate, PenaltyKind::adaptive_lasso, -1, -1, -1, -1, -1, int(c)});
    }
    for (std::size_t c = 0; c < encoded_names.size(); ++c) {
        if (!use_interaction[encoded_source[c]]) continue;
        for (int q = 1; q < q_count; ++q) {
            add({names::alpha(encoded_names[c], net.treatments[q]), Role::interaction, PenaltyKind::adaptive_lasso, -1, q, -1,
                 -1, -1, int(c)});
        }
    }
    if (config.include_nonproportionality) {
        for (int q = 1; q < q_count; ++q) {
            for (std::size_t k = 1; k < k_count; ++k) {
                add({names::zeta(k, net.treatments[q]), Role::nonprop, PenaltyKind::adaptive_lasso, -1, q, -1, int(k)});
            }
        }
    }

    // per-trial contrast vectors, cached per (trial, arm)
    std::map<std::pair<int, int>, Eigen::VectorXi> contrast_cache;
    auto contrasts_of = [&](int trial, int arm) -> const Eigen::VectorXi& {
        auto it = contrast_cache.find({trial, arm});
        if (it == contrast_cache.end()) {
            it = contrast_cache
                     .emplace(std::make_pair(trial, arm),
                              treatment_contrasts(dataset.trials[static_cast<std::size_t>(trial)],
                                                  net.treatments[static_cast<std::size_t>(arm)], net))
                     .first;
        }
        return it->second;
    };

    if (config.heterogeneity != Heterogeneity::none) {
        RidgeGroup u_group{0, "u", {}, {}};
        for (std::size_t i = 0; i < dataset.trials.size(); ++i) {
            u_group.members.push_back(static_cast<Eigen::Index>(prob.coefficients.size()));
            add({"u[" + dataset.trials[i].trial_id + "]", Role::baseline_deviation, PenaltyKind::ridge, 0, -1, -1, -1, int(i)});
        }
        prob.ridge_groups.push_back(std::move(u_group));

        // trials in which each contrast is nonzero for some arm
        std::vector<std::vector<int>> trials_of(static_cast<std::size_t>(q_count));
        for (std::size_t i = 0; i < dataset.trials.size(); ++i) {
            std::set<int> involved;
            for (const auto& a : dataset.trials[i].arms) {
                const auto& trt = contrasts_of(int(i), net.index_of(a.treatment));
                for (int q = 1; q < q_count; ++q) {
                    if (trt(q - 1) != 0) involved.insert(q);
                }
            }
            for (int q : involved) trials_of[static_cast<std::size_t>(q)].push_back(int(i));
        }

        RidgeGroup common{1, "v", {}, {}};
        for (int q = 1; q < q_count; ++q) {
            const auto& trials = trials_of[static_cast<std::size_t>(q)];
            if (trials.size() <= 1) {
                prob.warnings.push_back("no between-trial heterogeneity estimated for contrast " + net.treatments[q] +
                                        " (only " + std::to_string(trials.size()) + " trial)");
                continue;
            }
            RidgeGroup group{q, "v[" + net.treatments[q] + "]", {}, {q}};
            const int gid = config.heterogeneity == Heterogeneity::common ? 1 : q;
            for (int i : trials) {
                group.members.push_back(static_cast<Eigen::Index>(prob.coefficients.size()));
                add({"v[" + net.treatments[q] + ":" + dataset.trials[static_cast<std::size_t>(i)].trial_id + "]",
                     Role::contrast_deviation, PenaltyKind::ridge, gid, q, -1, -1, i});
            }
            if (config.heterogeneity == Heterogeneity::common) {
                common.members.insert(common.members.end(), group.members.begin(), group.members.end());
                common.treatments.push_back(q);
            } else {
                prob.ridge_groups.push_back(std::move(group));
            }
        }
        if (config.heterogeneity == Heterogeneity::common && !common.members.empty()) {
            prob.ridge_groups.push_back(std::move(common));
        }
    }

    // index maps for fast row assembly
    const auto p = static_cast<Eigen::Index>(prob.coefficients.size());
    std::map<std::pair<int, int>, Eigen::Index> u_col, v_col;  // (trial) / (q, trial)
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto& c = prob.coefficients[static_cast<std::size_t>(j)];
        if (c.role == Role::baseline_deviation) u_col[{c.trial, 0}] = j;
        if (c.role == Role::contrast_deviation) v_col[{c.treatment, c.trial}] = j;
    }

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(n_rows) * 16);
    prob.y.resize(n_rows);
    prob.offset.resize(n_rows);
    for (Eigen::Index r = 0; r < n_rows; ++r) {
        const auto& row = table.rows[static_cast<std::size_t>(r)];
        if (!(row.xi > 0.0)) throw ConfigError("build_problem: non-positive exposure in risk table");
        prob.y(r) = row.d;
        prob.offset(r) = std::log(row.xi);
        const auto& trt = contrasts_of(row.trial, row.arm);
        for (Eigen::Index j = 0; j < p; ++j) {
            const auto& c = prob.coefficients[static_cast<std::size_t>(j)];
            double x = 0.0;
            switch (c.role) {
                case Role::period: x = row.period == c.period ? 1.0 : 0.0; break;
                case Role::mean_baseline: x = 1.0; break;
                case Role::mean_treatment: x = trt(c.treatment - 1); break;
                case Role::inconsistency: x = std::abs(trt(c.treatment - 1) * trt(c.treatment2 - 1)); break;
                case Role::covariate: x = row.pattern[static_cast<std::size_t>(c.covariate)]; break;
                case Role::interaction: x = row.pattern[static_cast<std::size_t>(c.covariate)] * trt(c.treatment - 1); break;
                case Role::nonprop: x = row.period == c.period ? trt(c.treatment - 1) : 0.0; break;
                case Role::baseline_deviation:
                case Role::contrast_deviation: continue;
            }
            if (x != 0.0) triplets.emplace_back(r, j, x);
        }
        if (config.heterogeneity != Heterogeneity::none) {
            triplets.emplace_back(r, u_col.at({row.trial, 0}), 1.0);
            for (int q = 1; q < q_count; ++q) {
                const int t = trt(q - 1);
                if (t == 0) continue;
                const auto it = v_col.find({q, row.trial});
                if (it != v_col.end()) triplets.emplace_back(r, it->second, double(t));
            }
        }
    }
    prob.X.resize(n_rows, p);
    prob.X.setFromTriplets(triplets.begin(), triplets.end());
    prob.X.makeCompressed();
    return prob;
}

double log_hazard_ratio(const PenalizedProblem& problem, const Eigen::VectorXd& theta, int q, int p)
{
    auto beta = [&](int t) {
        if (t == 0) return 0.0;
        return theta(problem.find(names::beta(problem.treatments[static_cast<std::size_t>(t)])));
    };
    return beta(q) - beta(p);
}

std::string problem_to_json(const PenalizedProblem& problem)
{
    nlohmann::ordered_json j;
    j["rows"] = problem.rows();
    j["n_obs"] = problem.n_obs;
    j["treatments"] = problem.treatments;
    j["coefficients"] = nlohmann::ordered_json::array();
    for (const auto& c : problem.coefficients) {
        nlohmann::ordered_json cj;
        cj["name"] = c.name;
        cj["role"] = to_string(c.role);
        cj["penalty"] = to_string(c.penalty);
        if (c.group >= 0) cj["group"] = c.group;
        j["coefficients"].push_back(cj);
    }
    j["ridge_groups"] = nlohmann::ordered_json::array();
    for (const auto& g : problem.ridge_groups) {
        j["ridge_groups"].push_back({{"id", g.id}, {"name", g.name}, {"size", g.members.size()}});
    }
    j["warnings"] = problem.warnings;
    return j.dump(2) + "\n";
}

}  // namespace pennma
