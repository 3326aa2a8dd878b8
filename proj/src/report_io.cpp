#include "pennma/report_io.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

namespace pennma {

using json = nlohmann::ordered_json;

std::string to_string(CollapseMode mode)
{
    switch (mode) {
        case CollapseMode::never: return "never";
        case CollapseMode::always: return "always";
        case CollapseMode::when_categorical: return "when-categorical";
    }
    return "never";
}

CollapseMode collapse_mode_from_string(const std::string& s)
{
    if (s == "never") return CollapseMode::never;
    if (s == "always") return CollapseMode::always;
    if (s == "when-categorical") return CollapseMode::when_categorical;
    throw ConfigError("unknown collapse mode '" + s + "' (valid: never, always, when-categorical)");
}

namespace {

json names_of(const std::vector<Eigen::Index>& idx, const std::vector<std::string>& names)
{
    json out = json::array();
    for (auto j : idx) out.push_back(names[static_cast<std::size_t>(j)]);
    return out;
}

// JSON has no inf/nan; those become null
json number(double x)
{
    return std::isfinite(x) ? json(x) : json(nullptr);
}

}  // namespace

std::string report_to_json(const SelectionRun& run, CollapseMode collapse)
{
    const auto& rep = run.report;
    const auto& names = rep.coefficient_names;
    json j;
    j["method"] = rep.method;
    j["model"] = json::parse(model_config_to_json(run.model));
    j["collapse"] = to_string(collapse);
    j["cut_points"] = run.grid.cut_points;
    j["bic_sample_size"] = {{"n", rep.n_obs}, {"definition", "person-period rows of the uncollapsed expansion"}};

    j["lambda_grid"] = rep.grid;
    json path = json::array();
    for (std::size_t i = 0; i < rep.grid.size(); ++i) {
        path.push_back({{"lambda", rep.grid[i]},
                        {"support", names_of(rep.path_supports[i], names)},
                        {"candidate", rep.candidate_of_point[i]}});
    }
    j["path"] = path;
    json table = json::array();
    for (const auto& c : rep.candidates) {
        json row{{"support", names_of(c.support, names)}, {"first_grid_index", c.first_grid_index}, {"ok", c.ok}};
        if (c.ok) {
            row["loglik"] = number(c.loglik);
            row["df"] = number(c.df);
            row["bic"] = number(c.bic);
        } else {
            row["warning"] = c.warning;
        }
        table.push_back(row);
    }
    j["bic_table"] = table;
    j["chosen_index"] = rep.chosen_index;
    j["chosen_lambda"] = rep.grid[rep.chosen_index];
    j["selected"] = rep.selected;

    std::vector<std::string> lasso;
    for (auto k : rep.lasso_indices) lasso.push_back(names[static_cast<std::size_t>(k)]);
    j["penalized"] = lasso;
    json coefs = json::array();
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto& spec = run.problem.coefficients[k];
        json c{{"name", names[k]}, {"role", to_string(spec.role)}, {"estimate", number(rep.estimates(static_cast<Eigen::Index>(k)))}};
        if (spec.penalty == PenaltyKind::adaptive_lasso && rep.rho.size() == static_cast<Eigen::Index>(names.size())) {
            c["rho"] = number(rep.rho(static_cast<Eigen::Index>(k)));
        }
        coefs.push_back(c);
    }
    j["coefficients"] = coefs;

    if (!rep.ridge_group_names.empty()) {
        json ridge = json::array();
        for (std::size_t g = 0; g < rep.ridge_group_names.size(); ++g) {
            ridge.push_back({{"group", rep.ridge_group_names[g]}, {"lambda", number(rep.final_lambdas[g])}});
        }
        j["ridge"] = ridge;
        if (rep.sigma_hat) j["sigma_hat"] = number(*rep.sigma_hat);
        json tau = json::object();
        for (const auto& [t, v] : rep.tau_hat) tau[t] = number(v);
        j["tau_hat"] = tau;
        j["calibration_converged"] = rep.calibration_converged;
    }
    j["warnings"] = rep.warnings;
    return j.dump(2) + "\n";
}

StoredReport parse_report(const std::string& json_text)
{
    StoredReport r;
    try {
        const auto j = json::parse(json_text);
        r.method = j.at("method").get<std::string>();
        r.model = parse_model_config(j.at("model").dump());
        r.collapse = collapse_mode_from_string(j.at("collapse").get<std::string>());
        r.cut_points = j.at("cut_points").get<std::vector<double>>();
        for (const auto& c : j.at("coefficients")) {
            r.coefficient_names.push_back(c.at("name").get<std::string>());
            r.roles.push_back(c.at("role").get<std::string>());
            r.estimates.push_back(c.at("estimate").is_null() ? std::nan("") : c.at("estimate").get<double>());
        }
        r.lasso_names = j.at("penalized").get<std::vector<std::string>>();
        r.selected = j.at("selected").get<std::vector<std::string>>();
        if (j.contains("ridge")) {
            for (const auto& g : j.at("ridge")) {
                r.ridge_group_names.push_back(g.at("group").get<std::string>());
                r.final_lambdas.push_back(g.at("lambda").is_null() ? 1e8 : g.at("lambda").get<double>());
            }
            for (const auto& [t, v] : j.at("tau_hat").items()) r.tau_hat[t] = v.is_null() ? std::nan("") : v.get<double>();
            if (j.contains("sigma_hat") && !j.at("sigma_hat").is_null()) r.sigma_hat = j.at("sigma_hat").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
    return r;
}

CalibrationState StoredReport::calibration() const
{
    CalibrationState s;
    s.lambdas = final_lambdas;
    return s;
}

std::map<std::string, double> StoredReport::beta_estimates() const
{
    std::map<std::string, double> out;
    for (std::size_t k = 0; k < coefficient_names.size(); ++k) {
        const auto& n = coefficient_names[k];
        if (n.rfind("beta[", 0) == 0) out[n.substr(5, n.size() - 6)] = estimates[k];
    }
    return out;
}

std::vector<std::string> StoredReport::theta_names() const
{
    std::vector<std::string> out;
    for (std::size_t k = 0; k < coefficient_names.size(); ++k) {
        if (roles[k] != to_string(Role::baseline_deviation) && roles[k] != to_string(Role::contrast_deviation)) {
            out.push_back(coefficient_names[k]);
        }
    }
    return out;
}

Eigen::VectorXd StoredReport::theta_estimates() const
{
    std::vector<double> v;
    for (std::size_t k = 0; k < coefficient_names.size(); ++k) {
        if (roles[k] != to_string(Role::baseline_deviation) && roles[k] != to_string(Role::contrast_deviation)) {
            v.push_back(estimates[k]);
        }
    }
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string coefficients_csv(const SelectionRun& run)
{
    const auto& rep = run.report;
    const std::set<std::string> selected(rep.selected.begin(), rep.selected.end());
    std::ostringstream os;
    os << "name,role,in_model,estimate,hr\n";
    for (std::size_t k = 0; k < rep.coefficient_names.size(); ++k) {
        const auto& spec = run.problem.coefficients[k];
        const bool in_model = spec.penalty != PenaltyKind::adaptive_lasso || selected.count(spec.name);
        const double est = rep.estimates(static_cast<Eigen::Index>(k));
        os << spec.name << ',' << to_string(spec.role) << ',' << (in_model ? 1 : 0) << ',' << format_double(est) << ','
           << format_double(std::exp(est)) << '\n';
    }
    return os.str();
}

std::string intervals_csv(const BootstrapResult& result)
{
    std::ostringstream os;
    os << "name,fixed_zero,estimate,lower,upper,hr,hr_lower,hr_upper\n";
    for (const auto& iv : result.intervals) {
        os << iv.name << ',' << (iv.fixed_zero ? 1 : 0) << ',' << format_double(iv.estimate) << ','
           << format_double(iv.lower) << ',' << format_double(iv.upper) << ',' << format_double(std::exp(iv.estimate))
           << ',' << format_double(std::exp(iv.lower)) << ',' << format_double(std::exp(iv.upper)) << '\n';
    }
    return os.str();
}

}  // namespace pennma
