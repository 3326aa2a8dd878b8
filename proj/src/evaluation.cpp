#include "pennma/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

namespace pennma {

std::string to_string(Category c)
{
    switch (c) {
        case Category::covariates: return "covariates";
        case Category::interactions: return "interactions";
        case Category::inconsistency: return "inconsistency";
        case Category::nonproportionality: return "nonproportionality";
    }
    return "covariates";
}

const std::vector<Category>& all_categories()
{
    static const std::vector<Category> cats{Category::covariates, Category::interactions, Category::inconsistency,
                                            Category::nonproportionality};
    return cats;
}

std::optional<Category> category_of(const std::string& name)
{
    if (name.rfind("delta[", 0) == 0) return Category::covariates;
    if (name.rfind("alpha[", 0) == 0) return Category::interactions;
    if (name.rfind("omega[", 0) == 0) return Category::inconsistency;
    if (name.rfind("zeta[", 0) == 0) return Category::nonproportionality;
    return std::nullopt;
}

namespace {

// treatment of a zeta[k:q] name
std::string zeta_treatment(const std::string& name)
{
    const auto colon = name.find(':');
    return name.substr(colon + 1, name.size() - colon - 2);
}

}  // namespace

ReplicateScore score_replicate(const std::vector<std::string>& lasso_names, const std::vector<std::string>& selected,
                               const std::map<std::string, double>& beta_hat,
                               const std::map<std::string, double>& tau_hat, const TrueModel& truth)
{
    const std::set<std::string> universe(lasso_names.begin(), lasso_names.end());
    const std::set<std::string> chosen(selected.begin(), selected.end());
    for (const auto& [name, v] : truth.nonzero) {
        if (!universe.count(name)) throw ConfigError("score: true term '" + name + "' is not a penalized coefficient");
    }
    for (const auto& name : chosen) {
        if (!universe.count(name)) throw ConfigError("score: selected term '" + name + "' is not a penalized coefficient");
    }

    ReplicateScore s;
    for (const auto& name : universe) {
        const bool is_true = truth.contains(name);
        const bool is_sel = chosen.count(name) > 0;
        if (is_true && is_sel) ++s.confusion.tp;
        if (is_true && !is_sel) ++s.confusion.fn;
        if (!is_true && is_sel) ++s.confusion.fp;
        if (!is_true && !is_sel) ++s.confusion.tn;
    }
    const auto& c = s.confusion;
    if (c.tn + c.fp > 0) s.fpr = double(c.fp) / double(c.tn + c.fp);
    if (c.fn + c.tp > 0) s.fnr = double(c.fn) / double(c.fn + c.tp);
    s.acc = c.total() ? double(c.tp + c.tn) / double(c.total()) : 1.0;

    for (auto cat : all_categories()) {
        std::set<std::string> sel_cat, true_cat;
        for (const auto& n : chosen) {
            if (category_of(n) == cat) sel_cat.insert(n);
        }
        for (const auto& [n, v] : truth.nonzero) {
            if (category_of(n) == cat) true_cat.insert(n);
        }
        bool ok = sel_cat == true_cat;
        if (cat == Category::nonproportionality && !truth.nonprop_treatments.empty()) {
            // any zeta term of a non-proportional treatment, and none elsewhere
            const std::set<std::string> np(truth.nonprop_treatments.begin(), truth.nonprop_treatments.end());
            std::set<std::string> hit;
            bool stray = false;
            for (const auto& n : sel_cat) {
                const auto t = zeta_treatment(n);
                if (np.count(t)) hit.insert(t); else stray = true;
            }
            ok = !stray && hit.size() == np.size();
        }
        s.category_correct[cat] = ok;
    }

    for (const auto& [t, b] : truth.beta) {
        const auto it = beta_hat.find(t);
        if (it != beta_hat.end()) s.beta_abs_bias[t] = std::abs(it->second - b);
    }
    for (const auto& [t, tau] : tau_hat) {
        s.tau_hat[t] = tau;
        const auto it = truth.tau.find(t);
        if (it != truth.tau.end()) s.tau_abs_bias[t] = std::abs(tau - it->second);
    }
    return s;
}

std::map<std::string, double> beta_estimates(const SelectionReport& report)
{
    std::map<std::string, double> out;
    for (std::size_t j = 0; j < report.coefficient_names.size(); ++j) {
        const auto& n = report.coefficient_names[j];
        if (n.rfind("beta[", 0) == 0) out[n.substr(5, n.size() - 6)] = report.estimates(static_cast<Eigen::Index>(j));
    }
    return out;
}

ReplicateScore score_replicate(const SelectionReport& report, const TrueModel& truth)
{
    std::vector<std::string> lasso_names;
    for (auto j : report.lasso_indices) lasso_names.push_back(report.coefficient_names[static_cast<std::size_t>(j)]);
    return score_replicate(lasso_names, report.selected, beta_estimates(report), report.tau_hat, truth);
}

std::vector<std::pair<std::string, double>> replicate_metrics(const ReplicateScore& s)
{
    std::vector<std::pair<std::string, double>> m;
    m.emplace_back("acc", s.acc);
    if (s.fpr) m.emplace_back("fpr", *s.fpr);
    if (s.fnr) m.emplace_back("fnr", *s.fnr);
    m.emplace_back("tp", double(s.confusion.tp));
    m.emplace_back("tn", double(s.confusion.tn));
    m.emplace_back("fp", double(s.confusion.fp));
    m.emplace_back("fn", double(s.confusion.fn));
    for (const auto& [cat, ok] : s.category_correct) m.emplace_back("correct_" + to_string(cat), ok ? 1.0 : 0.0);
    for (const auto& [t, v] : s.beta_abs_bias) m.emplace_back("beta_abs_bias_" + t, v);
    for (const auto& [t, v] : s.tau_hat) m.emplace_back("tau_hat_" + t, v);
    for (const auto& [t, v] : s.tau_abs_bias) m.emplace_back("tau_abs_bias_" + t, v);
    return m;
}

std::optional<double> Summary::get(const std::string& metric) const
{
    for (const auto& [k, v] : metrics) {
        if (k == metric) return v;
    }
    return std::nullopt;
}

Summary aggregate(const std::vector<ReplicateScore>& scores)
{
    if (scores.empty()) throw std::invalid_argument("aggregate: no scores");
    Summary out;
    out.replicates = scores.size();

    // collect per-metric values keyed by name; std::map keeps the order canonical
    std::map<std::string, std::vector<double>> values;
    for (const auto& s : scores) {
        for (const auto& [k, v] : replicate_metrics(s)) values[k].push_back(v);
    }
    auto mean = [](const std::vector<double>& v) {
        double sum = 0.0;
        for (double x : v) sum += x;
        return sum / double(v.size());
    };
    for (auto& [k, v] : values) {
        std::sort(v.begin(), v.end());
        if (k.rfind("correct_", 0) == 0) {
            out.metrics.emplace_back(k.substr(8) + "_proportion", mean(v));
        } else if (k.rfind("beta_abs_bias_", 0) == 0 || k.rfind("tau_abs_bias_", 0) == 0) {
            out.metrics.emplace_back(k + "_median", quantile_sorted(v, 0.5));
            out.metrics.emplace_back(k + "_q1", quantile_sorted(v, 0.25));
            out.metrics.emplace_back(k + "_q3", quantile_sorted(v, 0.75));
            out.metrics.emplace_back(k + "_mean", mean(v));
        } else {
            out.metrics.emplace_back(k + "_mean", mean(v));
        }
    }
    out.metrics.emplace_back("replicates", double(scores.size()));
    return out;
}

std::string score_to_json(const ReplicateScore& score)
{
    nlohmann::ordered_json j;
    j["confusion"] = {{"tp", score.confusion.tp}, {"tn", score.confusion.tn}, {"fp", score.confusion.fp},
                      {"fn", score.confusion.fn}};
    j["fpr"] = score.fpr ? nlohmann::ordered_json(*score.fpr) : nlohmann::ordered_json(nullptr);
    j["fnr"] = score.fnr ? nlohmann::ordered_json(*score.fnr) : nlohmann::ordered_json(nullptr);
    j["acc"] = score.acc;
    for (const auto& [cat, ok] : score.category_correct) j["category_correct"][to_string(cat)] = ok;
    j["beta_abs_bias"] = score.beta_abs_bias;
    j["tau_hat"] = score.tau_hat;
    j["tau_abs_bias"] = score.tau_abs_bias;
    return j.dump(2) + "\n";
}

std::string summary_to_json(const Summary& summary)
{
    nlohmann::ordered_json j;
    j["replicates"] = summary.replicates;
    for (const auto& [k, v] : summary.metrics) j["metrics"][k] = v;
    return j.dump(2) + "\n";
}

}  // namespace pennma
