#include "pennma/selection.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "pennma/parallel.hpp"

namespace pennma {

double tau_from_lambda(double lambda)
{
    if (!(lambda > 0)) throw std::invalid_argument("tau_from_lambda: lambda must be positive");
    return 1.0 / std::sqrt(lambda);
}

double lambda_from_tau(double tau)
{
    if (!(tau > 0)) throw std::invalid_argument("lambda_from_tau: tau must be positive");
    return 1.0 / (tau * tau);
}

Penalty make_penalty(const PenalizedProblem& problem, const CalibrationState& state, const Eigen::VectorXd& l1,
                     const std::vector<bool>& fixed_zero)
{
    Penalty pen = Penalty::zeros(problem.cols());
    pen.l1 = l1;
    if (!fixed_zero.empty()) pen.fixed_zero = fixed_zero;
    for (std::size_t g = 0; g < problem.ridge_groups.size(); ++g) {
        for (auto j : problem.ridge_groups[g].members) pen.l2(j) = state.lambdas[g];
    }
    return pen;
}

Calibrated calibrate_ridge(const PenalizedProblem& problem, const Eigen::VectorXd& l1,
                           const std::vector<bool>& fixed_zero, const CalibrationState& init,
                           const std::optional<Eigen::VectorXd>& warm_start, const SelectionOptions& options)
{
    const auto names = problem.names();
    const std::size_t groups = problem.ridge_groups.size();
    CalibrationState state = init;
    if (state.lambdas.size() != groups) state.lambdas.assign(groups, options.lambda_init);
    state.df.assign(groups, 0.0);
    state.sum_squares.assign(groups, 0.0);
    state.converged = false;

    std::optional<Eigen::VectorXd> warm = warm_start;
    Calibrated out;
    for (int it = 0; it < std::max(1, options.calibration_max_iter); ++it) {
        out.penalty = make_penalty(problem, state, l1, fixed_zero);
        out.fit = fit<double>(problem, out.penalty, warm, options.solver, &names);
        state.iterations = it + 1;
        if (groups == 0) {
            state.converged = true;
            break;
        }
        const Eigen::VectorXd diag = hat_diagonal<double>(out.fit, problem, out.penalty, &names);
        double worst = 0.0;
        std::vector<double> next(groups);
        for (std::size_t g = 0; g < groups; ++g) {
            double df = 0.0, ss = 0.0;
            for (auto j : problem.ridge_groups[g].members) {
                df += diag(j);
                ss += out.fit.theta(j) * out.fit.theta(j);
            }
            state.df[g] = df;
            state.sum_squares[g] = ss;
            double lambda = ss > 0.0 ? df / ss : options.lambda_cap;
            if (!std::isfinite(lambda) || lambda > options.lambda_cap) lambda = options.lambda_cap;
            lambda = std::max(lambda, 1.0 / options.lambda_cap);
            next[g] = lambda;
            worst = std::max(worst, std::abs(lambda - state.lambdas[g]) / state.lambdas[g]);
        }
        if (worst < options.calibration_tol) {
            state.converged = true;
            break;
        }
        if (it + 1 < options.calibration_max_iter) {
            state.lambdas = next;
            warm = out.fit.theta;
        }
    }
    out.state = state;
    return out;
}

namespace {

std::vector<bool> mask_of(Eigen::Index p, const std::vector<Eigen::Index>& idx)
{
    std::vector<bool> mask(static_cast<std::size_t>(p), false);
    for (auto j : idx) mask[static_cast<std::size_t>(j)] = true;
    return mask;
}

std::vector<Eigen::Index> support_of(const Eigen::VectorXd& theta, const std::vector<Eigen::Index>& lasso)
{
    std::vector<Eigen::Index> s;
    for (auto j : lasso) {
        if (theta(j) != 0.0) s.push_back(j);
    }
    return s;
}

}  // namespace

AdaptiveWeights adaptive_weights(const PenalizedProblem& problem, const SelectionOptions& options)
{
    const auto lasso = problem.lasso_indices();
    if (lasso.empty()) throw ConfigError("adaptive_weights: the problem has no adaptive-lasso coefficients");
    const Eigen::Index p = problem.cols();
    AdaptiveWeights w;

    w.null_fit = calibrate_ridge(problem, Eigen::VectorXd::Zero(p), mask_of(p, lasso), {}, std::nullopt, options);
    w.null_gradient = negloglik_and_gradient<double>(w.null_fit.fit.theta, problem).second;
    double gmax = 0.0;
    for (auto j : lasso) gmax = std::max(gmax, std::abs(w.null_gradient(j)));

    Eigen::VectorXd l1 = Eigen::VectorXd::Zero(p);
    const double eps = options.weight_epsilon * std::max(gmax, 1e-12);
    for (auto j : lasso) l1(j) = eps;
    const auto unpen = calibrate_ridge(problem, l1, {}, w.null_fit.state, w.null_fit.fit.theta, options);
    if (!unpen.fit.converged) throw NumericalError("adaptive_weights: unpenalized fit did not converge");

    w.unpenalized = unpen.fit.theta;
    w.rho = Eigen::VectorXd::Zero(p);
    for (auto j : lasso) {
        const double a = std::abs(unpen.fit.theta(j));
        w.rho(j) = a > 0.0 ? std::min(1.0 / a, options.rho_cap) : options.rho_cap;
        w.lambda_max = std::max(w.lambda_max, std::abs(w.null_gradient(j)) / w.rho(j));
    }
    return w;
}

std::vector<double> default_grid(double lambda_max, const SelectionOptions& options)
{
    if (!options.grid.empty()) return options.grid;
    const std::size_t n = std::max<std::size_t>(options.grid_points, 1);
    std::vector<double> grid(n);
    const double top = std::max(lambda_max, 1e-12);
    for (std::size_t i = 0; i < n; ++i) {
        const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        grid[i] = top * std::pow(options.grid_ratio, frac);
    }
    return grid;
}

std::vector<PathPoint> lasso_path(const PenalizedProblem& problem, const AdaptiveWeights& weights,
                                  const std::vector<double>& grid, const SelectionOptions& options)
{
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw ConfigError("lasso_path: grid values must be positive");
        if (i > 0 && grid[i] > grid[i - 1]) throw ConfigError("lasso_path: grid must be descending");
    }
    const auto lasso = problem.lasso_indices();
    std::vector<PathPoint> path;
    CalibrationState state = weights.null_fit.state;
    Eigen::VectorXd warm = weights.null_fit.fit.theta;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        PathPoint pt;
        pt.lambda = grid[i];
        const Eigen::VectorXd l1 = grid[i] * weights.rho;
        try {
            pt.result = calibrate_ridge(problem, l1, {}, state, warm, options);
        } catch (const std::exception& e) {
            throw NumericalError("lasso_path: grid point " + std::to_string(i) + ": " + e.what());
        }
        pt.support = support_of(pt.result.fit.theta, lasso);
        state = pt.result.state;
        warm = pt.result.fit.theta;
        path.push_back(std::move(pt));
    }
    return path;
}

Calibrated refit_support(const PenalizedProblem& problem, const std::vector<Eigen::Index>& support,
                         const CalibrationState& init, const std::optional<Eigen::VectorXd>& warm_start,
                         const SelectionOptions& options)
{
    const Eigen::Index p = problem.cols();
    std::vector<bool> fixed(static_cast<std::size_t>(p), false);
    const std::set<Eigen::Index> keep(support.begin(), support.end());
    for (auto j : problem.lasso_indices()) {
        if (!keep.count(j)) fixed[static_cast<std::size_t>(j)] = true;
    }
    return calibrate_ridge(problem, Eigen::VectorXd::Zero(p), fixed, init, warm_start, options);
}

SelectionReport two_step_bic(const std::vector<PathPoint>& path, const PenalizedProblem& problem,
                             const SelectionOptions& options)
{
    if (path.empty()) throw ConfigError("two_step_bic: empty path");
    SelectionReport rep;
    rep.coefficient_names = problem.names();
    rep.lasso_indices = problem.lasso_indices();
    rep.n_obs = problem.n_obs;
    const double log_n = std::log(static_cast<double>(std::max<std::size_t>(problem.n_obs, 1)));

    for (std::size_t i = 0; i < path.size(); ++i) {
        rep.grid.push_back(path[i].lambda);
        rep.path_supports.push_back(path[i].support);
        std::size_t found = rep.candidates.size();
        for (std::size_t c = 0; c < rep.candidates.size(); ++c) {
            if (rep.candidates[c].support == path[i].support) found = c;
        }
        if (found == rep.candidates.size()) {
            SupportCandidate cand;
            cand.support = path[i].support;
            cand.first_grid_index = i;
            try {
                cand.refit = refit_support(problem, cand.support, path[i].result.state, path[i].result.fit.theta, options);
                const auto diag = hat_diagonal<double>(cand.refit.fit, problem, cand.refit.penalty);
                cand.loglik = cand.refit.fit.loglik;
                cand.df = diag.sum();
                cand.bic = -2.0 * cand.loglik + cand.df * log_n;
                cand.ok = std::isfinite(cand.bic);
                if (!cand.ok) cand.warning = "non-finite BIC";
            } catch (const std::exception& e) {
                cand.ok = false;
                cand.warning = e.what();
            }
            if (!cand.ok) rep.warnings.push_back("support at grid point " + std::to_string(i) + " excluded: " + cand.warning);
            rep.candidates.push_back(std::move(cand));
        }
        rep.candidate_of_point.push_back(found);
    }

    bool any = false;
    for (std::size_t c = 0; c < rep.candidates.size(); ++c) {
        const auto& cand = rep.candidates[c];
        if (!cand.ok) continue;
        if (!any) {
            rep.chosen_candidate = c;
            any = true;
            continue;
        }
        const auto& best = rep.candidates[rep.chosen_candidate];
        const double tol = 1e-9 * std::max(1.0, std::abs(best.bic));
        if (cand.bic < best.bic - tol ||
            (std::abs(cand.bic - best.bic) <= tol && cand.support.size() < best.support.size())) {
            rep.chosen_candidate = c;
        }
    }
    if (!any) throw NumericalError("two_step_bic: every support refit failed");

    const auto& chosen = rep.candidates[rep.chosen_candidate];
    rep.chosen_index = chosen.first_grid_index;
    for (auto j : chosen.support) rep.selected.push_back(rep.coefficient_names[static_cast<std::size_t>(j)]);
    rep.estimates = chosen.refit.fit.theta;
    rep.final_lambdas = chosen.refit.state.lambdas;
    rep.calibration_converged = chosen.refit.state.converged;
    for (const auto& g : problem.ridge_groups) rep.ridge_group_names.push_back(g.name);
    for (std::size_t g = 0; g < problem.ridge_groups.size(); ++g) {
        const auto& group = problem.ridge_groups[g];
        const double tau = tau_from_lambda(rep.final_lambdas[g]);
        if (group.id == 0) {
            rep.sigma_hat = tau;
        } else {
            for (int q : group.treatments) rep.tau_hat[problem.treatments[static_cast<std::size_t>(q)]] = tau;
        }
    }
    if (!rep.calibration_converged) rep.warnings.push_back("ridge calibration did not converge for the chosen support");
    return rep;
}

PenalizedProblem prepare_problem(const IpdDataset& dataset, const PeriodGrid& grid, const ModelConfig& model,
                                 CollapseMode collapse)
{
    RiskTable table = expand(dataset, grid);
    if (collapse == CollapseMode::always || (collapse == CollapseMode::when_categorical && !table.has_continuous)) {
        table = pennma::collapse(table);
    }
    return build_problem(table, dataset, model);
}

namespace {

SelectionRun run_pipeline(const IpdDataset& dataset, const PipelineConfig& pipeline, ModelConfig model,
                          const std::string& method)
{
    SelectionRun run;
    run.model = model;
    auto stage = [](const std::string& name, auto&& fn) {
        try {
            return fn();
        } catch (const ConfigError& e) {
            throw ConfigError(name + ": " + e.what());
        } catch (const std::exception& e) {
            throw NumericalError(name + ": " + e.what());
        }
    };
    run.grid = stage("boundaries",
                     [&] { return choose_boundaries(dataset, pipeline.periods, pipeline.strategy, pipeline.cut_points); });
    run.problem = stage("design", [&] { return prepare_problem(dataset, run.grid, model, pipeline.collapse); });
    const auto& opts = pipeline.selection;
    const auto weights = stage("adaptive_weights", [&] { return adaptive_weights(run.problem, opts); });
    const auto grid = default_grid(weights.lambda_max, opts);
    const auto path = stage("lasso_path", [&] { return lasso_path(run.problem, weights, grid, opts); });
    run.report = stage("two_step_bic", [&] { return two_step_bic(path, run.problem, opts); });
    run.report.method = method;
    run.report.rho = weights.rho;
    for (const auto& w : run.problem.warnings) run.report.warnings.push_back(w);
    return run;
}

}  // namespace

SelectionRun run_het_adlasso(const IpdDataset& dataset, const PipelineConfig& pipeline, ModelConfig model)
{
    if (model.heterogeneity == Heterogeneity::none) model.heterogeneity = Heterogeneity::per_contrast;
    return run_pipeline(dataset, pipeline, model, "het");
}

SelectionRun run_fx_adlasso(const IpdDataset& dataset, const PipelineConfig& pipeline, ModelConfig model)
{
    model.heterogeneity = Heterogeneity::none;
    return run_pipeline(dataset, pipeline, model, "fx");
}

double quantile_sorted(const std::vector<double>& sorted, double prob)
{
    if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

IpdDataset resample_dataset(const IpdDataset& dataset, std::uint64_t seed, std::uint64_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0xB0075u};
    std::mt19937_64 rng(seq);

    // strata in trial order, then arm order within trial
    std::vector<std::vector<std::size_t>> strata;
    std::map<std::pair<std::string, std::string>, std::size_t> stratum_of;
    for (const auto& t : dataset.trials) {
        for (const auto& a : t.arms) {
            stratum_of[{t.trial_id, a.treatment}] = strata.size();
            strata.emplace_back();
        }
    }
    for (std::size_t r = 0; r < dataset.records.size(); ++r) {
        const auto& rec = dataset.records[r];
        strata[stratum_of.at({rec.trial_id, rec.arm_treatment})].push_back(r);
    }
    std::vector<PatientRecord> records;
    records.reserve(dataset.records.size());
    for (const auto& s : strata) {
        std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
        for (std::size_t i = 0; i < s.size(); ++i) records.push_back(dataset.records[s[pick(rng)]]);
    }
    return make_dataset(std::move(records), dataset.schema);
}

BootstrapResult bootstrap_ci(const IpdDataset& dataset, const PeriodGrid& grid, const ModelConfig& model,
                             CollapseMode collapse, const std::vector<std::string>& support,
                             const std::vector<std::string>& theta_names, const Eigen::VectorXd& estimates,
                             const CalibrationState& init, std::size_t replicates, std::uint64_t seed,
                             const SelectionOptions& options, unsigned threads)
{
    if (replicates < 2) throw ConfigError("bootstrap: B must be >= 2");
    if (estimates.size() != static_cast<Eigen::Index>(theta_names.size())) {
        throw ConfigError("bootstrap: estimates and coefficient names differ in length");
    }
    const std::set<std::string> in_support(support.begin(), support.end());

    std::vector<std::optional<std::vector<double>>> draws(replicates);
    parallel_for(replicates, threads, [&](std::size_t b) {
        try {
            const auto resampled = resample_dataset(dataset, seed, b);
            const auto problem = prepare_problem(resampled, grid, model, collapse);
            std::vector<Eigen::Index> sup;
            for (auto j : problem.lasso_indices()) {
                if (in_support.count(problem.coefficients[static_cast<std::size_t>(j)].name)) sup.push_back(j);
            }
            const auto refit = refit_support(problem, sup, init, std::nullopt, options);
            if (!refit.fit.converged) return;
            std::vector<double> row;
            row.reserve(theta_names.size());
            for (const auto& name : theta_names) {
                const auto j = problem.find(name);
                if (j < 0) return;
                row.push_back(refit.fit.theta(j));
            }
            draws[b] = std::move(row);
        } catch (const std::exception&) {
            // dropped resample, counted below
        }
    });

    BootstrapResult out;
    out.requested = replicates;
    for (auto& d : draws) {
        if (d) out.draws.push_back(std::move(*d));
    }
    out.succeeded = out.draws.size();
    out.failed = replicates - out.succeeded;
    for (std::size_t k = 0; k < theta_names.size(); ++k) {
        BootstrapInterval iv;
        iv.name = theta_names[k];
        iv.estimate = estimates(static_cast<Eigen::Index>(k));
        std::vector<double> v;
        for (const auto& row : out.draws) v.push_back(row[k]);
        std::sort(v.begin(), v.end());
        if (!v.empty()) {
            iv.lower = quantile_sorted(v, 0.025);
            iv.upper = quantile_sorted(v, 0.975);
        }
        iv.fixed_zero = !v.empty() && v.front() == 0.0 && v.back() == 0.0 && iv.estimate == 0.0;
        out.intervals.push_back(iv);
    }
    return out;
}

}  // namespace pennma
