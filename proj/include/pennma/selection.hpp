#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pennma/data_model.hpp"
#include "pennma/design.hpp"
#include "pennma/risk_expansion.hpp"
#include "pennma/solver.hpp"

namespace pennma {

using Fit = FitResult<double>;
using Penalty = PenaltyVector<double>;

struct SelectionOptions
{
    std::size_t grid_points = 30;
    double grid_ratio = 1e-3;          // smallest grid value / lambda_max
    std::vector<double> grid;          // explicit lambda_L1 grid, overrides the default
    double lambda_cap = 1e8;
    double lambda_init = 25.0;
    double rho_cap = 1e6;
    double weight_epsilon = 1e-6;      // unpenalised-fit lambda_L1, relative to the null-fit max gradient
    double calibration_tol = 1e-4;
    int calibration_max_iter = 50;
    SolverOptions<double> solver;
};

/// Ridge penalties per problem ridge group (same order as PenalizedProblem::ridge_groups).
struct CalibrationState
{
    std::vector<double> lambdas;
    std::vector<double> df;
    std::vector<double> sum_squares;
    int iterations = 0;
    bool converged = false;

    bool empty() const { return lambdas.empty(); }
};

/// lambda = 1/tau^2 and its inverse.
double tau_from_lambda(double lambda);
double lambda_from_tau(double tau);

Penalty make_penalty(const PenalizedProblem& problem, const CalibrationState& state, const Eigen::VectorXd& l1,
                     const std::vector<bool>& fixed_zero = {});

struct Calibrated
{
    CalibrationState state;
    Fit fit;
    Penalty penalty;
};

/// Alternates a penalised fit with lambda_g <- df_g / ||theta_g||^2 for each ridge group.
Calibrated calibrate_ridge(const PenalizedProblem& problem, const Eigen::VectorXd& l1,
                           const std::vector<bool>& fixed_zero, const CalibrationState& init,
                           const std::optional<Eigen::VectorXd>& warm_start, const SelectionOptions& options);

struct AdaptiveWeights
{
    Eigen::VectorXd rho;            // per coefficient; 0 outside the adaptive-lasso set
    Eigen::VectorXd unpenalized;    // near-unpenalised estimates
    Calibrated null_fit;            // adaptive-lasso coefficients held at 0
    Eigen::VectorXd null_gradient;
    double lambda_max = 0.0;        // smallest lambda_L1 zeroing every weighted coefficient
};

AdaptiveWeights adaptive_weights(const PenalizedProblem& problem, const SelectionOptions& options);

struct PathPoint
{
    double lambda = 0.0;
    std::vector<Eigen::Index> support;
    Calibrated result;
};

std::vector<double> default_grid(double lambda_max, const SelectionOptions& options);

std::vector<PathPoint> lasso_path(const PenalizedProblem& problem, const AdaptiveWeights& weights,
                                  const std::vector<double>& grid, const SelectionOptions& options);

struct SupportCandidate
{
    std::vector<Eigen::Index> support;
    std::size_t first_grid_index = 0;
    bool ok = false;
    std::string warning;
    double loglik = 0.0;
    double df = 0.0;
    double bic = 0.0;
    Calibrated refit;
};

struct SelectionReport
{
    std::string method;                        // "het" or "fx"
    std::vector<std::string> coefficient_names;
    std::vector<Eigen::Index> lasso_indices;
    std::vector<double> grid;
    std::vector<std::vector<Eigen::Index>> path_supports;
    std::vector<std::size_t> candidate_of_point;
    std::vector<SupportCandidate> candidates;
    std::size_t chosen_candidate = 0;
    std::size_t chosen_index = 0;
    std::size_t n_obs = 0;
    Eigen::VectorXd rho;
    std::vector<std::string> selected;         // names of the chosen support
    Eigen::VectorXd estimates;                 // final unpenalised refit
    std::map<std::string, double> tau_hat;     // contrast treatment -> tau
    std::optional<double> sigma_hat;
    std::vector<double> final_lambdas;
    std::vector<std::string> ridge_group_names;
    bool calibration_converged = true;
    std::vector<std::string> warnings;

    const SupportCandidate& chosen() const { return candidates[chosen_candidate]; }
};

/// Refits each distinct path support without the L1 penalty (off-support
/// coefficients fixed at 0, ridge recalibrated) and keeps the minimum-BIC one.
SelectionReport two_step_bic(const std::vector<PathPoint>& path, const PenalizedProblem& problem,
                             const SelectionOptions& options);

enum class CollapseMode { never, always, when_categorical };

struct PipelineConfig
{
    std::size_t periods = 6;
    BoundaryStrategy strategy = BoundaryStrategy::event_quantiles;
    std::vector<double> cut_points;
    CollapseMode collapse = CollapseMode::never;
    SelectionOptions selection;
};

/// Everything a selection run produced, kept for reporting and bootstrap refits.
struct SelectionRun
{
    PeriodGrid grid;
    ModelConfig model;
    PenalizedProblem problem;
    SelectionReport report;
};

PenalizedProblem prepare_problem(const IpdDataset& dataset, const PeriodGrid& grid, const ModelConfig& model,
                                 CollapseMode collapse);

SelectionRun run_het_adlasso(const IpdDataset& dataset, const PipelineConfig& pipeline, ModelConfig model);
SelectionRun run_fx_adlasso(const IpdDataset& dataset, const PipelineConfig& pipeline, ModelConfig model);

/// Fixed-support refit: L1 dropped, coefficients outside `support` held at 0,
/// ridge penalties recalibrated from `init`.
Calibrated refit_support(const PenalizedProblem& problem, const std::vector<Eigen::Index>& support,
                         const CalibrationState& init, const std::optional<Eigen::VectorXd>& warm_start,
                         const SelectionOptions& options);

struct BootstrapInterval
{
    std::string name;
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool fixed_zero = false;
};

struct BootstrapResult
{
    std::size_t requested = 0;
    std::size_t succeeded = 0;
    std::size_t failed = 0;
    std::vector<BootstrapInterval> intervals;   // theta coefficients, log-HR scale
    std::vector<std::vector<double>> draws;     // successful resamples x theta coefficients
};

/// Resamples patients with replacement within each (trial, arm) stratum.
IpdDataset resample_dataset(const IpdDataset& dataset, std::uint64_t seed, std::uint64_t index);

/// Percentile intervals (2.5%, 97.5%) of a fixed-support refit over B stratified resamples.
BootstrapResult bootstrap_ci(const IpdDataset& dataset, const PeriodGrid& grid, const ModelConfig& model,
                             CollapseMode collapse, const std::vector<std::string>& support,
                             const std::vector<std::string>& theta_names, const Eigen::VectorXd& estimates,
                             const CalibrationState& init, std::size_t replicates, std::uint64_t seed,
                             const SelectionOptions& options, unsigned threads = 1);

/// Linear-interpolation (type 7) quantile of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double prob);

}  // namespace pennma
