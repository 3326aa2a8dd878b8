#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "pennma/data_model.hpp"
#include "pennma/risk_expansion.hpp"

namespace pennma {

enum class Heterogeneity { none, per_contrast, common };

std::string to_string(Heterogeneity h);
Heterogeneity heterogeneity_from_string(const std::string& s);

struct ModelConfig
{
    bool include_inconsistency = true;
    std::optional<std::vector<std::string>> covariates_for_baseline;     // nullopt: every covariate
    std::optional<std::vector<std::string>> covariates_for_interaction;  // nullopt: every covariate
    bool include_nonproportionality = true;
    Heterogeneity heterogeneity = Heterogeneity::per_contrast;
};

ModelConfig parse_model_config(const std::string& json_text);
std::string model_config_to_json(const ModelConfig& config);

enum class Role {
    period,
    mean_baseline,
    mean_treatment,
    inconsistency,
    covariate,
    interaction,
    nonprop,
    baseline_deviation,
    contrast_deviation
};

enum class PenaltyKind { none, ridge, adaptive_lasso };

std::string to_string(Role role);
std::string to_string(PenaltyKind kind);

struct CoefficientSpec
{
    std::string name;
    Role role = Role::period;
    PenaltyKind penalty = PenaltyKind::none;
    int group = -1;       // ridge group id, -1 when not ridge-penalised
    int treatment = -1;   // network index (beta, alpha, zeta, v; first of an omega pair)
    int treatment2 = -1;  // second treatment of an omega pair
    int period = -1;      // 0-based (pi, zeta)
    int trial = -1;       // u, v
    int covariate = -1;   // encoded covariate column (delta, alpha)
};

struct RidgeGroup
{
    int id = 0;
    std::string name;
    std::vector<Eigen::Index> members;
    std::vector<int> treatments;  // contrasts merged into this group (empty for u)
};

/// Poisson response with log offset and design: log(mu) = offset + X theta.
template <class Scalar>
struct PoissonData
{
    using vec_t = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using sp_mat_t = Eigen::SparseMatrix<Scalar, Eigen::ColMajor>;

    vec_t y;
    vec_t offset;
    sp_mat_t X;

    Eigen::Index rows() const { return X.rows(); }
    Eigen::Index cols() const { return X.cols(); }
};

struct PenalizedProblem : PoissonData<double>
{
    std::vector<CoefficientSpec> coefficients;
    std::vector<RidgeGroup> ridge_groups;
    std::vector<std::string> treatments;
    std::vector<std::string> warnings;
    std::size_t n_obs = 0;  // BIC sample size: person-period rows of the uncollapsed expansion
    std::size_t periods = 1;

    Eigen::MatrixXd dense() const { return Eigen::MatrixXd(X); }
    std::vector<Eigen::Index> indices(Role role) const;
    std::vector<Eigen::Index> lasso_indices() const;
    std::vector<Eigen::Index> theta_indices() const;  // pi, gamma, beta, omega, delta, alpha, zeta
    Eigen::Index find(const std::string& name) const;  // -1 if absent
    std::vector<std::string> names() const;
};

/// Contrast vector over treatments 2..Q (entry q-1 for network index q).
Eigen::VectorXi treatment_contrasts(const Trial& trial, const std::string& arm, const TreatmentNetwork& network);

/// |trt^q * trt^p| for every reference loop (q, p).
Eigen::VectorXd inconsistency_columns(const TreatmentNetwork& network, const Eigen::VectorXi& contrasts);

PenalizedProblem build_problem(const RiskTable& table, const IpdDataset& dataset, const ModelConfig& config);

/// log HR of treatment q versus p under consistency: beta_q - beta_p.
double log_hazard_ratio(const PenalizedProblem& problem, const Eigen::VectorXd& theta, int q, int p);

std::string problem_to_json(const PenalizedProblem& problem);

// Coefficient names shared by the design and the simulator's ground truth.
namespace names {
std::string period(std::size_t k);
std::string beta(const std::string& q);
std::string omega(const std::string& q, const std::string& p);
std::string delta(const std::string& covariate);
std::string alpha(const std::string& covariate, const std::string& q);
std::string zeta(std::size_t k, const std::string& q);
}  // namespace names

}  // namespace pennma
