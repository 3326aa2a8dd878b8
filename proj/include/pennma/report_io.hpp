#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pennma/selection.hpp"

namespace pennma {

std::string to_string(CollapseMode mode);
CollapseMode collapse_mode_from_string(const std::string& s);

/// The parts of a saved report that later commands (bootstrap, score) need.
struct StoredReport
{
    std::string method;
    ModelConfig model;
    CollapseMode collapse = CollapseMode::never;
    std::vector<double> cut_points;
    std::vector<std::string> coefficient_names;
    std::vector<std::string> roles;
    std::vector<double> estimates;
    std::vector<std::string> lasso_names;
    std::vector<std::string> selected;
    std::map<std::string, double> tau_hat;
    std::optional<double> sigma_hat;
    std::vector<std::string> ridge_group_names;
    std::vector<double> final_lambdas;

    CalibrationState calibration() const;
    std::map<std::string, double> beta_estimates() const;
    std::vector<std::string> theta_names() const;
    Eigen::VectorXd theta_estimates() const;
};

std::string report_to_json(const SelectionRun& run, CollapseMode collapse);
StoredReport parse_report(const std::string& json_text);

/// One row per coefficient: name, role, in_model, estimate, hr.
std::string coefficients_csv(const SelectionRun& run);

/// Percentile intervals on the log-HR and HR scales.
std::string intervals_csv(const BootstrapResult& result);

}  // namespace pennma
