#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pennma/selection.hpp"
#include "pennma/simulator.hpp"

namespace pennma {

struct ConfusionCounts
{
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
};

enum class Category { covariates, interactions, inconsistency, nonproportionality };

std::string to_string(Category c);
const std::vector<Category>& all_categories();
std::optional<Category> category_of(const std::string& coefficient_name);

struct ReplicateScore
{
    ConfusionCounts confusion;
    std::optional<double> fpr;  // absent when TN + FP = 0
    std::optional<double> fnr;  // absent when FN + TP = 0
    double acc = 0.0;
    std::map<Category, bool> category_correct;
    std::map<std::string, double> beta_abs_bias;  // contrast -> |beta_hat - beta_true|
    std::map<std::string, double> tau_hat;
    std::map<std::string, double> tau_abs_bias;
};

/// Scores selected adaptive-lasso terms against the truth.
ReplicateScore score_replicate(const std::vector<std::string>& lasso_names, const std::vector<std::string>& selected,
                               const std::map<std::string, double>& beta_hat,
                               const std::map<std::string, double>& tau_hat, const TrueModel& truth);

ReplicateScore score_replicate(const SelectionReport& report, const TrueModel& truth);

/// Fitted log HRs versus the reference, keyed by treatment name.
std::map<std::string, double> beta_estimates(const SelectionReport& report);

/// Flat (metric, value) view of one replicate, in a fixed order.
std::vector<std::pair<std::string, double>> replicate_metrics(const ReplicateScore& score);

struct Summary
{
    std::vector<std::pair<std::string, double>> metrics;  // canonical order
    std::size_t replicates = 0;

    std::optional<double> get(const std::string& metric) const;
};

/// Means over defined values, category proportions, and median/quartiles of the bias distributions.
Summary aggregate(const std::vector<ReplicateScore>& scores);

std::string score_to_json(const ReplicateScore& score);
std::string summary_to_json(const Summary& summary);

}  // namespace pennma
