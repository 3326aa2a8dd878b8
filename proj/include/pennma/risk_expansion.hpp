#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pennma/data_model.hpp"

namespace pennma {

/// Piecewise-constant baseline periods. Period k (0-based) covers
/// (cut[k-1], cut[k]] with cut[-1] = 0 and cut[K-1] = +inf.
struct PeriodGrid
{
    std::vector<double> cut_points;

    std::size_t periods() const { return cut_points.size() + 1; }
    double lower(std::size_t k) const { return k == 0 ? 0.0 : cut_points[k - 1]; }
    double upper(std::size_t k) const;
    void validate() const;
};

enum class BoundaryStrategy { event_quantiles, explicit_cuts };

/// Cut points at the k/K empirical quantiles of the observed event times
/// (type-7 interpolation), or the given explicit cuts.
PeriodGrid choose_boundaries(const IpdDataset& dataset, std::size_t periods, BoundaryStrategy strategy,
                             const std::vector<double>& explicit_cuts = {});

struct RiskRow
{
    int trial = 0;                 // index into IpdDataset::trials
    int period = 0;                // 0-based
    int arm = 0;                   // index into TreatmentNetwork::treatments
    std::vector<double> pattern;   // encoded covariate values
    double d = 0.0;
    double xi = 0.0;
};

struct RiskTable
{
    std::vector<RiskRow> rows;
    PeriodGrid grid;
    bool collapsed = false;
    bool has_continuous = false;
    std::vector<std::string> pattern_names;
    std::size_t expanded_rows = 0;  // row count of the person-period expansion

    double total_events() const;
    double total_exposure() const;
};

RiskTable expand(const IpdDataset& dataset, const PeriodGrid& grid);

/// Sums d and xi over identical (trial, arm, period, pattern) cells.
/// Refuses tables carrying a continuous covariate.
RiskTable collapse(const RiskTable& table);

std::string risk_table_to_csv(const RiskTable& table, const IpdDataset& dataset);

}  // namespace pennma
