#include "pennma/risk_expansion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>

namespace pennma {

double PeriodGrid::upper(std::size_t k) const
{
    return k < cut_points.size() ? cut_points[k] : std::numeric_limits<double>::infinity();
}

void PeriodGrid::validate() const
{
    for (std::size_t i = 0; i < cut_points.size(); ++i) {
        if (!(cut_points[i] > 0.0) || !std::isfinite(cut_points[i])) {
            throw ConfigError("period grid: cut points must be positive and finite");
        }
        if (i > 0 && !(cut_points[i] > cut_points[i - 1])) {
            throw ConfigError("period grid: cut points must be strictly increasing");
        }
    }
}

PeriodGrid choose_boundaries(const IpdDataset& dataset, std::size_t periods, BoundaryStrategy strategy,
                             const std::vector<double>& explicit_cuts)
{
    if (periods < 1) throw ConfigError("number of periods K must be >= 1");
    PeriodGrid grid;
    if (strategy == BoundaryStrategy::explicit_cuts) {
        grid.cut_points = explicit_cuts;
        if (grid.periods() != periods) {
            throw ConfigError("explicit boundaries give " + std::to_string(grid.periods()) + " periods, K=" +
                              std::to_string(periods));
        }
        grid.validate();
        return grid;
    }

    std::vector<double> times;
    for (const auto& r : dataset.records) {
        if (r.event == 1) times.push_back(r.followup_time);
    }
    std::sort(times.begin(), times.end());
    std::set<double> unique_times(times.begin(), times.end());
    if (unique_times.size() < periods) {
        throw ConfigError("too few distinct event times (" + std::to_string(unique_times.size()) + ") for K=" +
                          std::to_string(periods) + " periods");
    }
    const double n = static_cast<double>(times.size());
    for (std::size_t k = 1; k < periods; ++k) {
        const double h = (n - 1.0) * static_cast<double>(k) / static_cast<double>(periods);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, times.size() - 1);
        grid.cut_points.push_back(times[lo] + (h - static_cast<double>(lo)) * (times[hi] - times[lo]));
    }
    try {
        grid.validate();
    } catch (const ConfigError&) {
        throw ConfigError("event-time quantiles are tied; too few distinct event times for K=" +
                          std::to_string(periods));
    }
    return grid;
}

double RiskTable::total_events() const
{
    double s = 0.0;
    for (const auto& r : rows) s += r.d;
    return s;
}

double RiskTable::total_exposure() const
{
    double s = 0.0;
    for (const auto& r : rows) s += r.xi;
    return s;
}

RiskTable expand(const IpdDataset& dataset, const PeriodGrid& grid)
{
    grid.validate();
    const auto encoded = encode_covariates(dataset);
    RiskTable table;
    table.grid = grid;
    table.has_continuous = encoded.has_continuous;
    table.pattern_names = encoded.names;

    std::map<std::string, int> trial_of;
    for (std::size_t i = 0; i < dataset.trials.size(); ++i) trial_of[dataset.trials[i].trial_id] = static_cast<int>(i);

    const auto n_cov = encoded.values.cols();
    for (std::size_t r = 0; r < dataset.records.size(); ++r) {
        const auto& rec = dataset.records[r];
        const int trial = trial_of.at(rec.trial_id);
        const int arm = dataset.network.index_of(rec.arm_treatment);
        std::vector<double> pattern(static_cast<std::size_t>(n_cov));
        for (Eigen::Index c = 0; c < n_cov; ++c) pattern[static_cast<std::size_t>(c)] = encoded.values(static_cast<Eigen::Index>(r), c);

        for (std::size_t k = 0; k < grid.periods(); ++k) {
            const double lo = grid.lower(k);
            if (!(rec.followup_time > lo)) break;
            const double hi = grid.upper(k);
            const double xi = std::min(rec.followup_time, hi) - lo;
            if (!(xi > 0.0)) continue;
            const bool last = rec.followup_time <= hi;
            table.rows.push_back(RiskRow{trial, static_cast<int>(k), arm, pattern, last ? double(rec.event) : 0.0, xi});
            if (last) break;
        }
    }
    table.expanded_rows = table.rows.size();
    return table;
}

RiskTable collapse(const RiskTable& table)
{
    if (table.has_continuous) {
        throw ConfigError("collapsing is limited to the case where all covariates are categorical; "
                          "a continuous covariate is present");
    }
    using Key = std::tuple<int, int, int, std::vector<double>>;
    std::map<Key, std::size_t> index;
    RiskTable out;
    out.grid = table.grid;
    out.collapsed = true;
    out.has_continuous = false;
    out.pattern_names = table.pattern_names;
    out.expanded_rows = table.expanded_rows;

    std::vector<RiskRow> groups;
    for (const auto& row : table.rows) {
        Key key{row.trial, row.arm, row.period, row.pattern};
        auto [it, inserted] = index.try_emplace(std::move(key), groups.size());
        if (inserted) {
            groups.push_back(row);
        } else {
            groups[it->second].d += row.d;
            groups[it->second].xi += row.xi;
        }
    }
    out.rows.reserve(groups.size());
    for (const auto& [key, pos] : index) out.rows.push_back(groups[pos]);
    return out;
}

std::string risk_table_to_csv(const RiskTable& table, const IpdDataset& dataset)
{
    std::string out = "trial,period,treatment_arm";
    for (const auto& n : table.pattern_names) out += "," + n;
    out += ",d,xi\n";
    for (const auto& r : table.rows) {
        out += dataset.trials[static_cast<std::size_t>(r.trial)].trial_id;
        out += "," + std::to_string(r.period + 1);
        out += "," + dataset.network.treatments[static_cast<std::size_t>(r.arm)];
        for (double v : r.pattern) out += "," + format_double(v);
        out += "," + format_double(r.d) + "," + format_double(r.xi) + "\n";
    }
    return out;
}

}  // namespace pennma
