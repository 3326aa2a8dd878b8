#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pennma/data_model.hpp"

namespace pennma {

/// Generator settings for one simulated network meta-analysis. Defaults are the
/// five-treatment, nine-edge network with moderate treatment effects.
struct ScenarioSpec
{
    std::string id = "S1";
    std::vector<std::string> treatments{"A", "B", "C", "D", "E"};
    std::vector<std::pair<std::string, std::string>> edges;
    std::map<std::string, double> beta;                                   // treatment -> log HR vs reference
    std::map<std::pair<std::string, std::string>, double> omega;          // loop (q, p) -> shift
    std::vector<double> delta;                                            // per covariate
    std::map<std::pair<std::size_t, std::string>, double> alpha;          // (covariate, treatment) -> interaction
    std::string nonprop_treatment;                                        // empty: proportional hazards
    double weibull_shape = 0.75;
    double tau = 0.1;
    double sigma = 0.2;
    int trials_per_edge = 3;
    double event_log_rate = -5.5;
    double censor_log_rate = -7.0;
    int size_min = 50;
    int size_max = 500;
    std::size_t covariates = 2;
    double covariate_probability = 0.5;
    std::size_t periods = 6;

    /// S1..S5 presets.
    static ScenarioSpec preset(const std::string& id, double tau, int trials_per_edge);
    static const std::vector<std::string>& scenario_ids();

    void validate() const;
    std::string covariate_name(std::size_t c) const { return "z" + std::to_string(c + 1); }
};

/// Ground truth in the design's coefficient namespace.
struct TrueModel
{
    std::map<std::string, double> nonzero;     // coefficient name -> value (zeta entries flagged with NaN)
    std::map<std::string, double> beta;        // treatment -> log HR vs reference
    std::map<std::string, double> tau;         // treatment -> between-trial SD
    std::vector<std::string> nonprop_treatments;

    bool contains(const std::string& name) const { return nonzero.count(name) > 0; }
};

TrueModel true_support(const ScenarioSpec& spec);

struct Baseline
{
    enum class Kind { exponential, weibull } kind = Kind::exponential;
    double rate = 1.0;   // exponential
    double shape = 1.0;  // weibull: cumulative hazard (t / scale)^shape
    double scale = 1.0;
};

/// Inverse-transform event time for uniform u in (0, 1] and log hazard multiplier m.
double event_time_from_uniform(double m, const Baseline& baseline, double u);
double draw_event_time(double m, const Baseline& baseline, std::mt19937_64& rng);

/// Weibull scale whose cumulative hazard matches the exponential's at its median event time.
double matched_weibull_scale(double rate, double shape);

struct SimulatedData
{
    IpdDataset dataset;
    TrueModel truth;
};

SimulatedData simulate_dataset(const ScenarioSpec& spec, std::uint64_t seed);

std::string truth_to_json(const ScenarioSpec& spec, const TrueModel& truth, std::uint64_t seed);
TrueModel truth_from_json(const std::string& json_text);

}  // namespace pennma
