#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pennma/data_model.hpp"
#include "pennma/design.hpp"

namespace fixtures {

using namespace pennma;

inline PatientRecord record(std::string trial, std::string arm, double time, int event,
                            std::vector<std::string> covs = {})
{
    return PatientRecord{std::move(trial), std::move(arm), time, event, std::move(covs)};
}

/// One two-or-more-arm trial per entry, two patients per arm, no covariates.
inline std::vector<Trial> trials_of(const std::vector<std::vector<std::string>>& designs)
{
    std::vector<Trial> out;
    for (std::size_t i = 0; i < designs.size(); ++i) {
        Trial t;
        t.trial_id = "T" + std::to_string(i + 1);
        for (const auto& a : designs[i]) t.arms.push_back(Arm{a, 2});
        out.push_back(t);
    }
    return out;
}

inline std::vector<std::pair<std::string, std::string>> edge_names(const TreatmentNetwork& net,
                                                                   const std::vector<std::pair<int, int>>& e)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [a, b] : e) out.emplace_back(net.treatments[static_cast<std::size_t>(a)], net.treatments[static_cast<std::size_t>(b)]);
    return out;
}

/// Dense random Poisson problem with moderate rates.
inline PoissonData<double> random_poisson(int n, int p, std::mt19937_64& rng, double coef_scale = 0.3)
{
    std::normal_distribution<double> norm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.5, 2.0);
    Eigen::MatrixXd x(n, p);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        for (int j = 1; j < p; ++j) x(i, j) = norm(rng);
    }
    Eigen::VectorXd beta(p);
    for (int j = 0; j < p; ++j) beta(j) = coef_scale * norm(rng);
    beta(0) = 0.5;
    PoissonData<double> d;
    d.X = x.sparseView();
    d.offset.resize(n);
    d.y.resize(n);
    for (int i = 0; i < n; ++i) {
        d.offset(i) = std::log(unif(rng));
        std::poisson_distribution<int> pois(std::exp(d.offset(i) + x.row(i).dot(beta)));
        d.y(i) = pois(rng);
    }
    return d;
}

}  // namespace fixtures
