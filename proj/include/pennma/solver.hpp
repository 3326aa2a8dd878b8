#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "pennma/design.hpp"

namespace pennma {

/// Numerical failure inside the solver (overflow, singular system, collinear design).
class NumericalError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Per-coefficient penalties: (l2/2) theta^2 + l1 |theta|. Coefficients flagged
/// in fixed_zero are held at exactly 0 and excluded from the fit.
template <class Scalar>
struct PenaltyVector
{
    using vec_t = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    vec_t l2;
    vec_t l1;
    std::vector<bool> fixed_zero;

    static PenaltyVector zeros(Eigen::Index p)
    {
        return PenaltyVector{vec_t::Zero(p), vec_t::Zero(p), std::vector<bool>(static_cast<std::size_t>(p), false)};
    }

    bool is_fixed(Eigen::Index j) const
    {
        return !fixed_zero.empty() && fixed_zero[static_cast<std::size_t>(j)];
    }

    void validate(Eigen::Index p) const
    {
        if (l2.size() != p || l1.size() != p) throw std::invalid_argument("penalty vector size mismatch");
        if (!fixed_zero.empty() && static_cast<Eigen::Index>(fixed_zero.size()) != p) {
            throw std::invalid_argument("fixed_zero size mismatch");
        }
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!(l2(j) >= 0) || !(l1(j) >= 0) || !std::isfinite(static_cast<double>(l1(j))) ||
                !std::isfinite(static_cast<double>(l2(j)))) {
                throw std::invalid_argument("penalties must be finite and nonnegative (coefficient " +
                                            std::to_string(j) + ")");
            }
        }
    }
};

template <class Scalar>
struct SolverOptions
{
    int max_outer = 500;
    Scalar tol_objective = Scalar(1e-9);
    Scalar tol_kkt = Scalar(1e-7);
    Scalar eta_clamp = Scalar(30);
    std::ostream* trace = nullptr;  // CSV: iteration,objective,kkt
};

template <class Scalar>
struct FitResult
{
    using vec_t = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    vec_t theta;
    vec_t mu;
    Scalar objective = 0;
    Scalar loglik = 0;
    Scalar kkt = 0;
    bool converged = false;
    bool clamped = false;
    int iterations = 0;
    std::vector<Scalar> objective_trace;
};

namespace detail {

template <class Scalar>
using vec_t = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using mat_t = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
Scalar soft_threshold(Scalar z, Scalar gamma)
{
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return Scalar(0);
}

template <class Scalar>
Scalar sign(Scalar x)
{
    return x > 0 ? Scalar(1) : (x < 0 ? Scalar(-1) : Scalar(0));
}

template <class Scalar>
vec_t<Scalar> linear_predictor(const PoissonData<Scalar>& data, const vec_t<Scalar>& theta)
{
    return data.offset + data.X * theta;
}

/// X^T diag(w) X as a dense matrix.
template <class Scalar>
mat_t<Scalar> weighted_gram(const PoissonData<Scalar>& data, const vec_t<Scalar>& w)
{
    using sp_t = typename PoissonData<Scalar>::sp_mat_t;
    const vec_t<Scalar> root = w.array().sqrt().matrix();
    sp_t xw = root.asDiagonal() * data.X;
    sp_t gram = sp_t(xw.transpose()) * xw;
    return mat_t<Scalar>(gram);
}

template <class Scalar>
std::string describe_null_direction(const mat_t<Scalar>& a, const std::vector<Eigen::Index>& columns,
                                    const std::vector<std::string>* names)
{
    Eigen::SelfAdjointEigenSolver<mat_t<Scalar>> es(a);
    const vec_t<Scalar> v = es.eigenvectors().col(0);
    std::string out;
    const Scalar vmax = v.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > Scalar(0.1) * vmax) {
            const auto j = columns[static_cast<std::size_t>(i)];
            if (!out.empty()) out += ", ";
            out += names ? (*names)[static_cast<std::size_t>(j)] : "column " + std::to_string(j);
        }
    }
    return out;
}

template <class Scalar>
bool is_singular(const Eigen::LDLT<mat_t<Scalar>>& ldlt)
{
    if (ldlt.info() != Eigen::Success) return true;
    const auto d = ldlt.vectorD();
    if (d.size() == 0) return false;
    const Scalar dmax = d.cwiseAbs().maxCoeff();
    const Scalar eps = std::numeric_limits<Scalar>::epsilon();
    return !(d.minCoeff() > dmax * eps * Scalar(d.size()) * Scalar(10));
}

/// LDLT of D^-1/2 A D^-1/2 (D = diag A), so heavily ridged columns do not mask a
/// near-null direction elsewhere, or fake one.
template <class Scalar>
struct ScaledLdlt
{
    vec_t<Scalar> scale;
    Eigen::LDLT<mat_t<Scalar>> ldlt;

    explicit ScaledLdlt(const mat_t<Scalar>& a)
    {
        scale = a.diagonal().cwiseAbs().cwiseMax(std::numeric_limits<Scalar>::min()).cwiseSqrt().cwiseInverse();
        ldlt.compute(scale.asDiagonal() * a * scale.asDiagonal());
    }

    bool singular() const { return is_singular<Scalar>(ldlt); }

    template <class Rhs>
    mat_t<Scalar> solve(const Rhs& b) const
    {
        return scale.asDiagonal() * ldlt.solve(mat_t<Scalar>(scale.asDiagonal() * b));
    }
};

/// min 0.5 b'Mb + q'b + sum w_j |b_j| by cyclic coordinate descent, finished with an
/// exact solve on the detected active set when its sign pattern is self-consistent.
template <class Scalar>
vec_t<Scalar> solve_lasso_qp(const mat_t<Scalar>& m, const vec_t<Scalar>& q, const vec_t<Scalar>& w,
                             vec_t<Scalar> b)
{
    const Eigen::Index n = q.size();
    const Scalar eps = std::numeric_limits<Scalar>::epsilon();
    const Scalar scale = Scalar(1) + q.cwiseAbs().maxCoeff() + w.cwiseAbs().maxCoeff();
    const Scalar diag_floor = m.diagonal().cwiseAbs().maxCoeff() * eps * Scalar(100);
    vec_t<Scalar> mb = m * b;

    auto polish = [&](vec_t<Scalar>& out) {
        std::vector<Eigen::Index> active;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (b(j) != 0) active.push_back(j);
        }
        out = vec_t<Scalar>::Zero(n);
        if (!active.empty()) {
            const auto na = static_cast<Eigen::Index>(active.size());
            mat_t<Scalar> ma(na, na);
            vec_t<Scalar> rhs(na);
            for (Eigen::Index i = 0; i < na; ++i) {
                const auto ji = active[static_cast<std::size_t>(i)];
                for (Eigen::Index k = 0; k < na; ++k) ma(i, k) = m(ji, active[static_cast<std::size_t>(k)]);
                rhs(i) = -(q(ji) + w(ji) * sign(b(ji)));
            }
            Eigen::LDLT<mat_t<Scalar>> ldlt(ma);
            if (is_singular<Scalar>(ldlt)) return false;
            const vec_t<Scalar> ba = ldlt.solve(rhs);
            for (Eigen::Index i = 0; i < na; ++i) {
                const auto ji = active[static_cast<std::size_t>(i)];
                if (sign(ba(i)) != sign(b(ji))) return false;
                out(ji) = ba(i);
            }
        }
        const vec_t<Scalar> grad = m * out + q;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (out(j) == 0 && std::abs(grad(j)) > w(j) + Scalar(1e3) * eps * scale) return false;
        }
        return true;
    };

    for (int round = 0; round < 400; ++round) {
        Scalar max_change = 0;
        for (int sweep = 0; sweep < 50; ++sweep) {
            max_change = 0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const Scalar mjj = m(j, j);
                Scalar bj_new = 0;
                if (mjj > diag_floor) {
                    const Scalar grad = mb(j) + q(j);
                    bj_new = soft_threshold(b(j) - grad / mjj, w(j) / mjj);
                }
                const Scalar delta = bj_new - b(j);
                if (delta != 0) {
                    mb += m.col(j) * delta;
                    b(j) = bj_new;
                    max_change = std::max(max_change, std::abs(delta) * std::max(mjj, Scalar(1)));
                }
            }
            if (max_change <= Scalar(10) * eps * scale) break;
        }
        vec_t<Scalar> polished;
        if (polish(polished)) return polished;
        if (max_change <= Scalar(10) * eps * scale) break;
    }
    return b;
}

}  // namespace detail

/// Poisson negative log-likelihood sum(mu - d * log mu) (the log d! constant is
/// dropped) and its gradient X^T (mu - d). Throws when exp overflows.
template <class Scalar>
std::pair<Scalar, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> negloglik_and_gradient(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& theta, const PoissonData<Scalar>& data)
{
    using vec_t = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    if (!theta.allFinite()) throw std::invalid_argument("negloglik_and_gradient: non-finite coefficients");
    const vec_t eta = detail::linear_predictor(data, theta);
    const Scalar limit = std::log(std::numeric_limits<Scalar>::max());
    vec_t mu(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        if (!(eta(i) < limit)) {
            throw NumericalError("exp overflow in linear predictor at row " + std::to_string(i));
        }
        mu(i) = std::exp(eta(i));
    }
    const Scalar value = (mu.array() - data.y.array() * eta.array()).sum();
    const vec_t residual = mu - data.y;
    vec_t grad = data.X.transpose() * residual;
    return {value, grad};
}

/// Poisson log-likelihood including the -log d! term.
template <class Scalar>
Scalar poisson_loglik(const PoissonData<Scalar>& data, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& mu)
{
    Scalar ll = 0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const Scalar d = data.y(i);
        ll += (d > 0 ? d * std::log(mu(i)) : Scalar(0)) - mu(i) - std::lgamma(d + Scalar(1));
    }
    return ll;
}

/// Largest scaled KKT violation of the penalised objective at theta given the
/// smooth-part gradient.
template <class Scalar>
Scalar kkt_residual(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& theta,
                    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& gradient, const PenaltyVector<Scalar>& penalty)
{
    Scalar worst = 0;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
        if (penalty.is_fixed(j)) continue;
        const Scalar g = gradient(j) + penalty.l2(j) * theta(j);
        const Scalar l1 = penalty.l1(j);
        Scalar r;
        if (l1 == 0) {
            r = std::abs(g);
        } else if (theta(j) == 0) {
            r = std::max(Scalar(0), std::abs(g) - l1);
        } else {
            r = std::abs(g + l1 * detail::sign(theta(j)));
        }
        worst = std::max(worst, r);
    }
    return worst;
}

/// Scale used to make KKT residuals relative: max(1, ||X^T d||_inf).
template <class Scalar>
Scalar kkt_scale(const PoissonData<Scalar>& data)
{
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> xty = data.X.transpose() * data.y;
    return std::max(Scalar(1), xty.size() ? xty.cwiseAbs().maxCoeff() : Scalar(0));
}

/**
 * Minimise sum(mu - d eta) + sum_j (l2_j/2) theta_j^2 + sum_j l1_j |theta_j|.
 *
 * Proximal Newton: each outer step builds the quadratic model of the Poisson
 * term, eliminates the smooth (unpenalised and ridge) coordinates exactly and
 * solves the remaining weighted-lasso QP; a backtracking line search on the true
 * objective keeps the objective trace non-increasing.
 */
template <class Scalar>
FitResult<Scalar> fit(const PoissonData<Scalar>& data, const PenaltyVector<Scalar>& penalty,
                      const std::optional<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& warm_start = std::nullopt,
                      const SolverOptions<Scalar>& options = {}, const std::vector<std::string>* names = nullptr)
{
    using vec_t = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using mat_t = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index p = data.cols();
    penalty.validate(p);

    std::vector<Eigen::Index> smooth, sparse;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (penalty.is_fixed(j)) continue;
        (penalty.l1(j) > 0 ? sparse : smooth).push_back(j);
    }
    const auto ns = static_cast<Eigen::Index>(smooth.size());
    const auto nl = static_cast<Eigen::Index>(sparse.size());

    FitResult<Scalar> res;
    res.theta = warm_start && warm_start->size() == p ? *warm_start : vec_t::Zero(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        if (penalty.is_fixed(j)) res.theta(j) = 0;
    }

    const Scalar clamp = options.eta_clamp;
    const Scalar scale = kkt_scale(data);

    auto evaluate = [&](const vec_t& theta, vec_t& eta, vec_t& mu) {
        eta = detail::linear_predictor(data, theta).cwiseMax(-clamp).cwiseMin(clamp);
        mu = eta.array().exp().matrix();
        return (mu.array() - data.y.array() * eta.array()).sum() +
               Scalar(0.5) * (penalty.l2.array() * theta.array().square()).sum() +
               (penalty.l1.array() * theta.array().abs()).sum();
    };

    // objective(trial) - objective(theta), given theta's clamped predictor and mean
    auto evaluate_change = [&](const vec_t& trial, const vec_t& eta0, const vec_t& mu0, vec_t& eta1, vec_t& mu1) {
        eta1 = detail::linear_predictor(data, trial).cwiseMax(-clamp).cwiseMin(clamp);
        const vec_t d_eta = eta1 - eta0;
        mu1 = eta1.array().exp().matrix();
        const vec_t d_theta = trial - res.theta;
        return (mu0.array() * d_eta.array().unaryExpr([](Scalar x) { return std::expm1(x); }) -
                data.y.array() * d_eta.array()).sum() +
               (penalty.l2.array() * d_theta.array() * (res.theta.array() + Scalar(0.5) * d_theta.array())).sum() +
               (penalty.l1.array() * (trial.array().abs() - res.theta.array().abs())).sum();
    };

    vec_t eta, mu;
    Scalar obj = evaluate(res.theta, eta, mu);
    Scalar prev_obj = std::numeric_limits<Scalar>::infinity();
    bool converged = false;
    int iter = 0;
    for (; iter <= options.max_outer; ++iter) {
        const vec_t grad = data.X.transpose() * (mu - data.y);
        const Scalar kkt = kkt_residual(res.theta, grad, penalty) / scale;
        res.objective_trace.push_back(obj);
        if (options.trace) *options.trace << iter << ',' << static_cast<double>(obj) << ',' << static_cast<double>(kkt) << '\n';
        res.kkt = kkt;
        if (kkt <= options.tol_kkt ||
            (options.tol_objective > 0 && std::isfinite(static_cast<double>(prev_obj)) &&
             std::abs(prev_obj - obj) <= options.tol_objective * std::max(Scalar(1), std::abs(obj)))) {
            converged = true;
            break;
        }
        if (iter == options.max_outer) break;

        const mat_t hess = detail::weighted_gram(data, mu);
        const vec_t c = grad + penalty.l2.cwiseProduct(res.theta);

        mat_t a_ss(ns, ns), a_sl(ns, nl), a_ll(nl, nl);
        vec_t c_s(ns), c_l(nl), theta_l(nl), w(nl);
        for (Eigen::Index i = 0; i < ns; ++i) {
            const auto ji = smooth[static_cast<std::size_t>(i)];
            c_s(i) = c(ji);
            for (Eigen::Index k = 0; k < ns; ++k) a_ss(i, k) = hess(ji, smooth[static_cast<std::size_t>(k)]);
            a_ss(i, i) += penalty.l2(ji);
            for (Eigen::Index k = 0; k < nl; ++k) a_sl(i, k) = hess(ji, sparse[static_cast<std::size_t>(k)]);
        }
        for (Eigen::Index i = 0; i < nl; ++i) {
            const auto ji = sparse[static_cast<std::size_t>(i)];
            c_l(i) = c(ji);
            theta_l(i) = res.theta(ji);
            w(i) = penalty.l1(ji);
            for (Eigen::Index k = 0; k < nl; ++k) a_ll(i, k) = hess(ji, sparse[static_cast<std::size_t>(k)]);
            a_ll(i, i) += penalty.l2(ji);
        }

        vec_t step_s = vec_t::Zero(ns), step_l = vec_t::Zero(nl);
        if (ns > 0) {
            const detail::ScaledLdlt<Scalar> ldlt(a_ss);
            if (ldlt.singular()) {
                throw NumericalError("fit: collinear unpenalized/ridge columns: " +
                                     detail::describe_null_direction<Scalar>(a_ss, smooth, names));
            }
            const vec_t z = ldlt.solve(c_s).col(0);
            if (nl > 0) {
                const mat_t zmat = ldlt.solve(a_sl);
                const mat_t m = a_ll - a_sl.transpose() * zmat;
                const vec_t r = c_l - a_sl.transpose() * z;
                const vec_t b = detail::solve_lasso_qp<Scalar>(m, r - m * theta_l, w, theta_l);
                step_l = b - theta_l;
                step_s = -z - zmat * step_l;
            } else {
                step_s = -z;
            }
        } else if (nl > 0) {
            const vec_t b = detail::solve_lasso_qp<Scalar>(a_ll, c_l - a_ll * theta_l, w, theta_l);
            step_l = b - theta_l;
        }

        vec_t step = vec_t::Zero(p);
        for (Eigen::Index i = 0; i < ns; ++i) step(smooth[static_cast<std::size_t>(i)]) = step_s(i);
        for (Eigen::Index i = 0; i < nl; ++i) step(sparse[static_cast<std::size_t>(i)]) = step_l(i);

        // predicted decrease including the nonsmooth part
        const Scalar decrease = c.dot(step) + (penalty.l1.array() * ((res.theta + step).array().abs() -
                                                                     res.theta.array().abs())).sum();
        if (!(decrease < 0)) {
            // no descent direction left at working precision
            converged = kkt <= options.tol_kkt * Scalar(1e3);
            break;
        }
        // Armijo search on the change in objective, computed directly (expm1) so that
        // steps below the rounding level of the objective itself are still ranked
        vec_t trial_eta, trial_mu, trial;
        Scalar t = 1, change = 0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            trial = res.theta + t * step;
            change = evaluate_change(trial, eta, mu, trial_eta, trial_mu);
            if (change <= Scalar(1e-4) * t * decrease) {
                accepted = true;
                break;
            }
            t *= Scalar(0.5);
        }
        prev_obj = obj;
        if (!accepted) {
            converged = kkt <= options.tol_kkt * Scalar(1e3);
            break;
        }
        res.theta = trial;
        eta = trial_eta;
        mu = trial_mu;
        obj = std::min(obj, obj + change);
    }

    res.iterations = iter;
    // the trace accumulates changes; report the objective evaluated afresh
    res.objective = evaluate(res.theta, eta, mu);

    // recheck with the unclamped predictor when the clamp binds
    const vec_t raw_eta = detail::linear_predictor(data, res.theta);
    res.clamped = (raw_eta.array().abs() >= clamp).any();
    if (res.clamped && raw_eta.maxCoeff() < Scalar(700)) {
        const vec_t raw_mu = raw_eta.array().exp().matrix();
        const vec_t grad = data.X.transpose() * (raw_mu - data.y);
        res.kkt = kkt_residual(res.theta, grad, penalty) / scale;
        converged = converged && res.kkt <= options.tol_kkt * Scalar(1e3);
    } else if (res.clamped) {
        converged = false;
    }
    res.converged = converged;
    res.mu = mu;
    res.loglik = poisson_loglik(data, mu);
    return res;
}

/// Coefficients entering the hat matrix: free and not zeroed by an l1 penalty.
template <class Scalar>
std::vector<bool> active_set(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& theta, const PenaltyVector<Scalar>& penalty)
{
    std::vector<bool> active(static_cast<std::size_t>(theta.size()));
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
        active[static_cast<std::size_t>(j)] = !penalty.is_fixed(j) && !(penalty.l1(j) > 0 && theta(j) == 0);
    }
    return active;
}

/**
 * Diagonal of H = (X^T W X + diag(l2))^{-1} X^T W X over the active set,
 * W = diag(mu_hat). Entries of inactive coefficients are 0.
 */
template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> hat_diagonal(const FitResult<Scalar>& fit, const PoissonData<Scalar>& data,
                                                      const PenaltyVector<Scalar>& penalty,
                                                      const std::vector<std::string>* names = nullptr)
{
    using vec_t = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using mat_t = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index p = data.cols();
    const auto active = active_set(fit.theta, penalty);
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (active[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    const auto na = static_cast<Eigen::Index>(idx.size());
    vec_t out = vec_t::Zero(p);
    if (na == 0) return out;

    const mat_t hess = detail::weighted_gram(data, fit.mu);
    mat_t h(na, na), a(na, na);
    for (Eigen::Index i = 0; i < na; ++i) {
        for (Eigen::Index k = 0; k < na; ++k) h(i, k) = hess(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(k)]);
    }
    a = h;
    for (Eigen::Index i = 0; i < na; ++i) a(i, i) += penalty.l2(idx[static_cast<std::size_t>(i)]);
    const detail::ScaledLdlt<Scalar> ldlt(a);
    if (ldlt.singular()) {
        throw NumericalError("hat matrix: singular system along " + detail::describe_null_direction<Scalar>(a, idx, names));
    }
    const mat_t hat = ldlt.solve(h);
    for (Eigen::Index i = 0; i < na; ++i) out(idx[static_cast<std::size_t>(i)]) = hat(i, i);
    return out;
}

/// Trace of the hat matrix restricted to block ∩ active set.
template <class Scalar>
Scalar hat_block_df(const FitResult<Scalar>& fit, const PoissonData<Scalar>& data, const PenaltyVector<Scalar>& penalty,
                    const std::vector<Eigen::Index>& block)
{
    const auto diag = hat_diagonal(fit, data, penalty);
    Scalar df = 0;
    for (auto j : block) df += diag(j);
    return df;
}

}  // namespace pennma
