#pragma once

#include <gelrelease/error.hpp>
#include <gelrelease/params.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace gelrelease {

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

/// Convex quadratic program  min 1/2 d'Sd - d'q + c0  s.t.  0 <= d <= u, sum(d) = budget.
struct QpProblem {
    Eigen::MatrixXd S;
    Eigen::VectorXd q;
    double c0 = 0.0;
    double budget = kFourThirdsPi;
    Eigen::VectorXd u; // +inf where unbounded

    [[nodiscard]] int size() const { return static_cast<int>(q.size()); }

    [[nodiscard]] double objective(const Eigen::VectorXd& d) const
    {
        return 0.5 * d.dot(S * d) - d.dot(q) + c0;
    }
};

/// Euclidean projection onto {0 <= d <= u, sum(d) = c}.
///
/// d_i = clamp(v_i - lambda, 0, u_i); lambda is bracketed by bisection, then
/// recomputed in closed form from the identified free set so the budget holds to
/// rounding.
inline Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& v, const Eigen::VectorXd& u,
                                              double c)
{
    const int n = static_cast<int>(v.size());
    if (u.size() != v.size() || n == 0)
        throw ConfigError("projection: size mismatch");
    if (!(c >= 0.0))
        throw ConfigError("projection: budget must be >= 0");
    double cap = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!(u[i] > 0.0))
            throw ConfigError("projection: upper bounds must be > 0");
        cap += u[i];
    }
    // a budget equal to the total capacity up to rounding pins every weight at its cap
    if (cap < c * (1.0 - 1e-14))
        throw ConfigError("projection: infeasible budget (sum of upper bounds " +
                          format_double(cap) + " < " + format_double(c) + ")");
    if (cap <= c)
        return u;

    auto total = [&](double lam) {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            s += std::clamp(v[i] - lam, 0.0, u[i]);
        return s;
    };
    double hi = v.maxCoeff();
    double lo = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        lo = std::min(lo, std::isfinite(u[i]) ? v[i] - u[i] : v[i] - c);
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
            break;
        if (total(mid) >= c)
            lo = mid;
        else
            hi = mid;
    }
    double lam = 0.5 * (lo + hi);

    // Closed form on the free set identified by the bracket.
    double free_sum = 0.0, upper_sum = 0.0;
    int nfree = 0;
    for (int i = 0; i < n; ++i) {
        double x = v[i] - lam;
        if (x >= u[i])
            upper_sum += u[i];
        else if (x > 0.0) {
            free_sum += v[i];
            ++nfree;
        }
    }
    if (nfree > 0) {
        double exact = (free_sum - (c - upper_sum)) / nfree;
        if (exact >= lo && exact <= hi)
            lam = exact;
    }
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i)
        d[i] = std::clamp(v[i] - lam, 0.0, u[i]);
    return d;
}

struct QpOptions {
    int max_iterations = 200000;
    double tolerance = 1e-8;       // projected-gradient / KKT tolerance, times max(1, |q|_inf)
    int polish_every = 500;        // try an active-set finish every this many iterations
    int active_set_max = 2000;
    bool polish = true;
};

struct QpResult {
    Eigen::VectorXd d;
    double H_star = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;       // accelerated projected-gradient iterations
    int active_set_steps = 0; // polishing steps
    bool certified = false;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration (relative change < acc).
inline double largest_eigenvalue(const Eigen::MatrixXd& S, double acc = 1e-2)
{
    const int n = static_cast<int>(S.rows());
    Eigen::VectorXd x = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
    // deterministic perturbation so x is not orthogonal to the top eigenvector by symmetry
    for (int i = 0; i < n; ++i)
        x[i] += 1e-3 * std::sin(1.0 + i);
    x.normalize();
    double lam = 0.0;
    for (int it = 0; it < 1000; ++it) {
        Eigen::VectorXd y = S * x;
        double next = x.dot(y);
        double ny = y.norm();
        if (ny == 0.0)
            return 0.0;
        x = y / ny;
        if (it > 3 && std::abs(next - lam) <= 0.1 * acc * std::abs(next)) {
            lam = next;
            break;
        }
        lam = next;
    }
    return lam;
}

/// First-order optimality residual max_i |d_i - P(d - grad)_i|, zero exactly at a
/// minimiser of the convex program.
inline double kkt_residual(const QpProblem& qp, const Eigen::VectorXd& d)
{
    Eigen::VectorXd g = qp.S * d - qp.q;
    Eigen::VectorXd step = project_capped_simplex(d - g, qp.u, qp.budget);
    return (d - step).cwiseAbs().maxCoeff();
}

namespace qp_detail {

enum class Bound : signed char { Free = 0, Lower = 1, Upper = 2 };

/// Primal active-set method started from a feasible point. Returns true on a
/// KKT point of the working set with correctly signed multipliers.
inline bool active_set(const QpProblem& qp, Eigen::VectorXd& x, int max_steps, double tol,
                       int& steps)
{
    const int n = qp.size();
    std::vector<Bound> state(n, Bound::Free);
    for (int i = 0; i < n; ++i) {
        if (x[i] <= 0.0) {
            x[i] = 0.0;
            state[i] = Bound::Lower;
        } else if (x[i] >= qp.u[i]) {
            x[i] = qp.u[i];
            state[i] = Bound::Upper;
        }
    }
    const double sscale = std::max(1.0, qp.S.cwiseAbs().maxCoeff());
    const double reg = 1e-13 * sscale;
    // After an unblocked full step x minimises the working face; re-solving would
    // only return rounding-level steps on an ill-conditioned S.
    bool at_face_minimum = false;

    for (steps = 0; steps < max_steps; ++steps) {
        std::vector<int> F;
        for (int i = 0; i < n; ++i)
            if (state[i] == Bound::Free)
                F.push_back(i);
        Eigen::VectorXd g = qp.S * x - qp.q;
        const int m = static_cast<int>(F.size());

        Eigen::VectorXd p = Eigen::VectorXd::Zero(m);
        double nu = 0.0;
        if (m > 0 && !at_face_minimum) {
            Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m + 1, m + 1);
            Eigen::VectorXd rhs(m + 1);
            for (int a = 0; a < m; ++a) {
                for (int b = 0; b < m; ++b)
                    K(a, b) = qp.S(F[a], F[b]);
                K(a, a) += reg;
                K(a, m) = 1.0;
                K(m, a) = 1.0;
                rhs[a] = -g[F[a]];
            }
            rhs[m] = 0.0;
            Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
            if (!sol.allFinite())
                return false;
            p = sol.head(m);
            nu = sol[m];
        }

        double pmax = m > 0 ? p.cwiseAbs().maxCoeff() : 0.0;
        if (at_face_minimum || pmax <= 1e-15 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
            at_face_minimum = false;
            // Stationary on the working set: multiplier of the budget row is nu,
            // reduced gradient of bound i is g_i + nu.
            if (m > 0) {
                nu = 0.0;
                for (int i : F)
                    nu -= g[i];
                nu /= m;
            } else {
                // all variables at bounds; pick nu inside the admissible interval
                double lo = -std::numeric_limits<double>::infinity();
                double hi = std::numeric_limits<double>::infinity();
                for (int i = 0; i < n; ++i) {
                    if (state[i] == Bound::Lower)
                        lo = std::max(lo, -g[i]);
                    else
                        hi = std::min(hi, -g[i]);
                }
                nu = std::isfinite(lo) ? (std::isfinite(hi) ? 0.5 * (lo + hi) : lo) : hi;
            }
            int worst = -1;
            double worst_v = tol;
            for (int i = 0; i < n; ++i) {
                double rg = g[i] + nu;
                double viol = 0.0;
                if (state[i] == Bound::Lower)
                    viol = -rg;
                else if (state[i] == Bound::Upper)
                    viol = rg;
                if (viol > worst_v) {
                    worst_v = viol;
                    worst = i;
                }
            }
            if (worst < 0)
                return true;
            state[worst] = Bound::Free;
            continue;
        }

        double alpha = 1.0;
        int block = -1;
        for (int a = 0; a < m; ++a) {
            int i = F[a];
            if (p[a] < 0.0) {
                double lim = x[i] / -p[a];
                if (lim < alpha) {
                    alpha = lim;
                    block = i;
                }
            } else if (p[a] > 0.0 && std::isfinite(qp.u[i])) {
                double lim = (qp.u[i] - x[i]) / p[a];
                if (lim < alpha) {
                    alpha = lim;
                    block = i;
                }
            }
        }
        for (int a = 0; a < m; ++a)
            x[F[a]] += alpha * p[a];
        if (block >= 0) {
            bool upper = false;
            for (int a = 0; a < m; ++a)
                if (F[a] == block)
                    upper = p[a] > 0.0;
            x[block] = upper ? qp.u[block] : 0.0;
            state[block] = upper ? Bound::Upper : Bound::Lower;
        } else {
            at_face_minimum = true;
        }
        for (int i = 0; i < n; ++i)
            x[i] = std::clamp(x[i], 0.0, qp.u[i]);
        // restore the budget on the free set against accumulated rounding
        std::vector<int> free_now;
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            s += x[i];
            if (state[i] == Bound::Free)
                free_now.push_back(i);
        }
        if (!free_now.empty()) {
            double shift = (qp.budget - s) / static_cast<double>(free_now.size());
            for (int i : free_now)
                x[i] = std::clamp(x[i] + shift, 0.0, qp.u[i]);
        }
    }
    return false;
}

inline void validate(const QpProblem& qp)
{
    const int n = qp.size();
    if (n == 0 || qp.S.rows() != n || qp.S.cols() != n || qp.u.size() != n)
        throw ConfigError("solve_qp: inconsistent problem dimensions");
    double cap = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!(qp.u[i] > 0.0))
            throw ConfigError("solve_qp: upper bounds must be > 0");
        cap += qp.u[i];
    }
    if (cap < qp.budget * (1.0 - 1e-14))
        throw ConfigError("solve_qp: infeasible budget");
}

} // namespace qp_detail

/// Accelerated projected gradient (step 1/L, adaptive restart) with an exact
/// capped-simplex projection, finished by a primal active-set pass on the
/// identified face. The returned point is certified when its KKT residual is
/// below tolerance * max(1, |q|_inf); by convexity it is then a global minimiser.
inline QpResult solve_qp(const QpProblem& qp, const QpOptions& opt = {},
                         const Eigen::VectorXd* start = nullptr)
{
    qp_detail::validate(qp);
    const int n = qp.size();
    const double tol = opt.tolerance * std::max(1.0, qp.q.cwiseAbs().maxCoeff());

    Eigen::VectorXd x;
    if (start) {
        if (start->size() != n)
            throw ConfigError("solve_qp: start point has wrong size");
        x = project_capped_simplex(*start, qp.u, qp.budget);
    } else {
        x = project_capped_simplex(Eigen::VectorXd::Constant(n, qp.budget / n), qp.u, qp.budget);
    }

    double L = largest_eigenvalue(qp.S) * 1.02; // power iteration is accurate to ~1%
    if (!(L > 0.0))
        L = 1.0;

    QpResult res;
    auto finish = [&](Eigen::VectorXd cand, int as_steps) {
        double r = kkt_residual(qp, cand);
        if (res.d.size() == 0 || r < res.kkt_residual) {
            res.d = std::move(cand);
            res.kkt_residual = r;
            res.active_set_steps = as_steps;
        }
        return r <= tol;
    };

    Eigen::VectorXd y = x, x_prev = x;
    double t = 1.0;
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        Eigen::VectorXd g = qp.S * y - qp.q;
        Eigen::VectorXd x_new = project_capped_simplex(y - g / L, qp.u, qp.budget);
        // gradient-mapping norm at y
        double pg = L * (y - x_new).cwiseAbs().maxCoeff();
        if ((y - x_new).dot(x_new - x) > 0.0) {
            t = 1.0; // restart momentum
            y = x_new;
        } else {
            double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            y = x_new + ((t - 1.0) / t_next) * (x_new - x);
            t = t_next;
        }
        x_prev = x;
        x = x_new;
        if (pg <= tol) {
            ++it;
            break;
        }
        if (opt.polish && (it + 1) % opt.polish_every == 0) {
            Eigen::VectorXd cand = x;
            int steps = 0;
            qp_detail::active_set(qp, cand, opt.active_set_max, tol, steps);
            if (finish(cand, steps)) {
                ++it;
                res.iterations = it;
                res.certified = true;
                res.H_star = qp.objective(res.d);
                return res;
            }
        }
    }
    res.iterations = it;
    bool ok = finish(x, 0);
    if (opt.polish && !ok) {
        Eigen::VectorXd cand = x;
        int steps = 0;
        qp_detail::active_set(qp, cand, opt.active_set_max, tol, steps);
        ok = finish(cand, steps);
    }
    res.certified = res.kkt_residual <= tol;
    res.H_star = qp.objective(res.d);
    return res;
}

/// Random feasible point: projection of a uniform random vector scaled to the budget.
inline Eigen::VectorXd random_feasible(const QpProblem& qp, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const int n = qp.size();
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i)
        v[i] = U(rng) * 2.0 * qp.budget / n;
    return project_capped_simplex(v, qp.u, qp.budget);
}

} // namespace gelrelease
