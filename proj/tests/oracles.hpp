#pragma once

#include <gelrelease/qp.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

// Slow reference algorithms used to check the production QP code.
namespace oracles {

using namespace gelrelease;

/// Projection by exhaustive breakpoint search: sum(clamp(v - lam, 0, u)) is piecewise
/// linear in lam with kinks at v_i and v_i - u_i; locate the segment containing the
/// budget and interpolate.
inline Eigen::VectorXd breakpoint_projection(const Eigen::VectorXd& v, const Eigen::VectorXd& u, double c)
{
    std::vector<double> bp;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        bp.push_back(v[i]);
        if (std::isfinite(u[i]))
            bp.push_back(v[i] - u[i]);
    }
    bp.push_back(v.minCoeff() - c - 1.0);
    std::sort(bp.begin(), bp.end());
    auto total = [&](double lam) {
        double s = 0;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            s += std::clamp(v[i] - lam, 0.0, u[i]);
        return s;
    };
    double lam = total(bp.front()) <= c ? bp.front() : bp.back(); // budget at full capacity
    for (std::size_t k = bp.size() - 1; k > 0; --k) {
        double hi = bp[k], lo = bp[k - 1];
        double shi = total(hi), slo = total(lo);
        if (slo >= c && shi <= c) {
            lam = slo == shi ? hi : lo + (slo - c) / (slo - shi) * (hi - lo);
            break;
        }
    }
    Eigen::VectorXd d(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
        d[i] = std::clamp(v[i] - lam, 0.0, u[i]);
    return d;
}

/// Global minimum over all 3^n assignments of lower / upper / free to every weight:
/// each pattern fixes the bounded weights and solves the equality-constrained
/// problem on the free ones by a minimum-norm KKT solve; feasible candidates compete.
inline double brute_force_minimum(const QpProblem& qp)
{
    const int n = qp.size();
    int patterns = 1;
    for (int i = 0; i < n; ++i)
        patterns *= 3;
    double best = INFINITY;
    for (int code = 0; code < patterns; ++code) {
        std::vector<int> state(n);
        int c = code;
        bool skip = false;
        for (int i = 0; i < n; ++i) {
            state[i] = c % 3;
            c /= 3;
            if (state[i] == 2 && !std::isfinite(qp.u[i]))
                skip = true;
        }
        if (skip)
            continue;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
        std::vector<int> F;
        double fixed = 0.0;
        for (int i = 0; i < n; ++i) {
            if (state[i] == 2) {
                x[i] = qp.u[i];
                fixed += qp.u[i];
            } else if (state[i] == 1) {
                F.push_back(i);
            }
        }
        const int m = static_cast<int>(F.size());
        if (m == 0) {
            if (std::abs(fixed - qp.budget) > 1e-12)
                continue;
        } else {
            Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m + 1, m + 1);
            Eigen::VectorXd rhs(m + 1);
            Eigen::VectorXd Sx = qp.S * x;
            for (int a = 0; a < m; ++a) {
                for (int b = 0; b < m; ++b)
                    K(a, b) = qp.S(F[a], F[b]);
                K(a, m) = K(m, a) = 1.0;
                rhs[a] = qp.q[F[a]] - Sx[F[a]];
            }
            rhs[m] = qp.budget - fixed;
            Eigen::VectorXd sol = K.completeOrthogonalDecomposition().solve(rhs);
            if ((K * sol - rhs).norm() > 1e-9 * (1.0 + rhs.norm()))
                continue;
            bool feasible = true;
            for (int a = 0; a < m; ++a) {
                if (sol[a] < -1e-12 || sol[a] > qp.u[F[a]] + 1e-12)
                    feasible = false;
                x[F[a]] = std::clamp(sol[a], 0.0, qp.u[F[a]]);
            }
            if (!feasible)
                continue;
        }
        best = std::min(best, qp.objective(x));
    }
    return best;
}

} // namespace oracles
