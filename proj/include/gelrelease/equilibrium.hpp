#pragma once

#include <gelrelease/error.hpp>
#include <gelrelease/params.hpp>

#include <cmath>
#include <string>

namespace gelrelease {

/// Free-volume drug diffusivity exp(-beta/(J-1)); exactly 0 for J <= 1.
inline double drug_diffusivity(double J, double beta)
{
    if (!(J > 1.0))
        return 0.0;
    return std::exp(-beta / (J - 1.0));
}

/// Left-hand side of the homogeneous equilibrium condition (chemical potential of a
/// uniformly swollen, traction-free gel), written in terms of x = J - 1.
inline double equilibrium_residual(double x, double chi, double Ghat)
{
    double J = 1.0 + x;
    double inv = 1.0 / J;
    return std::log(x * inv) + inv + chi * inv * inv + Ghat * (std::cbrt(inv) - inv);
}

/// d/dx of equilibrium_residual.
inline double equilibrium_residual_slope(double x, double chi, double Ghat)
{
    double J = 1.0 + x;
    double inv = 1.0 / J;
    return 1.0 / (x * J) - inv * inv - 2.0 * chi * inv * inv * inv +
           Ghat * (-std::cbrt(inv) * inv / 3.0 + inv * inv);
}

/// Equilibrium swelling ratio J_inf > 1: geometric bisection on J - 1 over
/// [1e-9, 1e9] to relative width 1e-8, then Newton polish to |residual| <= 1e-12.
inline double equilibrium_swelling(double chi, double Ghat)
{
    if (!(chi >= 0.0) || !(Ghat >= 0.0))
        throw ConfigError("equilibrium: need chi >= 0 and Ghat >= 0");
    double lo = 1e-9, hi = 1e9;
    double flo = equilibrium_residual(lo, chi, Ghat);
    double fhi = equilibrium_residual(hi, chi, Ghat);
    if (!(flo < 0.0 && fhi > 0.0))
        throw NumericalError("equilibrium: no finite equilibrium (no sign change for chi=" +
                             format_double(chi) + ", Ghat=" + format_double(Ghat) + ")");
    while (hi / lo - 1.0 > 1e-8) {
        double mid = std::sqrt(lo * hi);
        if (equilibrium_residual(mid, chi, Ghat) < 0.0)
            lo = mid;
        else
            hi = mid;
    }
    double x = std::sqrt(lo * hi);
    double fx = equilibrium_residual(x, chi, Ghat);
    // The residual is very flat for highly swollen gels, so a small residual alone does
    // not pin the root; polish until the Newton step itself is at rounding level.
    for (int it = 0; it < 50 && fx != 0.0; ++it) {
        double step = fx / equilibrium_residual_slope(x, chi, Ghat);
        double next = x - step;
        if (!(next > 0.0))
            next = 0.5 * x;
        double fn = equilibrium_residual(next, chi, Ghat);
        if (std::abs(fn) > std::abs(fx))
            break;
        if (std::abs(step) <= 4e-16 * x) {
            x = next;
            break;
        }
        x = next;
        fx = fn;
    }
    return 1.0 + x;
}

/// Equilibrium drug mobility D^d(J_inf) * J_inf^(-2/3).
inline double equilibrium_mobility(double chi, double Ghat, double beta)
{
    double J = equilibrium_swelling(chi, Ghat);
    return drug_diffusivity(J, beta) / std::cbrt(J * J);
}

struct EquilibriumState {
    double chi = 0.0;
    double Ghat = 0.0;
    double J_inf = 1.0;
    double Dd_eq = 0.0;
    double mobility_eq = 0.0;
    /// Dhat * mobility * pi^2: slowest Dirichlet mode sin(pi R)/R of the unit ball.
    double decay_rate = 0.0;
    /// Same expression with a single factor of pi, kept for comparison.
    double decay_rate_single_pi = 0.0;
};

inline EquilibriumState equilibrium_state(double chi, double Ghat, double beta, double Dhat)
{
    EquilibriumState s;
    s.chi = chi;
    s.Ghat = Ghat;
    s.J_inf = equilibrium_swelling(chi, Ghat);
    s.Dd_eq = drug_diffusivity(s.J_inf, beta);
    s.mobility_eq = s.Dd_eq / std::cbrt(s.J_inf * s.J_inf);
    s.decay_rate = Dhat * s.mobility_eq * kPi * kPi;
    s.decay_rate_single_pi = Dhat * s.mobility_eq * kPi;
    return s;
}

inline double asymptotic_decay_rate(const ParamSet& p)
{
    return equilibrium_state(p.chi, p.Ghat, p.beta, p.Dhat).decay_rate;
}

} // namespace gelrelease
