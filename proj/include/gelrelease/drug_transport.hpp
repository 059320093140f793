#pragma once

#include <gelrelease/banded.hpp>
#include <gelrelease/equilibrium.hpp>
#include <gelrelease/error.hpp>
#include <gelrelease/gel_solver.hpp>
#include <gelrelease/grid.hpp>
#include <gelrelease/params.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace gelrelease {

/// Quadrature weights on the output grid t_k = k*dt.
///
/// Every sampled series (efflux, target) is a cell average over (t_{k-1}, t_k]
/// stored at t_k, so the weights are 0 at t_0 and dt elsewhere. With this rule the
/// integral of the implicit-Euler efflux equals the mass released exactly.
inline std::vector<double> interval_weights(long n_intervals, double dt)
{
    std::vector<double> w(n_intervals + 1, dt);
    w[0] = 0.0;
    return w;
}

inline double integrate(std::span<const double> w, std::span<const double> f)
{
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k)
        s += w[k] * f[k];
    return s;
}

/// Drug concentration history and release diagnostics on the output grid.
struct DrugField {
    std::vector<double> times;
    std::vector<std::vector<double>> Nd; // per instant, midpoints; empty unless requested
    std::vector<double> efflux_boundary; // 4 pi * surface flux
    std::vector<double> efflux_mass;     // -(mass difference)/dt over (t_{k-1}, t_k]
    std::vector<double> mass;            // 4 pi * sum V_i Nd_i

    [[nodiscard]] std::size_t size() const { return times.size(); }
};

struct Efflux {
    std::vector<double> boundary;
    std::vector<double> mass_difference;
};

/// 4 pi * sum of cell contents using exact shell volumes.
inline double drug_mass(const Grid& g, std::span<const double> Nd)
{
    double m = 0.0;
    for (int i = 0; i < g.M; ++i)
        m += g.volume[i] * Nd[i];
    return 4.0 * kPi * m;
}

namespace drug {

/// Dhat * D^d(J) / lambda_r^2 at every midpoint of one gel snapshot.
inline void conductivity(const GelSnapshot& s, const ParamSet& prm, std::vector<double>& k)
{
    std::size_t M = s.J.size();
    k.resize(M);
    for (std::size_t i = 0; i < M; ++i) {
        double lr = s.lambda_r[i];
        k[i] = prm.Dhat * drug_diffusivity(s.J[i], prm.beta) / (lr * lr);
    }
}

inline double surface_efflux(const Grid& g, std::span<const double> k, std::span<const double> Nd)
{
    // ghost midpoint holds -Nd so the edge value vanishes
    return 4.0 * kPi * k[g.M - 1] * 2.0 * Nd[g.M - 1] / g.dR;
}

/// Implicit Euler propagator for the linear drug problem on a stored gel history.
///
/// All loadings share one factorised tridiagonal matrix per step, so advancing many
/// loadings together costs one factorisation plus one triangular sweep each.
class Propagator {
  public:
    Propagator(const GelHistory& gel, const Grid& g, const ParamSet& prm)
        : gel_(gel), g_(g), prm_(prm), tri_(g.M)
    {
        if (gel.M != g.M || prm.M != g.M)
            throw ConfigError("solve_drug: grid, gel history and parameters disagree on M");
        if (gel.digest != gel_digest(prm))
            throw ConfigError("solve_drug: gel history digest " + hex_digest(gel.digest) +
                              " does not match parameters (" + hex_digest(gel_digest(prm)) + ")");
        if (static_cast<long>(gel.size()) != prm.n_out() + 1)
            throw ConfigError("solve_drug: gel history does not cover [0, T_end]");
    }

    [[nodiscard]] long steps() const { return prm_.n_out(); }

    /// Conductivities at output instant k (midpoints).
    const std::vector<double>& conductivity_at(long k)
    {
        conductivity(gel_.at(k), prm_, k_);
        return k_;
    }

    /// Assemble and factorise the step (t_{k-1}, t_k]; returns conductivities at t_k.
    const std::vector<double>& prepare(long k)
    {
        const int M = g_.M;
        const double dt = prm_.dt_out;
        const double dR = g_.dR;
        conductivity(gel_.at(k), prm_, k_);
        auto& lo = tri_.lower();
        auto& di = tri_.diag();
        auto& up = tri_.upper();
        for (int i = 0; i < M; ++i) {
            double Rm = g_.edges[i], Rp = g_.edges[i + 1];
            double cm = (i > 0) ? Rm * Rm * 0.5 * (k_[i - 1] + k_[i]) / dR : 0.0;
            double cp = (i + 1 < M) ? Rp * Rp * 0.5 * (k_[i] + k_[i + 1]) / dR
                                    : Rp * Rp * k_[i] * 2.0 / dR;
            double v = g_.volume[i] / dt;
            lo[i] = -cm;
            up[i] = (i + 1 < M) ? -cp : 0.0;
            di[i] = v + cm + cp;
        }
        tri_.factorize();
        return k_;
    }

    /// Advance one loading through the prepared step (in place).
    void advance(std::span<double> Nd) const
    {
        const double dt = prm_.dt_out;
        for (int i = 0; i < g_.M; ++i)
            Nd[i] *= g_.volume[i] / dt;
        tri_.solve(Nd);
    }

  private:
    const GelHistory& gel_;
    const Grid& g_;
    const ParamSet& prm_;
    Tridiagonal tri_;
    std::vector<double> k_;
};

} // namespace drug

/// Solve the drug problem for initial midpoint loading d0 on a stored gel history.
inline DrugField solve_drug(const GelHistory& gel, const Grid& g, std::span<const double> d0,
                            const ParamSet& prm, bool keep_profiles = false)
{
    if (static_cast<int>(d0.size()) != g.M)
        throw ConfigError("solve_drug: loading has " + std::to_string(d0.size()) +
                          " values, expected M=" + std::to_string(g.M));
    for (double v : d0)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ConfigError("solve_drug: initial loading must be finite and non-negative");

    drug::Propagator prop(gel, g, prm);
    const long K = prop.steps();
    DrugField out;
    out.times.resize(K + 1);
    out.efflux_boundary.resize(K + 1);
    out.efflux_mass.resize(K + 1);
    out.mass.resize(K + 1);

    std::vector<double> N(d0.begin(), d0.end());
    out.times[0] = 0.0;
    out.mass[0] = drug_mass(g, N);
    out.efflux_boundary[0] = drug::surface_efflux(g, prop.conductivity_at(0), N);
    out.efflux_mass[0] = out.efflux_boundary[0];
    if (keep_profiles)
        out.Nd.push_back(N);

    for (long k = 1; k <= K; ++k) {
        const auto& kk = prop.prepare(k);
        prop.advance(N);
        out.times[k] = prm.time_at(k);
        out.mass[k] = drug_mass(g, N);
        out.efflux_boundary[k] = drug::surface_efflux(g, kk, N);
        out.efflux_mass[k] = (out.mass[k - 1] - out.mass[k]) / prm.dt_out;
        if (keep_profiles)
            out.Nd.push_back(N);
    }
    return out;
}

inline Efflux efflux(const DrugField& drug)
{
    return {drug.efflux_boundary, drug.efflux_mass};
}

/// 1 - mass(t)/mass(0).
inline std::vector<double> fractional_release(const DrugField& drug)
{
    if (drug.mass.empty() || !(drug.mass[0] > 0.0))
        throw ConfigError("fractional_release: initial drug mass is zero");
    std::vector<double> R(drug.mass.size());
    for (std::size_t k = 0; k < R.size(); ++k)
        R[k] = 1.0 - drug.mass[k] / drug.mass[0];
    return R;
}

/// First time the release curve reaches `level`, linearly interpolated.
inline double release_time(std::span<const double> times, std::span<const double> released,
                           double level)
{
    if (!(level >= 0.0 && level < 1.0))
        throw ConfigError("release_time: level must lie in [0, 1)");
    if (released.empty())
        throw ConfigError("release_time: empty series");
    if (released[0] >= level)
        return times[0];
    for (std::size_t k = 1; k < released.size(); ++k) {
        if (released[k] >= level) {
            double a = released[k - 1], b = released[k];
            double s = (level - a) / (b - a);
            return times[k - 1] + s * (times[k] - times[k - 1]);
        }
    }
    throw NumericalError("release_time: level " + format_double(level) +
                         " not reached by t=" + format_double(times.back()));
}

inline double release_time(const DrugField& drug, double level)
{
    auto R = fractional_release(drug);
    return release_time(drug.times, R, level);
}

/// Least-squares slope of -log F over samples with t in [t_from, t_to]; F must be
/// positive there.
inline double fitted_decay_rate(std::span<const double> times, std::span<const double> F,
                                double t_from, double t_to)
{
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < times.size(); ++k) {
        double t = times[k];
        if (t < t_from || t > t_to)
            continue;
        if (!(F[k] > 0.0))
            throw NumericalError("fitted_decay_rate: non-positive efflux at t=" + format_double(t));
        double y = std::log(F[k]);
        n += 1;
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
    }
    if (n < 3)
        throw ConfigError("fitted_decay_rate: fewer than three samples in the fit window");
    double den = n * sxx - sx * sx;
    return -(n * sxy - sx * sy) / den;
}

/// Gel history frozen at a homogeneous swelling ratio J for all output instants.
/// Used to compare against closed-form diffusion in a fixed sphere and for the
/// quasi-static limit in which the gel is already at equilibrium.
inline GelHistory uniform_gel_history(const Grid& g, const ParamSet& prm, double J)
{
    GelHistory h;
    h.digest = gel_digest(prm);
    h.M = g.M;
    GelState s = uniform_state(g, J);
    long K = prm.n_out();
    h.snapshots.reserve(K + 1);
    for (long k = 0; k <= K; ++k) {
        s.t = prm.time_at(k);
        h.snapshots.push_back(gel::snapshot(g, prm, s, 0.0));
    }
    return h;
}

} // namespace gelrelease
