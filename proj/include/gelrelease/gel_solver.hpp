#pragma once

#include <gelrelease/banded.hpp>
#include <gelrelease/error.hpp>
#include <gelrelease/grid.hpp>
#include <gelrelease/params.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gelrelease {

/// Instantaneous hydrogel configuration: Eulerian radius r on cell edges, nominal
/// water concentration Nw and pressure p on midpoints.
struct GelState {
    double t = 0.0;
    std::vector<double> r;
    std::vector<double> Nw;
    std::vector<double> p;
};

struct StepSchedule {
    double dt_init = 1e-6;
    double dt_max = 0.0125;
    double growth = 1.2;
    double newton_tol = 1e-10;
    int newton_max = 50;
    int max_halvings = 8; // backtracking halvings per Newton update
    /// Accepted in place of newton_tol only once Newton updates stagnate at rounding level.
    double roundoff_tol = 1e-8;
    double water_seed = 1e-6;

    static StepSchedule for_params(const ParamSet& p)
    {
        StepSchedule s;
        s.dt_max = p.dt_out;
        return s;
    }

    void validate() const
    {
        if (!(dt_init > 0.0 && dt_init <= dt_max))
            throw ConfigError("schedule: need 0 < dt_init <= dt_max");
        if (!(growth >= 1.0))
            throw ConfigError("schedule: growth must be >= 1");
        if (!(newton_tol > 0.0) || newton_max < 1)
            throw ConfigError("schedule: need newton_tol > 0 and newton_max >= 1");
        if (!(water_seed >= 0.0))
            throw ConfigError("schedule: water_seed must be >= 0");
    }
};

/// Stored output instant with derived kinematics.
struct GelSnapshot {
    double t = 0.0;
    std::vector<double> r;            // edges
    std::vector<double> Nw;           // midpoints
    std::vector<double> p;            // midpoints
    std::vector<double> J;            // midpoints, cell volume ratio
    std::vector<double> lambda_r;     // midpoints
    std::vector<double> lambda_theta; // midpoints
    std::vector<double> mu;           // midpoints
    double water_uptake = 0.0;        // cumulative 4*pi*int_0^t (inflow at R=1) dt
};

struct GelHistory {
    std::uint64_t digest = 0;
    int M = 0;
    std::vector<GelSnapshot> snapshots;
    long accepted_steps = 0;
    long rejected_steps = 0;
    long newton_iterations = 0;

    [[nodiscard]] std::size_t size() const { return snapshots.size(); }
    [[nodiscard]] const GelSnapshot& at(std::size_t k) const { return snapshots.at(k); }
};

namespace gel {

inline double chemical_potential(double Nw, double p, double chi, double Ghat)
{
    double J = 1.0 + Nw;
    return std::log(Nw / J) + (J + chi) / (J * J) + Ghat * p;
}

/// Radial stretch of cell i.
inline double radial_stretch(const Grid& g, std::span<const double> r, int i)
{
    return (r[i + 1] - r[i]) / g.dR;
}

/// Hoop stretch of cell i.
inline double hoop_stretch(const Grid& g, std::span<const double> r, int i)
{
    return (r[i + 1] + r[i]) / (2.0 * g.midpoints[i]);
}

/// Current-to-reference volume ratio of cell i.
inline double volume_ratio(const Grid& g, std::span<const double> r, int i)
{
    double a = r[i], b = r[i + 1];
    double A = g.edges[i], B = g.edges[i + 1];
    return (b - a) * (b * b + a * b + a * a) / ((B - A) * (B * B + A * B + A * A));
}

inline GelSnapshot snapshot(const Grid& g, const ParamSet& prm, const GelState& s, double uptake)
{
    GelSnapshot out;
    out.t = s.t;
    out.r = s.r;
    out.Nw = s.Nw;
    out.p = s.p;
    out.water_uptake = uptake;
    int M = g.M;
    out.J.resize(M);
    out.lambda_r.resize(M);
    out.lambda_theta.resize(M);
    out.mu.resize(M);
    for (int i = 0; i < M; ++i) {
        out.J[i] = volume_ratio(g, s.r, i);
        out.lambda_r[i] = radial_stretch(g, s.r, i);
        out.lambda_theta[i] = hoop_stretch(g, s.r, i);
        out.mu[i] = chemical_potential(s.Nw[i], s.p[i], prm.chi, prm.Ghat);
    }
    return out;
}

/// One implicit step of the coupled swelling problem.
///
/// Unknown layout: x[3j] = r_j (edges j = 0..M), x[3i+1] = Nw_i, x[3i+2] = p_i.
/// Row 3j holds the radial stress balance at edge j (r_0 = 0 at j = 0, S_r = 0 at
/// j = M), row 3i+1 water conservation in cell i, row 3i+2 incompressibility in
/// cell i. The Jacobian then has 3 sub- and 4 super-diagonals.
class Stepper {
  public:
    static constexpr int kLower = 3;
    static constexpr int kUpper = 4;

    Stepper(const Grid& g, const ParamSet& prm) : g_(g), prm_(prm), n_(3 * g.M + 1) {}

    [[nodiscard]] int unknowns() const { return n_; }

    static std::vector<double> pack(const GelState& s)
    {
        int M = static_cast<int>(s.Nw.size());
        std::vector<double> x(3 * M + 1);
        for (int i = 0; i < M; ++i) {
            x[3 * i] = s.r[i];
            x[3 * i + 1] = s.Nw[i];
            x[3 * i + 2] = s.p[i];
        }
        x[3 * M] = s.r[M];
        return x;
    }

    static void unpack(std::span<const double> x, GelState& s)
    {
        int M = static_cast<int>(s.Nw.size());
        for (int i = 0; i < M; ++i) {
            s.r[i] = x[3 * i];
            s.Nw[i] = x[3 * i + 1];
            s.p[i] = x[3 * i + 2];
        }
        s.r[M] = x[3 * M];
    }

    /// Freeze the water mobility Nw J^a / lambda_r^2 at the start of a step.
    void begin_step(const GelState& old, double dt)
    {
        int M = g_.M;
        dt_ = dt;
        nw_old_ = old.Nw;
        std::vector<double> cell(M);
        for (int i = 0; i < M; ++i) {
            double lr = radial_stretch(g_, old.r, i);
            double J = 1.0 + old.Nw[i];
            cell[i] = old.Nw[i] * std::pow(J, prm_.a) / (lr * lr);
        }
        edge_mob_.assign(M + 1, 0.0);
        for (int j = 1; j < M; ++j)
            edge_mob_[j] = 0.5 * (cell[j - 1] + cell[j]);
        edge_mob_[M] = cell[M - 1];
    }

    /// Nominal water inflow through R = 1 (times 4 pi) at state x.
    [[nodiscard]] double boundary_inflow(std::span<const double> x) const
    {
        int M = g_.M;
        double mu_last = chemical_potential(x[3 * M - 2], x[3 * M - 1], prm_.chi, prm_.Ghat);
        return 4.0 * kPi * edge_mob_[M] * (0.0 - mu_last) / (0.5 * g_.dR);
    }

    /// Radial stress S_r at R = 1.
    [[nodiscard]] double surface_stress(std::span<const double> x) const
    {
        int M = g_.M;
        double lr = (x[3 * M] - x[3 * M - 3]) / g_.dR;
        double lt = x[3 * M];
        return (lr - 1.0 / lr) - x[3 * M - 1] * lt * lt;
    }

    void residual(std::span<const double> x, std::span<double> F)
    {
        const int M = g_.M;
        const double dR = g_.dR;
        mu_.resize(M);
        sr_.resize(M);
        for (int i = 0; i < M; ++i) {
            double lr = (x[3 * i + 3] - x[3 * i]) / dR;
            sr_[i] = lr - 1.0 / lr;
            mu_[i] = chemical_potential(x[3 * i + 1], x[3 * i + 2], prm_.chi, prm_.Ghat);
        }

        F[0] = x[0];
        for (int j = 1; j < M; ++j) {
            double R = g_.edges[j];
            double lt = x[3 * j] / R;
            double s_theta = lt - 1.0 / lt;
            double s_r = 0.5 * (sr_[j - 1] + sr_[j]);
            F[3 * j] = (sr_[j] - sr_[j - 1]) / dR + 2.0 * (s_r - s_theta) / R -
                       lt * lt * (x[3 * j + 2] - x[3 * j - 1]) / dR;
        }
        F[3 * M] = surface_stress(x);

        for (int i = 0; i < M; ++i) {
            double Rm = g_.edges[i], Rp = g_.edges[i + 1];
            double flux_p = (i + 1 < M)
                                ? edge_mob_[i + 1] * (mu_[i + 1] - mu_[i]) / dR
                                : edge_mob_[M] * (0.0 - mu_[i]) / (0.5 * dR);
            double flux_m = (i > 0) ? edge_mob_[i] * (mu_[i] - mu_[i - 1]) / dR : 0.0;
            double div = (Rp * Rp * flux_p - Rm * Rm * flux_m) / g_.volume[i];
            F[3 * i + 1] = (x[3 * i + 1] - nw_old_[i]) - dt_ * div;

            double a = x[3 * i], b = x[3 * i + 3];
            double J = (b - a) * (b * b + a * b + a * a) /
                       ((Rp - Rm) * (Rp * Rp + Rp * Rm + Rm * Rm));
            F[3 * i + 2] = J - 1.0 - x[3 * i + 1];
        }
    }

    /// State must keep r increasing and Nw positive for the residual to exist.
    [[nodiscard]] bool admissible(std::span<const double> x) const
    {
        const int M = g_.M;
        for (int i = 0; i < M; ++i) {
            if (!(x[3 * i + 3] > x[3 * i]) || !(x[3 * i + 1] > 0.0) || !std::isfinite(x[3 * i + 2]))
                return false;
        }
        return true;
    }

    /// Band Jacobian by forward differences, one residual evaluation per colour.
    void jacobian(std::span<const double> x, std::span<const double> F0, BandMatrix& Jm)
    {
        const int stride = kLower + kUpper + 1;
        Jm.set_zero();
        xp_.assign(x.begin(), x.end());
        fp_.resize(n_);
        h_.resize(n_);
        for (int c = 0; c < stride; ++c) {
            for (int k = c; k < n_; k += stride) {
                double scale = (k % 3 == 1) ? std::max(std::abs(x[k]), 1e-12)
                                            : std::max(std::abs(x[k]), 1.0);
                double h = 1.5e-8 * scale;
                volatile double tmp = x[k] + h; // exact representable step
                h_[k] = tmp - x[k];
                xp_[k] = x[k] + h_[k];
            }
            residual(xp_, fp_);
            for (int k = c; k < n_; k += stride) {
                int lo = std::max(0, k - kUpper), hi = std::min(n_ - 1, k + kLower);
                for (int i = lo; i <= hi; ++i)
                    Jm(i, k) = (fp_[i] - F0[i]) / h_[k];
                xp_[k] = x[k];
            }
        }
    }

  private:
    const Grid& g_;
    const ParamSet& prm_;
    int n_;
    double dt_ = 0.0;
    std::vector<double> nw_old_, edge_mob_, mu_, sr_, xp_, fp_, h_;
};

inline double inf_norm(std::span<const double> v)
{
    double m = 0.0;
    for (double e : v)
        m = std::max(m, std::abs(e));
    return m;
}

struct StepOutcome {
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
};

/// Damped Newton on the step residual; `x` holds the initial guess and the result.
inline StepOutcome newton_solve(Stepper& st, std::vector<double>& x, const StepSchedule& sch)
{
    const int n = st.unknowns();
    std::vector<double> F(n), Ftrial(n), dx(n), trial(n);
    BandMatrix Jm(n, Stepper::kLower, Stepper::kUpper);
    StepOutcome out;
    if (!st.admissible(x))
        return out;
    st.residual(x, F);
    double norm = inf_norm(F);
    for (int it = 0; it < sch.newton_max; ++it) {
        if (norm <= sch.newton_tol) {
            out.converged = true;
            break;
        }
        ++out.iterations;
        st.jacobian(x, F, Jm);
        try {
            Jm.factorize();
        } catch (const NumericalError&) {
            break;
        }
        for (int k = 0; k < n; ++k)
            dx[k] = -F[k];
        Jm.solve(dx);
        // Residual at the rounding floor: the update no longer moves x.
        double xnorm = inf_norm(x);
        if (norm <= sch.roundoff_tol && inf_norm(dx) <= 1e-13 * std::max(1.0, xnorm)) {
            out.converged = true;
            break;
        }

        double alpha = 1.0;
        bool accepted = false;
        for (int h = 0; h <= sch.max_halvings; ++h, alpha *= 0.5) {
            for (int k = 0; k < n; ++k)
                trial[k] = x[k] + alpha * dx[k];
            if (!st.admissible(trial))
                continue;
            st.residual(trial, Ftrial);
            double tn = inf_norm(Ftrial);
            if (std::isfinite(tn) && tn < norm) {
                accepted = true;
                norm = tn;
                x.swap(trial);
                F.swap(Ftrial);
                break;
            }
        }
        if (!accepted)
            break;
    }
    if (norm <= sch.newton_tol)
        out.converged = true;
    out.residual = norm;
    return out;
}

} // namespace gel

/// Dry reference configuration seeded with a small uniform water content so the
/// chemical potential is finite. The radius is scaled so that J = 1 + seed holds.
inline GelState initial_state(const Grid& g, double water_seed = 1e-6)
{
    if (!(water_seed >= 0.0))
        throw ConfigError("initial_state: water seed must be >= 0");
    GelState s;
    s.t = 0.0;
    double stretch = std::cbrt(1.0 + water_seed);
    s.r.resize(g.M + 1);
    for (int j = 0; j <= g.M; ++j)
        s.r[j] = stretch * g.edges[j];
    s.Nw.assign(g.M, water_seed);
    s.p.assign(g.M, 0.0);
    return s;
}

/// Homogeneous swollen state with swelling ratio J everywhere (traction free).
inline GelState uniform_state(const Grid& g, double J, double t = 0.0)
{
    GelState s;
    s.t = t;
    double l = std::cbrt(J);
    s.r.resize(g.M + 1);
    for (int j = 0; j <= g.M; ++j)
        s.r[j] = l * g.edges[j];
    s.Nw.assign(g.M, J - 1.0);
    s.p.assign(g.M, 1.0 / l - 1.0 / J);
    return s;
}

struct StepResult {
    GelState state;
    int iterations = 0;
    double residual = 0.0;
    double inflow = 0.0;         // 4 pi * nominal water flux into the gel at R = 1
    double surface_stress = 0.0; // S_r(1)
};

/// Advance by exactly dt; throws NumericalError if Newton fails at this dt.
inline StepResult step_gel(const GelState& s, double dt, const ParamSet& prm, const Grid& g,
                           const StepSchedule& sch)
{
    for (double v : s.Nw)
        if (!(v > 0.0))
            throw ConfigError("step_gel: water content must be > 0 (chemical potential undefined)");
    gel::Stepper st(g, prm);
    st.begin_step(s, dt);
    std::vector<double> x = gel::Stepper::pack(s);
    auto out = gel::newton_solve(st, x, sch);
    if (!out.converged)
        throw NumericalError("step_gel: Newton failed at t=" + format_double(s.t) +
                             " dt=" + format_double(dt) +
                             " residual=" + format_double(out.residual));
    StepResult res;
    res.state = s;
    gel::Stepper::unpack(x, res.state);
    res.state.t = s.t + dt;
    res.iterations = out.iterations;
    res.residual = out.residual;
    res.inflow = st.boundary_inflow(x);
    res.surface_stress = st.surface_stress(x);
    return res;
}

/// Integrate the swelling problem from the seeded dry state to T_end, stepping
/// exactly onto every output instant k * dt_out.
inline GelHistory solve_gel(const ParamSet& prm, const Grid& g, const StepSchedule& sch)
{
    sch.validate();
    if (g.M != prm.M)
        throw ConfigError("solve_gel: grid has M=" + std::to_string(g.M) +
                          " but parameters say M=" + std::to_string(prm.M));
    GelHistory hist;
    hist.digest = gel_digest(prm);
    hist.M = g.M;
    const long n_out = prm.n_out();
    hist.snapshots.reserve(n_out + 1);

    GelState s = initial_state(g, sch.water_seed);
    double uptake = 0.0;
    hist.snapshots.push_back(gel::snapshot(g, prm, s, uptake));

    gel::Stepper st(g, prm);
    double dt = sch.dt_init;
    const double dt_floor = sch.dt_init / 1024.0;
    for (long k = 1; k <= n_out; ++k) {
        const double t_target = prm.time_at(k);
        while (s.t < t_target) {
            double h = std::min(dt, t_target - s.t);
            bool last = (t_target - s.t) - h <= 1e-9 * prm.dt_out;
            if (last)
                h = t_target - s.t;
            st.begin_step(s, h);
            std::vector<double> x = gel::Stepper::pack(s);
            auto out = gel::newton_solve(st, x, sch);
            hist.newton_iterations += out.iterations;
            if (!out.converged) {
                ++hist.rejected_steps;
                dt = 0.5 * std::min(dt, h);
                if (dt < dt_floor)
                    throw NumericalError("solve_gel: step size fell below dt_init/1024 at t=" +
                                         format_double(s.t) + " (Newton residual " +
                                         format_double(out.residual) + ")");
                continue;
            }
            ++hist.accepted_steps;
            uptake += h * st.boundary_inflow(x);
            gel::Stepper::unpack(x, s);
            s.t = last ? t_target : s.t + h;
            if (h >= dt * (1.0 - 1e-12))
                dt = std::min(dt * sch.growth, sch.dt_max);
        }
        hist.snapshots.push_back(gel::snapshot(g, prm, s, uptake));
    }
    return hist;
}

/// 4 pi * sum of cell water content (total imbibed water, dimensionless).
inline double water_content(const Grid& g, const GelSnapshot& s)
{
    double m = 0.0;
    for (int i = 0; i < g.M; ++i)
        m += g.volume[i] * s.Nw[i];
    return 4.0 * kPi * m;
}

} // namespace gelrelease
