#include <gelrelease/equilibrium.hpp>
#include <gelrelease/gel_solver.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace gelrelease;

namespace {

ParamSet coarse(double Ghat = 7e-4, double T_end = 50.0, double chi = 0.5)
{
    ParamSet p;
    p.Ghat = Ghat;
    p.chi = chi;
    p.M = 49;
    p.dt_out = 0.05;
    p.T_end = T_end;
    p.tau = std::min(12.0, T_end);
    return validated(p);
}

const GelHistory& default_coarse_history()
{
    static const GelHistory h = [] {
        ParamSet p = coarse();
        return solve_gel(p, build_grid(p.M), StepSchedule::for_params(p));
    }();
    return h;
}

} // namespace

TEST(InitialState, SeededDryReference)
{
    Grid g = build_grid(4);
    GelState s = initial_state(g, 1e-6);
    for (int j = 0; j <= 4; ++j)
        EXPECT_NEAR(s.r[j], g.edges[j], 1e-6 * g.edges[j] + 1e-300);
    EXPECT_EQ(s.r[0], 0.0);
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(s.Nw[i], 1e-6);
        EXPECT_EQ(s.p[i], 0.0);
        EXPECT_NEAR(gel::volume_ratio(g, s.r, i), 1.0 + 1e-6, 1e-14);
        // free-volume diffusivity underflows: the drug starts immobile
        EXPECT_EQ(drug_diffusivity(1.0 + s.Nw[i], 1.0), 0.0);
    }
}

TEST(InitialState, UnseededStateIsRejectedByTheStepper)
{
    ParamSet p = coarse();
    Grid g = build_grid(p.M);
    GelState s = initial_state(g, 0.0);
    EXPECT_TRUE(std::isinf(gel::chemical_potential(s.Nw[0], 0.0, p.chi, p.Ghat)));
    EXPECT_THROW(step_gel(s, 1e-6, p, g, StepSchedule::for_params(p)), ConfigError);
}

TEST(StepGel, EquilibriumIsAFixedPoint)
{
    ParamSet p = coarse();
    Grid g = build_grid(p.M);
    double J = equilibrium_swelling(p.chi, p.Ghat);
    GelState s = uniform_state(g, J);
    for (int i = 0; i < g.M; ++i)
        EXPECT_NEAR(gel::chemical_potential(s.Nw[i], s.p[i], p.chi, p.Ghat), 0.0, 1e-13);
    auto sch = StepSchedule::for_params(p);
    auto res = step_gel(s, 0.5, p, g, sch);
    for (int j = 0; j <= g.M; ++j)
        EXPECT_NEAR(res.state.r[j], s.r[j], 1e-10);
    for (int i = 0; i < g.M; ++i) {
        EXPECT_NEAR(res.state.Nw[i], s.Nw[i], 1e-9);
        EXPECT_NEAR(res.state.p[i], s.p[i], 1e-9);
    }
    EXPECT_LE(std::abs(res.surface_stress), sch.newton_tol);
}

TEST(StepGel, FirstStepWetsOnlyTheSurface)
{
    ParamSet p = coarse();
    Grid g = build_grid(p.M);
    auto sch = StepSchedule::for_params(p);
    GelState s = initial_state(g, sch.water_seed);
    auto res = step_gel(s, sch.dt_init, p, g, sch);
    const double surface_gain = res.state.Nw.back() - s.Nw.back();
    EXPECT_GT(surface_gain, 0.0);
    for (int i = 0; i < g.M - 1; ++i)
        EXPECT_LT(res.state.Nw[i] - s.Nw[i], surface_gain) << "cell " << i;
    for (int i = 0; i < g.M / 2; ++i)
        EXPECT_NEAR(res.state.Nw[i], s.Nw[i], 1e-10) << "cell " << i;
    EXPECT_GT(res.inflow, 0.0);
    EXPECT_LE(std::abs(res.surface_stress), sch.newton_tol);
    EXPECT_LE(res.residual, sch.newton_tol);
}

TEST(StepGel, BandJacobianMatchesDenseCentralDifferences)
{
    const auto& h = default_coarse_history();
    ParamSet p = coarse();
    Grid g = build_grid(p.M);
    const auto& snap = h.at(20); // t = 1, sharp swelling front inside the gel
    GelState s{snap.t, snap.r, snap.Nw, snap.p};
    gel::Stepper st(g, p);
    st.begin_step(s, 0.01);
    auto x = gel::Stepper::pack(s);
    // move off the old state so every residual row is active
    for (std::size_t k = 0; k < x.size(); ++k)
        x[k] *= 1.0 + 1e-3 * std::sin(1.0 + k);
    x[0] = 0.0;
    const int n = st.unknowns();
    std::vector<double> F0(n), Fp(n), Fm(n);
    st.residual(x, F0);
    BandMatrix Jb(n, gel::Stepper::kLower, gel::Stepper::kUpper);
    st.jacobian(x, F0, Jb);
    double scale = 0.0;
    std::vector<std::vector<double>> dense(n, std::vector<double>(n));
    for (int c = 0; c < n; ++c) {
        auto xp = x, xm = x;
        double hc = 1e-6 * std::max(std::abs(x[c]), 1e-3);
        xp[c] += hc;
        xm[c] -= hc;
        st.residual(xp, Fp);
        st.residual(xm, Fm);
        for (int r = 0; r < n; ++r) {
            dense[r][c] = (Fp[r] - Fm[r]) / (2 * hc);
            scale = std::max(scale, std::abs(dense[r][c]));
        }
    }
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            if (Jb.in_band(r, c))
                EXPECT_NEAR(Jb(r, c), dense[r][c], 1e-5 * scale) << r << "," << c;
            else
                EXPECT_EQ(dense[r][c], 0.0) << "outside band " << r << "," << c;
        }
}

TEST(SolveGel, HistoryInvariants)
{
    const auto& h = default_coarse_history();
    ParamSet p = coarse();
    Grid g = build_grid(p.M);
    ASSERT_EQ(static_cast<long>(h.size()), p.n_out() + 1);
    EXPECT_EQ(h.rejected_steps, 0);
    double prev_volume = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        const auto& s = h.at(k);
        EXPECT_EQ(s.t, p.time_at(static_cast<long>(k)));
        EXPECT_EQ(s.r[0], 0.0);
        for (int j = 0; j < g.M; ++j)
            ASSERT_GT(s.r[j + 1], s.r[j]);
        for (int i = 0; i < g.M; ++i) {
            EXPECT_NEAR(s.J[i], 1.0 + s.Nw[i], 1e-9);
            if (k > 0) {
                EXPECT_GT(s.J[i], 1.0);
            }
        }
        double vol = std::pow(s.r.back(), 3);
        EXPECT_GE(vol, prev_volume * (1.0 - 1e-12));
        prev_volume = vol;
        // central regularity
        EXPECT_LE(std::abs(s.lambda_theta[0] - s.lambda_r[0]), 10.0 * g.dR);
    }
}

TEST(SolveGel, WaterBalanceOnEveryInterval)
{
    const auto& h = default_coarse_history();
    ParamSet p = coarse();
    Grid g = build_grid(p.M);
    for (std::size_t k = 1; k < h.size(); ++k) {
        double gain = water_content(g, h.at(k)) - water_content(g, h.at(k - 1));
        double inflow = h.at(k).water_uptake - h.at(k - 1).water_uptake;
        EXPECT_LE(std::abs(gain - inflow) / p.dt_out, 1e-8) << "interval " << k;
    }
}

TEST(SolveGel, StiffGelEquilibratesWithinHorizon)
{
    ParamSet p = coarse(7e-3);
    Grid g = build_grid(p.M);
    auto h = solve_gel(p, g, StepSchedule::for_params(p));
    double J = equilibrium_swelling(p.chi, p.Ghat);
    for (double v : h.snapshots.back().J)
        EXPECT_LE(std::abs(v - J), 0.005 * J);
}

TEST(SolveGel, DefaultGelEquilibratesGivenLongerHorizon)
{
    // Relaxation is slow at Ghat = 7e-4: about 5% from equilibrium at t = 50,
    // well inside 0.5% by t = 100.
    ParamSet p = coarse(7e-4, 100.0);
    Grid g = build_grid(p.M);
    auto h = solve_gel(p, g, StepSchedule::for_params(p));
    double J = equilibrium_swelling(p.chi, p.Ghat);
    for (double v : h.snapshots.back().J)
        EXPECT_LE(std::abs(v - J), 0.005 * J);
    double centre50 = h.at(p.n_out() / 2).J[0];
    EXPECT_GT(std::abs(centre50 - J), 0.02 * J);
}

TEST(SolveGel, PoorSolventBarelySwells)
{
    ParamSet p = coarse(7e-4, 20.0, 3.0);
    Grid g = build_grid(p.M);
    auto h = solve_gel(p, g, StepSchedule::for_params(p));
    double J = equilibrium_swelling(3.0, p.Ghat);
    EXPECT_NEAR(std::pow(h.snapshots.back().r.back(), 3), J, 1e-3 * J);
    EXPECT_LT(J, 1.03);
}

TEST(SolveGel, FirstOrderGridConvergence)
{
    std::vector<std::vector<double>> radius;
    const std::vector<double> probe = {0.5, 1.0, 5.0, 20.0};
    for (int lev = 1; lev <= 3; ++lev) {
        ParamSet p;
        p.M = 12 << lev;
        p.dt_out = 0.1 / (1 << lev);
        p.T_end = 20.0;
        p.tau = 12.0;
        p = validated(p);
        auto h = solve_gel(p, build_grid(p.M), StepSchedule::for_params(p));
        std::vector<double> v;
        for (double t : probe)
            v.push_back(h.at(std::lround(t / p.dt_out)).r.back());
        radius.push_back(v);
    }
    for (std::size_t k = 0; k < probe.size(); ++k) {
        double e1 = std::abs(radius[1][k] - radius[0][k]);
        double e2 = std::abs(radius[2][k] - radius[1][k]);
        EXPECT_GE(std::log2(e1 / e2), 1.0) << "t=" << probe[k];
    }
}

TEST(StepSchedule, Validation)
{
    StepSchedule s;
    EXPECT_NO_THROW(s.validate());
    s.dt_init = 1.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = StepSchedule{};
    s.growth = 0.9;
    EXPECT_THROW(s.validate(), ConfigError);
    s = StepSchedule{};
    s.newton_tol = 0.0;
    EXPECT_THROW(s.validate(), ConfigError);
    ParamSet p = coarse();
    EXPECT_THROW(solve_gel(p, build_grid(p.M + 1), StepSchedule::for_params(p)), ConfigError);
}
