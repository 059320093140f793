#pragma once

#include <gelrelease/drug_transport.hpp>
#include <gelrelease/error.hpp>
#include <gelrelease/gel_solver.hpp>
#include <gelrelease/grid.hpp>
#include <gelrelease/parallel.hpp>
#include <gelrelease/params.hpp>
#include <gelrelease/qp.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace gelrelease {

/// Height of the unit-mass packet supported on cell i: 4 pi * height * V_i = 1.
inline double packet_height(const Grid& g, int i)
{
    return 1.0 / (4.0 * kPi * g.volume.at(i));
}

/// Midpoint loading of packet i.
inline std::vector<double> packet_loading(const Grid& g, int i)
{
    std::vector<double> d0(g.M, 0.0);
    d0.at(i) = packet_height(g, i);
    return d0;
}

/// Piecewise-constant target efflux 4 pi/(3 tau) on [0, tau], zero after. Samples are
/// interval averages, so the value at t = tau (the end of the last plateau interval)
/// belongs to the plateau.
inline std::vector<double> target_profile(double tau, std::span<const double> times)
{
    if (!(tau > 0.0))
        throw ConfigError("target_profile: tau must be > 0");
    if (times.size() < 2)
        throw ConfigError("target_profile: need at least two sample times");
    const double dt = times[1] - times[0];
    const double n = tau / dt;
    const long n_tau = std::lround(n);
    if (std::abs(n - static_cast<double>(n_tau)) > 1e-9 * std::max(1.0, n) ||
        n_tau >= static_cast<long>(times.size()))
        throw ConfigError("target_profile: tau=" + format_double(tau) +
                          " is not a point of the output grid");
    const double level = kFourThirdsPi / (static_cast<double>(n_tau) * dt);
    std::vector<double> A(times.size(), 0.0);
    for (long k = 0; k <= n_tau; ++k)
        A[k] = level;
    return A;
}

/// Partial effluxes of all unit packets on a shared output grid.
struct EffluxBasis {
    std::uint64_t digest = 0;
    int M = 0;
    double dt_out = 0.0;
    std::vector<double> times;
    Eigen::MatrixXd f;              // M x (K+1); row i is the efflux of packet i
    std::vector<double> integrals;  // quadrature of each row

    [[nodiscard]] long samples() const { return static_cast<long>(times.size()); }
};

inline std::vector<double> basis_integrals(const Eigen::MatrixXd& f, double dt)
{
    std::vector<double> out(f.rows());
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        out[i] = dt * f.row(i).tail(f.cols() - 1).sum();
    return out;
}

/// Run the drug problem once per packet. Packets are split into contiguous blocks,
/// one per worker; every worker owns a propagator and advances its block together
/// so the factorisation of each step is shared across the block.
inline EffluxBasis compute_efflux_basis(const GelHistory& gel, const Grid& g, const ParamSet& prm,
                                        unsigned threads = 1)
{
    const int M = g.M;
    const long K = prm.n_out();
    EffluxBasis b;
    b.digest = basis_digest(prm);
    b.M = M;
    b.dt_out = prm.dt_out;
    b.times.resize(K + 1);
    for (long k = 0; k <= K; ++k)
        b.times[k] = prm.time_at(k);
    b.f.resize(M, K + 1);

    drug::Propagator check(gel, g, prm); // validates the history before spawning work
    const unsigned workers = std::min<unsigned>(worker_count(threads), static_cast<unsigned>(M));
    parallel_for(workers, workers, [&](std::size_t w) {
        const int lo = static_cast<int>(w * M / workers);
        const int hi = static_cast<int>((w + 1) * M / workers);
        drug::Propagator prop(gel, g, prm);
        std::vector<std::vector<double>> N;
        std::vector<double> mass_prev;
        for (int i = lo; i < hi; ++i) {
            N.push_back(packet_loading(g, i));
            mass_prev.push_back(drug_mass(g, N.back()));
        }
        const auto& k0 = prop.conductivity_at(0);
        for (int i = lo; i < hi; ++i)
            b.f(i, 0) = drug::surface_efflux(g, k0, N[i - lo]);
        for (long k = 1; k <= K; ++k) {
            prop.prepare(k);
            for (int i = lo; i < hi; ++i) {
                auto& n = N[i - lo];
                prop.advance(n);
                double m = drug_mass(g, n);
                b.f(i, k) = (mass_prev[i - lo] - m) / prm.dt_out;
                mass_prev[i - lo] = m;
            }
        }
    });
    b.integrals = basis_integrals(b.f, b.dt_out);
    return b;
}

inline void check_basis(const EffluxBasis& b)
{
    if (b.M < 1 || b.f.rows() != b.M || b.f.cols() != b.samples() || b.samples() < 2)
        throw ConfigError("efflux basis: inconsistent dimensions");
}

/// Assemble S = 2 int f_i f_j, q = 2 int A f_i, c0 = int A^2 with the interval
/// quadrature, the budget 4 pi/3, and per-weight caps from the pointwise bound
/// eps * d(R) <= 0.2 (no caps when eps = 0).
inline QpProblem assemble_qp(const EffluxBasis& b, std::span<const double> A, double eps,
                             const Grid& g)
{
    check_basis(b);
    if (static_cast<long>(A.size()) != b.samples())
        throw ConfigError("assemble_qp: target has " + std::to_string(A.size()) +
                          " samples, basis has " + std::to_string(b.samples()));
    if (g.M != b.M)
        throw ConfigError("assemble_qp: grid has M=" + std::to_string(g.M) + ", basis has M=" +
                          std::to_string(b.M));
    if (!(eps >= 0.0))
        throw ConfigError("assemble_qp: eps must be >= 0");
    const Eigen::Index K1 = b.samples();
    Eigen::VectorXd w = Eigen::VectorXd::Constant(K1, b.dt_out);
    w[0] = 0.0;
    Eigen::Map<const Eigen::VectorXd> a(A.data(), K1);

    QpProblem qp;
    Eigen::MatrixXd fw = b.f * w.asDiagonal();
    qp.S = 2.0 * fw * b.f.transpose();
    qp.S = 0.5 * (qp.S + qp.S.transpose()).eval();
    qp.q = 2.0 * fw * a;
    qp.c0 = (w.array() * a.array().square()).sum();
    qp.budget = kFourThirdsPi;
    qp.u.resize(b.M);
    for (int i = 0; i < b.M; ++i)
        qp.u[i] = eps == 0.0 ? kUnbounded : (0.2 / eps) / packet_height(g, i);
    return qp;
}

struct OptimizationResult {
    Eigen::VectorXd d;
    double H_star = 0.0;
    double H_integral = 0.0; // same objective by direct quadrature of (F - A)^2
    double kkt_residual = 0.0;
    long iterations = 0;
    bool certified = false;
    std::vector<double> F_opt;
    std::vector<double> A;
    /// Spread max - min of H* over the multi-start runs (0 for a single start).
    double multistart_spread = 0.0;
    /// Estimate of int_{T_end}^inf F^2 dt from the equilibrium decay rate.
    double tail_estimate = 0.0;
};

struct Reconstruction {
    std::vector<double> F;
    double H = 0.0;
};

/// F = sum_i d_i f_i and H = int (F - A)^2 on the basis grid.
inline Reconstruction reconstruct(const EffluxBasis& b, const Eigen::VectorXd& d,
                                  std::span<const double> A)
{
    check_basis(b);
    if (d.size() != b.M || static_cast<long>(A.size()) != b.samples())
        throw ConfigError("reconstruct: dimension mismatch");
    Eigen::VectorXd F = b.f.transpose() * d;
    Reconstruction r;
    r.F.assign(F.data(), F.data() + F.size());
    for (long k = 1; k < b.samples(); ++k) {
        double e = r.F[k] - A[k];
        r.H += b.dt_out * e * e;
    }
    return r;
}

struct OptimizeOptions {
    QpOptions qp;
    int starts = 1;                  // extra random starts on top of the default start
    std::uint64_t seed = 20240229;
};

/// Target, QP assembly, solve (optionally multi-start) and reconstruction.
inline OptimizationResult optimize(const EffluxBasis& b, const Grid& g, const ParamSet& prm,
                                   const OptimizeOptions& opt = {})
{
    check_basis(b);
    if (b.digest != basis_digest(prm))
        throw ConfigError("optimize: efflux basis digest " + hex_digest(b.digest) +
                          " does not match parameters (" + hex_digest(basis_digest(prm)) + ")");
    OptimizationResult out;
    out.A = target_profile(prm.tau, b.times);
    QpProblem qp = assemble_qp(b, out.A, prm.eps, g);

    QpResult best = solve_qp(qp, opt.qp);
    out.iterations = best.iterations;
    double hmin = best.H_star, hmax = best.H_star;
    bool all_certified = best.certified;
    std::mt19937_64 rng(opt.seed);
    for (int s = 1; s < opt.starts; ++s) {
        Eigen::VectorXd x0 = random_feasible(qp, rng);
        QpResult r = solve_qp(qp, opt.qp, &x0);
        out.iterations += r.iterations;
        all_certified = all_certified && r.certified;
        hmin = std::min(hmin, r.H_star);
        hmax = std::max(hmax, r.H_star);
        if (r.H_star < best.H_star)
            best = std::move(r);
    }
    out.d = best.d;
    out.H_star = best.H_star;
    out.kkt_residual = best.kkt_residual;
    out.certified = all_certified;
    out.multistart_spread = hmax - hmin;

    auto rec = reconstruct(b, out.d, out.A);
    out.F_opt = std::move(rec.F);
    out.H_integral = rec.H;
    const double rate = asymptotic_decay_rate(prm);
    if (rate > 0.0)
        out.tail_estimate = out.F_opt.back() * out.F_opt.back() / (2.0 * rate);
    return out;
}

/// Initial volume fraction eps * d(R) per cell for a weight vector.
inline std::vector<double> drug_fraction(const Grid& g, const Eigen::VectorXd& d, double eps)
{
    std::vector<double> phi(g.M);
    for (int i = 0; i < g.M; ++i)
        phi[i] = eps * d[i] * packet_height(g, i);
    return phi;
}

/// Midpoint drug loading d(R) = d_i * height_i represented by a weight vector.
inline std::vector<double> loading_from_weights(const Grid& g, const Eigen::VectorXd& d)
{
    std::vector<double> d0(g.M);
    for (int i = 0; i < g.M; ++i)
        d0[i] = d[i] * packet_height(g, i);
    return d0;
}

struct SweepRow {
    double chi = 0.0;
    double Ghat = 0.0;
    double Dhat = 0.0;
    double tau = 0.0;
    double H_star = 0.0;
    double kkt_residual = 0.0;
    bool certified = false;
    std::string error; // non-empty when the cell failed
};

/// Supplies the efflux basis for one parameter point (computing or loading a cache).
using BasisSource = std::function<EffluxBasis(const ParamSet&)>;

inline BasisSource direct_basis_source(unsigned threads_per_basis = 1)
{
    return [threads_per_basis](const ParamSet& p) {
        Grid g = build_grid(p.M);
        GelHistory h = solve_gel(p, g, StepSchedule::for_params(p));
        return compute_efflux_basis(h, g, p, threads_per_basis);
    };
}

/// H* over the product of (chi, Ghat, Dhat) points and release periods. One basis
/// per point; every tau reuses it. Points run on a bounded pool; failures are
/// recorded per row instead of aborting the table.
inline std::vector<SweepRow> stiffness_sweep(const ParamSet& base, std::span<const double> chis,
                                             std::span<const double> Ghats,
                                             std::span<const double> taus,
                                             std::span<const double> Dhats,
                                             const BasisSource& source, unsigned threads = 1,
                                             const OptimizeOptions& opt = {})
{
    if (chis.empty() || Ghats.empty() || taus.empty() || Dhats.empty())
        throw ConfigError("sweep: every parameter list must be non-empty");
    double tau_max = *std::max_element(taus.begin(), taus.end());
    if (tau_max > base.T_end)
        throw ConfigError("sweep: tau=" + format_double(tau_max) + " exceeds T_end");

    struct Point {
        double chi, Ghat, Dhat;
    };
    std::vector<Point> points;
    for (double c : chis)
        for (double G : Ghats)
            for (double D : Dhats)
                points.push_back({c, G, D});
    const std::size_t T = taus.size();
    std::vector<SweepRow> rows(points.size() * T);

    // validate everything up front so configuration errors are not swallowed per row
    std::vector<ParamSet> prms;
    for (const auto& pt : points) {
        ParamSet p = base;
        p.chi = pt.chi;
        p.Ghat = pt.Ghat;
        p.Dhat = pt.Dhat;
        for (double tau : taus) {
            p.tau = tau;
            (void)validated(p);
        }
        prms.push_back(p);
    }

    parallel_for(points.size(), threads, [&](std::size_t n) {
        ParamSet p = prms[n];
        Grid g = build_grid(p.M);
        std::string failure;
        EffluxBasis b;
        try {
            b = source(p);
        } catch (const NumericalError& e) {
            failure = e.what();
        }
        for (std::size_t t = 0; t < T; ++t) {
            SweepRow& row = rows[n * T + t];
            row.chi = p.chi;
            row.Ghat = p.Ghat;
            row.Dhat = p.Dhat;
            row.tau = taus[t];
            if (!failure.empty()) {
                row.error = failure;
                continue;
            }
            ParamSet pt = p;
            pt.tau = taus[t];
            pt = validated(pt);
            try {
                OptimizationResult r = optimize(b, g, pt, opt);
                row.H_star = r.H_star;
                row.kkt_residual = r.kkt_residual;
                row.certified = r.certified;
            } catch (const NumericalError& e) {
                row.error = e.what();
            }
        }
    });
    return rows;
}

} // namespace gelrelease
