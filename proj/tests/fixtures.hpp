#pragma once

#include <gelrelease/gelrelease.hpp>

#include <map>
#include <mutex>

namespace fixtures {

using namespace gelrelease;

/// Coarse but complete pipeline inputs: M = 49 cells sampled every 0.05.
inline ParamSet coarse(double Ghat = 7e-4, double tau = 12.0, double eps = 0.0)
{
    ParamSet p;
    p.Ghat = Ghat;
    p.M = 49;
    p.dt_out = 0.05;
    p.tau = tau;
    p.eps = eps;
    return validated(p);
}

inline const GelHistory& history(const ParamSet& p)
{
    static std::map<std::uint64_t, GelHistory> memo;
    static std::mutex m;
    std::lock_guard lock(m);
    auto it = memo.find(gel_digest(p));
    if (it == memo.end())
        it = memo.emplace(gel_digest(p), solve_gel(p, build_grid(p.M), StepSchedule::for_params(p))).first;
    return it->second;
}

inline const EffluxBasis& basis(const ParamSet& p)
{
    static std::map<std::uint64_t, EffluxBasis> memo;
    static std::mutex m;
    const GelHistory& h = history(p);
    std::lock_guard lock(m);
    auto it = memo.find(basis_digest(p));
    if (it == memo.end())
        it = memo.emplace(basis_digest(p), compute_efflux_basis(h, build_grid(p.M), p)).first;
    return it->second;
}

} // namespace fixtures
