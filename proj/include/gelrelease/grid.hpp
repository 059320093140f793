#pragma once

#include <gelrelease/error.hpp>

#include <string>
#include <vector>

namespace gelrelease {

/// Uniform staggered mesh on the Lagrangian interval [0, 1].
///
/// Cell i (0-based) spans [edges[i], edges[i+1]] with midpoint (i + 1/2)/M.
/// `volume[i]` is the exact spherical shell volume divided by 4*pi, i.e.
/// (edges[i+1]^3 - edges[i]^3)/3; it is the quadrature weight for every
/// cell-averaged field.
struct Grid {
    int M = 0;
    double dR = 0.0;
    std::vector<double> edges;
    std::vector<double> midpoints;
    std::vector<double> volume;

    [[nodiscard]] int cells() const { return M; }
};

inline Grid build_grid(int M)
{
    if (M < 3)
        throw ConfigError("grid: M must be >= 3 (got " + std::to_string(M) + ")");
    Grid g;
    g.M = M;
    g.dR = 1.0 / M;
    g.edges.resize(M + 1);
    g.midpoints.resize(M);
    g.volume.resize(M);
    for (int i = 0; i <= M; ++i)
        g.edges[i] = static_cast<double>(i) / M;
    for (int i = 0; i < M; ++i) {
        g.midpoints[i] = 0.5 * (g.edges[i] + g.edges[i + 1]);
        double lo = g.edges[i], hi = g.edges[i + 1];
        g.volume[i] = (hi * hi * hi - lo * lo * lo) / 3.0;
    }
    return g;
}

} // namespace gelrelease
