#pragma once

#include <gelrelease/error.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gelrelease {

inline constexpr double kBoltzmann = 1.380649e-23; // J/K, exact SI value
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kFourThirdsPi = 4.0 * kPi / 3.0;

/// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Physical inputs, SI units.
struct DimensionalParams {
    double R0 = 2e-3;       // m
    double Dw0 = 1e-9;      // m^2/s
    double Dd_inf = 1e-10;  // m^2/s
    double G = 1e4;         // Pa
    double T = 293.0;       // K
    double nu_w = 3.0e-29;  // m^3
    double chi = 0.5;
    double a = 1.5;
    double beta = 1.0;
};

/// Dimensionless model constants plus grid and output-sampling controls.
///
/// Once validated, tau and T_end are stored as exact multiples of dt_out so that
/// output instants k*dt_out hit them without rounding drift.
struct ParamSet {
    double chi = 0.5;
    double Ghat = 7e-4;
    double Dhat = 0.1;
    double a = 1.5;
    double beta = 1.0;
    double eps = 0.0;
    double tau = 12.0;
    double T_end = 50.0;
    int M = 199;
    double dt_out = 0.0125;

    /// Keys filled from defaults by parse_config (metadata only).
    std::vector<std::string> defaulted;

    /// Number of output intervals up to tau.
    [[nodiscard]] long n_tau() const { return std::lround(tau / dt_out); }
    /// Number of output intervals up to T_end.
    [[nodiscard]] long n_out() const { return std::lround(T_end / dt_out); }
    /// Output instant k.
    [[nodiscard]] double time_at(long k) const { return static_cast<double>(k) * dt_out; }
};

namespace detail {

inline bool is_multiple(double value, double step)
{
    double ratio = value / step;
    double n = std::round(ratio);
    return n >= 1.0 && std::abs(ratio - n) <= 1e-9 * n;
}

inline void require(bool ok, const std::string& key, const std::string& msg)
{
    if (!ok)
        throw ConfigError("parameter '" + key + "': " + msg);
}

} // namespace detail

/// Check invariants and snap tau / T_end onto the output grid.
inline ParamSet validated(ParamSet p)
{
    using detail::require;
    require(std::isfinite(p.chi) && p.chi >= 0.0 && p.chi <= 3.0, "chi", "must lie in [0, 3]");
    require(std::isfinite(p.Ghat) && p.Ghat > 0.0, "Ghat", "must be > 0");
    require(std::isfinite(p.Dhat) && p.Dhat > 0.0 && p.Dhat <= 1.0, "Dhat", "must lie in (0, 1]");
    require(std::isfinite(p.a) && p.a > 0.0, "a", "must be > 0");
    require(std::isfinite(p.beta) && p.beta >= 0.0, "beta", "must be >= 0");
    require(std::isfinite(p.eps) && p.eps >= 0.0 && p.eps < 1.0, "eps", "must lie in [0, 1)");
    require(p.M >= 3, "M", "must be >= 3");
    require(std::isfinite(p.dt_out) && p.dt_out > 0.0, "dt_out", "must be > 0");
    require(std::isfinite(p.tau) && p.tau > 0.0, "tau", "must be > 0");
    require(std::isfinite(p.T_end) && p.T_end >= p.tau, "T_end", "must be >= tau");
    require(detail::is_multiple(p.tau, p.dt_out), "tau",
            "must be an integer multiple of dt_out=" + format_double(p.dt_out));
    require(detail::is_multiple(p.T_end, p.dt_out), "T_end",
            "must be an integer multiple of dt_out=" + format_double(p.dt_out));
    p.tau = p.dt_out * std::round(p.tau / p.dt_out);
    p.T_end = p.dt_out * std::round(p.T_end / p.dt_out);
    return p;
}

struct Nondimensionalized {
    double Ghat;
    double Dhat;
    double time_scale; // R0^2/Dw0 in seconds
};

inline Nondimensionalized nondimensionalize(const DimensionalParams& d)
{
    auto positive = [](double v, const char* key) {
        detail::require(std::isfinite(v) && v > 0.0, key, "must be > 0");
    };
    positive(d.R0, "R0");
    positive(d.Dw0, "Dw0");
    positive(d.Dd_inf, "Dd_inf");
    positive(d.G, "G");
    positive(d.T, "T");
    positive(d.nu_w, "nu_w");
    positive(d.a, "a");
    detail::require(std::isfinite(d.chi) && d.chi >= 0.0, "chi", "must be >= 0");
    detail::require(std::isfinite(d.beta) && d.beta >= 0.0, "beta", "must be >= 0");
    return {d.nu_w * d.G / (kBoltzmann * d.T), d.Dd_inf / d.Dw0, d.R0 * d.R0 / d.Dw0};
}

/// Parse a flat `key=value` document ('#' starts a comment; whitespace or newlines
/// separate entries). Ghat may be replaced by the dimensional keys G, T, nu_w and
/// Dhat by Dd_inf, Dw0.
inline ParamSet parse_config(std::string_view text)
{
    static const std::set<std::string> known = {
        "chi", "Ghat", "Dhat", "a", "beta", "eps", "tau", "T_end", "M", "dt_out",
        "G", "T", "nu_w", "Dd_inf", "Dw0", "R0"};

    std::map<std::string, double> values;
    std::istringstream lines{std::string(text)};
    std::string line;
    while (std::getline(lines, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        // "key = value" is accepted as well as "key=value"
        static const std::regex spaced_eq(R"(\s*=\s*)");
        std::string compact = std::regex_replace(line, spaced_eq, "=");
        std::istringstream tokens(compact);
        std::string tok;
        while (tokens >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ConfigError("malformed entry '" + tok + "' (expected key=value)");
            std::string key = tok.substr(0, eq);
            std::string val = tok.substr(eq + 1);
            if (!known.count(key))
                throw ConfigError("unknown key '" + key + "'");
            if (values.count(key))
                throw ConfigError("parameter '" + key + "': given more than once");
            double v = 0.0;
            auto res = std::from_chars(val.data(), val.data() + val.size(), v);
            if (val.empty() || res.ec != std::errc{} || res.ptr != val.data() + val.size())
                throw ConfigError("parameter '" + key + "': cannot parse value '" + val + "'");
            values[key] = v;
        }
    }

    auto has = [&](const char* k) { return values.count(k) > 0; };
    std::vector<std::string> missing;
    bool dim_G = has("G") || has("T") || has("nu_w");
    bool dim_D = has("Dd_inf") || has("Dw0");
    if (!has("chi"))
        missing.emplace_back("chi");
    if (!has("Ghat") && !dim_G)
        missing.emplace_back("Ghat (or G, T, nu_w)");
    if (!has("Dhat") && !dim_D)
        missing.emplace_back("Dhat (or Dd_inf, Dw0)");
    if (!has("tau"))
        missing.emplace_back("tau");
    if (!missing.empty()) {
        std::string msg = "missing required keys:";
        for (auto& m : missing)
            msg += " " + m;
        throw ConfigError(msg);
    }
    if (has("Ghat") && dim_G)
        throw ConfigError("parameter 'Ghat': give either Ghat or the dimensional keys G, T, nu_w");
    if (has("Dhat") && dim_D)
        throw ConfigError("parameter 'Dhat': give either Dhat or the dimensional keys Dd_inf, Dw0");

    ParamSet p;
    p.chi = values["chi"];
    auto take = [&](const char* key, double& field) {
        if (auto it = values.find(key); it != values.end())
            field = it->second;
        else
            p.defaulted.emplace_back(key);
    };
    take("a", p.a);
    take("beta", p.beta);
    take("eps", p.eps);
    take("T_end", p.T_end);
    take("dt_out", p.dt_out);
    p.tau = values["tau"];
    if (auto it = values.find("M"); it != values.end()) {
        double m = it->second;
        detail::require(m == std::floor(m) && m < 1e7, "M", "must be an integer");
        p.M = static_cast<int>(m);
    } else {
        p.defaulted.emplace_back("M");
    }

    if (dim_G || dim_D) {
        DimensionalParams d;
        d.chi = p.chi;
        d.a = p.a;
        d.beta = p.beta;
        auto dim = [&](const char* key, double& field) {
            if (auto it = values.find(key); it != values.end())
                field = it->second;
        };
        dim("G", d.G);
        dim("T", d.T);
        dim("nu_w", d.nu_w);
        dim("Dd_inf", d.Dd_inf);
        dim("Dw0", d.Dw0);
        dim("R0", d.R0);
        if (dim_G)
            for (const char* k : {"G", "T", "nu_w"})
                detail::require(has(k), k, "required when using dimensional stiffness");
        if (dim_D)
            for (const char* k : {"Dd_inf", "Dw0"})
                detail::require(has(k), k, "required when using dimensional diffusivities");
        auto nd = nondimensionalize(d);
        if (dim_G)
            p.Ghat = nd.Ghat;
        if (dim_D)
            p.Dhat = nd.Dhat;
    }
    if (has("Ghat"))
        p.Ghat = values["Ghat"];
    if (has("Dhat"))
        p.Dhat = values["Dhat"];
    return validated(std::move(p));
}

/// Canonical config text; parse_config(to_config_text(p)) reproduces p bit-exactly.
inline std::string to_config_text(const ParamSet& p)
{
    std::string s;
    auto kv = [&](const char* k, double v) { s += std::string(k) + "=" + format_double(v) + "\n"; };
    kv("chi", p.chi);
    kv("Ghat", p.Ghat);
    kv("Dhat", p.Dhat);
    kv("a", p.a);
    kv("beta", p.beta);
    kv("eps", p.eps);
    kv("tau", p.tau);
    kv("T_end", p.T_end);
    s += "M=" + std::to_string(p.M) + "\n";
    kv("dt_out", p.dt_out);
    return s;
}

// Digests: FNV-1a over canonical "key=value;" text. Not cryptographic; only used
// to key caches and tag outputs.

inline std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex_digest(std::uint64_t h)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Inputs that determine the swelling history.
inline std::uint64_t gel_digest(const ParamSet& p)
{
    std::string s = "gel;chi=" + format_double(p.chi) + ";Ghat=" + format_double(p.Ghat) +
                     ";a=" + format_double(p.a) + ";M=" + std::to_string(p.M) +
                     ";T_end=" + format_double(p.T_end) + ";dt_out=" + format_double(p.dt_out);
    return fnv1a(s);
}

/// Inputs that determine the partial-efflux basis (independent of tau and eps).
inline std::uint64_t basis_digest(const ParamSet& p)
{
    std::string s = "basis;" + hex_digest(gel_digest(p)) + ";Dhat=" + format_double(p.Dhat) +
                     ";beta=" + format_double(p.beta);
    return fnv1a(s);
}

/// Every field of the parameter set.
inline std::uint64_t param_digest(const ParamSet& p)
{
    return fnv1a(to_config_text(p));
}

} // namespace gelrelease
