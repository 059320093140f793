// gelrelease: command-line driver for the swelling / release / loading-optimisation
// pipeline. Every subcommand writes CSV files plus a manifest.json into --out.

#include <gelrelease/gelrelease.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace gelrelease;
using json = nlohmann::ordered_json;

constexpr const char* kVersion = "1.0.0";

enum Exit { kOk = 0, kNumerical = 1, kUsage = 2 };

// ---------------------------------------------------------------------------
// argument helpers

double parse_number(const std::string& s, const std::string& what)
{
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ConfigError(what + ": cannot parse '" + s + "' as a number");
    return v;
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep))
        out.push_back(cur);
    return out;
}

std::vector<double> parse_list(const std::string& s, const std::string& what)
{
    std::vector<double> out;
    for (auto& tok : split(s, ','))
        out.push_back(parse_number(tok, what));
    if (out.empty())
        throw ConfigError(what + ": empty list");
    return out;
}

/// "lo:hi:step" inclusive arithmetic range.
std::vector<double> parse_range(const std::string& s, const std::string& what)
{
    auto parts = split(s, ':');
    if (parts.size() != 3)
        throw ConfigError(what + ": expected lo:hi:step, got '" + s + "'");
    double lo = parse_number(parts[0], what), hi = parse_number(parts[1], what);
    double step = parse_number(parts[2], what);
    if (!(step > 0.0) || !(hi >= lo))
        throw ConfigError(what + ": need step > 0 and hi >= lo");
    double n = (hi - lo) / step;
    long count = std::lround(std::floor(n + 1e-9)) + 1;
    if (count > 1000000)
        throw ConfigError(what + ": too many points");
    std::vector<double> out;
    for (long k = 0; k < count; ++k)
        out.push_back(lo + static_cast<double>(k) * step);
    return out;
}

/// "lo:hi:n" with n log-spaced points.
std::vector<double> parse_log_range(const std::string& s, const std::string& what)
{
    auto parts = split(s, ':');
    if (parts.size() != 3)
        throw ConfigError(what + ": expected lo:hi:count, got '" + s + "'");
    double lo = parse_number(parts[0], what), hi = parse_number(parts[1], what);
    double n = parse_number(parts[2], what);
    if (!(lo > 0.0) || !(hi >= lo) || n < 1 || n != std::floor(n) || n > 1000)
        throw ConfigError(what + ": need 0 < lo <= hi and an integer count in [1, 1000]");
    std::vector<double> out;
    int count = static_cast<int>(n);
    for (int k = 0; k < count; ++k)
        out.push_back(count == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(k) / (count - 1)));
    return out;
}

// ---------------------------------------------------------------------------
// run context shared by all subcommands

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = ".";
    std::string cache_dir;
    bool no_cache = false;
    unsigned threads = 1;
};

std::string read_text(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Config text with --set key=value overrides applied (later entries win).
ParamSet resolve_params(const Common& c)
{
    std::string base = c.config_path.empty() ? to_config_text(ParamSet{}) : read_text(c.config_path);
    if (c.overrides.empty())
        return parse_config(base);
    std::map<std::string, std::string> over;
    for (const auto& kv : c.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        over[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    // drop overridden keys from the base text
    static const std::regex spaced_eq(R"(\s*=\s*)");
    std::string kept;
    std::istringstream lines(base);
    std::string line;
    while (std::getline(lines, line)) {
        std::istringstream toks(std::regex_replace(line.substr(0, line.find('#')), spaced_eq, "="));
        std::vector<std::string> entries;
        for (std::string tok; toks >> tok;)
            entries.push_back(tok);
        bool drop = false;
        for (const auto& e : entries)
            drop = drop || over.count(e.substr(0, e.find('='))) > 0;
        if (drop && entries.size() > 1)
            throw ConfigError("--set cannot override a key on a line holding several entries: " + line);
        if (!drop)
            kept += line + "\n";
    }
    for (const auto& [k, v] : over)
        kept += k + "=" + v + "\n";
    return parse_config(kept);
}

class Run {
  public:
    Run(std::string name, const Common& c, ParamSet prm)
        : name_(std::move(name)), prm_(std::move(prm)), out_(c.out_dir),
          store_(c.no_cache ? fs::path{} : (c.cache_dir.empty() ? out_ / "cache" : fs::path(c.cache_dir)),
                 worker_count(c.threads)),
          threads_(worker_count(c.threads)), started_(Clock::now())
    {
        fs::create_directories(out_);
    }

    const ParamSet& params() const { return prm_; }
    ArtifactStore& store() { return store_; }
    unsigned threads() const { return threads_; }

    std::string digest_line() const
    {
        return "param_digest=" + hex_digest(param_digest(prm_)) +
               " gel_digest=" + hex_digest(gel_digest(prm_)) +
               " basis_digest=" + hex_digest(basis_digest(prm_));
    }

    template <class Fn>
    auto stage(const std::string& name, Fn&& fn)
    {
        auto t0 = Clock::now();
        auto result = fn();
        stages_[name] = std::chrono::duration<double>(Clock::now() - t0).count();
        return result;
    }

    void emit(const std::string& file, const CsvTable& t)
    {
        fs::path p = out_ / file;
        t.save(p);
        outputs_.push_back({{"path", p.string()}, {"rows", t.rows()}});
    }

    void set(const std::string& key, json v) { extra_[key] = std::move(v); }

    void finish(int exit_code)
    {
        json m;
        m["tool"] = "gelrelease";
        m["version"] = kVersion;
        m["subcommand"] = name_;
        m["exit_code"] = exit_code;
        m["config"] = to_config_text(prm_);
        m["defaulted_keys"] = prm_.defaulted;
        m["digests"] = {{"param", hex_digest(param_digest(prm_))},
                        {"gel", hex_digest(gel_digest(prm_))},
                        {"basis", hex_digest(basis_digest(prm_))}};
        m["threads"] = threads_;
        m["outputs"] = outputs_;
        json cache;
        cache["dir"] = store_.caching() ? store_.directory().string() : std::string();
        for (const auto& [k, s] : store_.stats())
            cache[k] = {{"hits", s.hits}, {"misses", s.misses}, {"seconds", s.seconds}};
        cache["notes"] = store_.notes();
        m["cache"] = cache;
        json st = json::object();
        for (const auto& [k, v] : stages_)
            st[k] = v;
        m["stage_seconds"] = st;
        m["wall_seconds"] = std::chrono::duration<double>(Clock::now() - started_).count();
        for (const auto& [k, v] : extra_.items())
            m[k] = v;
        write_atomically(out_ / "manifest.json", m.dump(2) + "\n");
    }

  private:
    using Clock = std::chrono::steady_clock;
    std::string name_;
    ParamSet prm_;
    fs::path out_;
    ArtifactStore store_;
    unsigned threads_;
    Clock::time_point started_;
    std::map<std::string, double> stages_;
    json outputs_ = json::array();
    json extra_ = json::object();
};

std::string sanitize(std::string msg)
{
    for (char& ch : msg)
        if (ch == ',' || ch == '\n')
            ch = ';';
    return msg;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_equilibrate(const Common& c, const std::string& chi_range, const std::string& ghats)
{
    auto chis = parse_range(chi_range, "--chi-range");
    auto Gs = parse_list(ghats, "--ghats");
    Run run("equilibrate", c, resolve_params(c));
    const auto& p = run.params();
    CsvTable t(run.digest_line(),
               {"chi", "Ghat", "J_inf", "Dd_eq", "mobility_eq", "decay_rate", "status"});
    long failed = 0;
    run.stage("equilibrium", [&] {
        for (double G : Gs)
            for (double chi : chis) {
                try {
                    auto s = equilibrium_state(chi, G, p.beta, p.Dhat);
                    t.row({format_double(chi), format_double(G), format_double(s.J_inf),
                           format_double(s.Dd_eq), format_double(s.mobility_eq),
                           format_double(s.decay_rate), "ok"});
                } catch (const std::exception& e) {
                    ++failed;
                    t.row({format_double(chi), format_double(G), "nan", "nan", "nan", "nan",
                           "failed: " + sanitize(e.what())});
                }
            }
        return 0;
    });
    run.emit("equilibrium.csv", t);
    run.set("failed_rows", failed);
    run.finish(kOk);
    return kOk;
}

int cmd_swell(const Common& c, long every, const std::string& profile_times)
{
    if (every < 1)
        throw ConfigError("--every must be >= 1");
    Run run("swell", c, resolve_params(c));
    const auto& p = run.params();
    auto times = parse_list(profile_times, "--profile-times");
    Grid g = build_grid(p.M);
    GelHistory h = run.stage("gel", [&] { return run.store().gel(p, g); });

    CsvTable s(run.digest_line(), {"t", "outer_radius", "J_centre", "J_surface", "water_content",
                                   "water_uptake", "mu_centre"});
    for (std::size_t k = 0; k < h.size(); k += every) {
        const auto& snap = h.at(k);
        s.row({snap.t, snap.r.back(), snap.J.front(), snap.J.back(), water_content(g, snap),
               snap.water_uptake, snap.mu.front()});
    }
    run.emit("swelling.csv", s);

    CsvTable prof(run.digest_line(), {"t", "R", "r", "J", "Nw", "p", "mu", "lambda_r", "lambda_theta"});
    for (double t : times) {
        long k = std::lround(t / p.dt_out);
        if (k < 0 || k >= static_cast<long>(h.size()) || std::abs(k * p.dt_out - t) > 1e-9 * std::max(1.0, t))
            throw ConfigError("--profile-times: " + format_double(t) + " is not an output instant");
        const auto& snap = h.at(k);
        for (int i = 0; i < g.M; ++i)
            prof.row({snap.t, g.midpoints[i], 0.5 * (snap.r[i] + snap.r[i + 1]), snap.J[i], snap.Nw[i],
                      snap.p[i], snap.mu[i], snap.lambda_r[i], snap.lambda_theta[i]});
    }
    run.emit("gel_profiles.csv", prof);
    auto eq = equilibrium_state(p.chi, p.Ghat, p.beta, p.Dhat);
    run.set("summary", {{"J_inf", eq.J_inf},
                        {"J_centre_final", h.snapshots.back().J.front()},
                        {"accepted_steps", h.accepted_steps},
                        {"rejected_steps", h.rejected_steps},
                        {"newton_iterations", h.newton_iterations}});
    run.finish(kOk);
    return kOk;
}

/// Loading file: optional '#' comments, optional header; either one column or a
/// column named "loading".
std::vector<double> read_loading(const std::string& path, int M)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read loading file '" + path + "'");
    std::string line;
    int column = 0;
    bool header_seen = false;
    std::vector<double> values;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        auto cells = split(line, ',');
        if (!header_seen) {
            header_seen = true;
            double probe = 0.0;
            auto r = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), probe);
            bool numeric = r.ec == std::errc{} && r.ptr == cells[0].data() + cells[0].size();
            if (!numeric) {
                column = -1;
                for (std::size_t j = 0; j < cells.size(); ++j)
                    if (cells[j] == "loading")
                        column = static_cast<int>(j);
                if (column < 0) {
                    if (cells.size() != 1)
                        throw ConfigError("loading file '" + path + "': no 'loading' column");
                    column = 0;
                }
                continue;
            }
        }
        if (column >= static_cast<int>(cells.size()))
            throw ConfigError("loading file '" + path + "': short row");
        values.push_back(parse_number(cells[column], "loading file"));
    }
    if (static_cast<int>(values.size()) != M)
        throw ConfigError("loading file '" + path + "' has " + std::to_string(values.size()) +
                          " values, expected M=" + std::to_string(M));
    return values;
}

int cmd_release(const Common& c, const std::string& loading)
{
    Run run("release", c, resolve_params(c));
    const auto& p = run.params();
    Grid g = build_grid(p.M);
    std::vector<double> d0 =
        loading == "uniform" ? std::vector<double>(p.M, 1.0) : read_loading(loading, p.M);
    GelHistory h = run.stage("gel", [&] { return run.store().gel(p, g); });
    DrugField d = run.stage("drug", [&] { return solve_drug(h, g, d0, p); });

    std::vector<double> R(d.size(), 0.0);
    if (d.mass[0] > 0.0)
        R = fractional_release(d);
    CsvTable t(run.digest_line(), {"t", "F", "F_boundary", "released_fraction", "mass"});
    for (std::size_t k = 0; k < d.size(); ++k)
        t.row({d.times[k], d.efflux_mass[k], d.efflux_boundary[k], R[k], d.mass[k]});
    run.emit("release.csv", t);

    json summary = {{"loading", loading}, {"mass_initial", d.mass[0]}, {"mass_final", d.mass.back()}};
    if (d.mass[0] > 0.0) {
        auto w = interval_weights(p.n_out(), p.dt_out);
        double released = integrate(w, d.efflux_mass);
        summary["conservation_error"] = std::abs(released + d.mass.back() - d.mass[0]) / d.mass[0];
        try {
            summary["t50"] = release_time(d, 0.5);
        } catch (const NumericalError&) {
            summary["t50"] = nullptr;
        }
    }
    run.set("summary", summary);
    run.finish(kOk);
    return kOk;
}

int cmd_basis(const Common& c)
{
    Run run("basis", c, resolve_params(c));
    const auto& p = run.params();
    Grid g = build_grid(p.M);
    EffluxBasis b = run.stage("basis", [&] { return run.store().basis(p, g); });
    CsvTable t(run.digest_line(), {"i", "R", "integral", "peak_time", "peak_efflux", "final_efflux"});
    for (int i = 0; i < b.M; ++i) {
        Eigen::Index kmax = 0;
        b.f.row(i).tail(b.samples() - 1).maxCoeff(&kmax);
        ++kmax;
        t.row({static_cast<double>(i), g.midpoints[i], b.integrals[i], b.times[kmax], b.f(i, kmax),
               b.f(i, b.samples() - 1)});
    }
    run.emit("basis_summary.csv", t);
    run.finish(kOk);
    return kOk;
}

int cmd_optimize(const Common& c, int starts)
{
    if (starts < 1)
        throw ConfigError("--starts must be >= 1");
    Run run("optimize", c, resolve_params(c));
    const auto& p = run.params();
    Grid g = build_grid(p.M);
    EffluxBasis b = run.stage("basis", [&] { return run.store().basis(p, g); });
    OptimizeOptions opt;
    opt.starts = starts;
    OptimizationResult r = run.stage("qp", [&] { return optimize(b, g, p, opt); });

    auto phi = drug_fraction(g, r.d, p.eps);
    auto loading = loading_from_weights(g, r.d);
    CsvTable dt(run.digest_line(), {"i", "R", "d_weight", "loading", "phi"});
    for (int i = 0; i < g.M; ++i)
        dt.row({static_cast<double>(i), g.midpoints[i], r.d[i], loading[i], phi[i]});
    run.emit("optimal_loading.csv", dt);

    std::vector<double> released(r.F_opt.size(), 0.0);
    for (std::size_t k = 1; k < released.size(); ++k)
        released[k] = released[k - 1] + p.dt_out * r.F_opt[k] / kFourThirdsPi;
    CsvTable et(run.digest_line(), {"t", "F_opt", "A", "released_fraction"});
    for (std::size_t k = 0; k < r.F_opt.size(); ++k)
        et.row({b.times[k], r.F_opt[k], r.A[k], released[k]});
    run.emit("efflux.csv", et);

    json summary = {{"H_star", r.H_star},
                    {"H_integral", r.H_integral},
                    {"kkt_residual", r.kkt_residual},
                    {"certified", r.certified},
                    {"iterations", r.iterations},
                    {"starts", starts},
                    {"multistart_spread", r.multistart_spread},
                    {"tail_estimate", r.tail_estimate}};
    try {
        summary["t95"] = release_time(b.times, released, 0.95);
    } catch (const NumericalError&) {
        summary["t95"] = nullptr;
    }
    CsvTable st(run.digest_line(), {"H_star", "kkt_residual", "certified", "iterations", "t95"});
    st.row({format_double(r.H_star), format_double(r.kkt_residual), r.certified ? "1" : "0",
            std::to_string(r.iterations),
            summary["t95"].is_null() ? "nan" : format_double(summary["t95"].get<double>())});
    run.emit("summary.csv", st);
    run.set("summary", summary);
    int code = r.certified ? kOk : kNumerical;
    if (!r.certified)
        std::cerr << "gelrelease: QP not certified (KKT residual " << format_double(r.kkt_residual)
                  << ")\n";
    run.finish(code);
    return code;
}

int cmd_sweep(const Common& c, const std::string& ghats, const std::string& ghat_log,
              const std::string& taus_s, const std::string& dhats_s, const std::string& chis_s)
{
    Run run("sweep", c, resolve_params(c));
    const auto& p = run.params();
    std::vector<double> Gs = !ghats.empty() ? parse_list(ghats, "--ghats")
                                            : parse_log_range(ghat_log, "--ghat-log");
    auto taus = parse_list(taus_s, "--taus");
    std::vector<double> Ds = dhats_s.empty() ? std::vector<double>{p.Dhat} : parse_list(dhats_s, "--dhats");
    std::vector<double> chis = chis_s.empty() ? std::vector<double>{p.chi} : parse_list(chis_s, "--chis");

    auto rows = run.stage("sweep", [&] {
        return stiffness_sweep(p, chis, Gs, taus, Ds, run.store().source(), run.threads());
    });
    CsvTable t(run.digest_line(),
               {"chi", "Ghat", "Dhat", "tau", "H_star", "kkt_residual", "certified", "status"});
    long bad = 0;
    for (const auto& r : rows) {
        bool ok = r.error.empty() && r.certified;
        bad += ok ? 0 : 1;
        t.row({format_double(r.chi), format_double(r.Ghat), format_double(r.Dhat), format_double(r.tau),
               r.error.empty() ? format_double(r.H_star) : "nan",
               r.error.empty() ? format_double(r.kkt_residual) : "nan", r.certified ? "1" : "0",
               r.error.empty() ? (r.certified ? "ok" : "not certified") : "failed: " + sanitize(r.error)});
    }
    run.emit("sweep.csv", t);
    run.set("failed_or_uncertified_rows", bad);
    int code = bad == 0 ? kOk : kNumerical;
    run.finish(code);
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Hydrogel swelling, drug release and optimal drug loading"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "key=value parameter file");
        sub->add_option("--set", common.overrides, "override one parameter (key=value), repeatable");
        sub->add_option("--out", common.out_dir, "output directory")->capture_default_str();
        sub->add_option("--cache", common.cache_dir, "cache directory (default: OUT/cache)");
        sub->add_flag("--no-cache", common.no_cache, "do not read or write caches");
        sub->add_option("--threads", common.threads, "worker threads (0 = all cores)")
            ->capture_default_str();
    };

    std::string chi_range = "0:3:0.05", ghats_eq = "7e-5,7e-4,7e-3";
    auto* eq = app.add_subcommand("equilibrate", "equilibrium swelling table over chi and Ghat");
    add_common(eq);
    eq->add_option("--chi-range", chi_range, "lo:hi:step")->capture_default_str();
    eq->add_option("--ghats", ghats_eq, "comma-separated Ghat values")->capture_default_str();

    long every = 1;
    std::string profile_times = "1,5,10,25,50";
    auto* sw = app.add_subcommand("swell", "free swelling of the gel");
    add_common(sw);
    sw->add_option("--every", every, "write every n-th output instant")->capture_default_str();
    sw->add_option("--profile-times", profile_times, "instants for radial profiles")
        ->capture_default_str();

    std::string loading = "uniform";
    auto* rel = app.add_subcommand("release", "drug release for a given initial loading");
    add_common(rel);
    rel->add_option("--loading", loading, "'uniform' or a CSV file with M values")
        ->capture_default_str();

    auto* ba = app.add_subcommand("basis", "partial efflux of every unit packet");
    add_common(ba);

    int starts = 1;
    auto* op = app.add_subcommand("optimize", "optimal initial loading for the target release");
    add_common(op);
    op->add_option("--starts", starts, "QP starts (1 deterministic + random feasible)")
        ->capture_default_str();

    std::string ghats_sw, ghat_log = "7e-5:7e-3:7", taus = "6,12,18,24", dhats, chis;
    auto* sp = app.add_subcommand("sweep", "optimal objective over stiffness and release period");
    add_common(sp);
    sp->add_option("--ghats", ghats_sw, "comma-separated Ghat values");
    sp->add_option("--ghat-log", ghat_log, "lo:hi:count log-spaced Ghat values")->capture_default_str();
    sp->add_option("--taus", taus, "comma-separated release periods")->capture_default_str();
    sp->add_option("--dhats", dhats, "comma-separated Dhat values (default: config)");
    sp->add_option("--chis", chis, "comma-separated chi values (default: config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*eq)
            return cmd_equilibrate(common, chi_range, ghats_eq);
        if (*sw)
            return cmd_swell(common, every, profile_times);
        if (*rel)
            return cmd_release(common, loading);
        if (*ba)
            return cmd_basis(common);
        if (*op)
            return cmd_optimize(common, starts);
        if (*sp)
            return cmd_sweep(common, ghats_sw, ghat_log, taus, dhats, chis);
    } catch (const ConfigError& e) {
        std::cerr << "gelrelease: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericalError& e) {
        std::cerr << "gelrelease: numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "gelrelease: " << e.what() << "\n";
        return kNumerical;
    }
    return kUsage;
}
