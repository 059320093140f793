#include "fixtures.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace gelrelease;
namespace fs = std::filesystem;

namespace {

const std::string kSmall = " --set M=49 --set dt_out=0.05";

fs::path work_dir(const std::string& name)
{
    fs::path d = fs::temp_directory_path() / ("gelrelease_test_cli_" + name);
    fs::remove_all(d);
    return d;
}

int cli(const std::string& args)
{
    std::string cmd = std::string(GELRELEASE_CLI) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Csv {
    std::string comment;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] int col(const std::string& name) const
    {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name)
                return static_cast<int>(j);
        throw std::runtime_error("no column " + name);
    }
    [[nodiscard]] std::vector<double> numbers(const std::string& name) const
    {
        int j = col(name);
        std::vector<double> v;
        for (const auto& r : rows)
            v.push_back(std::stod(r[j]));
        return v;
    }
};

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    return out;
}

Csv read_csv(const fs::path& p)
{
    std::ifstream in(p);
    Csv c;
    std::string line;
    std::getline(in, c.comment);
    std::getline(in, line);
    c.header = split(line);
    while (std::getline(in, line))
        c.rows.push_back(split(line));
    return c;
}

nlohmann::json manifest(const fs::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    return nlohmann::json::parse(in);
}

} // namespace

TEST(Cli, UsageAndConfigErrorsExitTwo)
{
    auto d = work_dir("usage");
    EXPECT_EQ(cli(""), 2);
    EXPECT_EQ(cli("frobnicate"), 2);
    EXPECT_EQ(cli("equilibrate --no-such-flag"), 2);
    EXPECT_EQ(cli("equilibrate --out " + d.string() + " --chi-range 0:3"), 2);
    EXPECT_EQ(cli("equilibrate --out " + d.string() + " --set Ghat=-1"), 2);
    EXPECT_EQ(cli("equilibrate --out " + d.string() + " --set bogus=1"), 2);
    EXPECT_EQ(cli("equilibrate --out " + d.string() + " --config " + (d / "missing.cfg").string()), 2);
    EXPECT_EQ(cli("release --out " + d.string() + kSmall + " --loading " + (d / "none.csv").string()), 2);
    EXPECT_EQ(cli("optimize --out " + d.string() + kSmall + " --set tau=12.01"), 2);
    EXPECT_EQ(cli("sweep --out " + d.string() + kSmall + " --ghats 7e-4 --taus 60"), 2);
}

TEST(Cli, EquilibrateTable)
{
    auto d = work_dir("equilibrate");
    ASSERT_EQ(cli("equilibrate --out " + d.string()), 0);
    auto t = read_csv(d / "equilibrium.csv");
    EXPECT_EQ(t.comment.rfind("# param_digest=", 0), 0u);
    EXPECT_EQ(t.header.front(), "chi");
    ASSERT_EQ(t.rows.size(), 3u * 61u);
    auto chi = t.numbers("chi"), G = t.numbers("Ghat"), J = t.numbers("J_inf");
    std::map<double, std::map<double, double>> by_chi;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        EXPECT_EQ(t.rows[r][t.col("status")], "ok");
        EXPECT_LE(std::abs(equilibrium_residual(J[r] - 1.0, chi[r], G[r])), 1e-12);
        by_chi[std::round(chi[r] * 100) / 100][G[r]] = J[r];
    }
    auto spread = [&](double c) {
        double lo = INFINITY, hi = 0;
        for (auto [g, j] : by_chi.at(c)) {
            lo = std::min(lo, j);
            hi = std::max(hi, j);
        }
        return (hi - lo) / lo;
    };
    EXPECT_LT(spread(1.0), 0.01);
    EXPECT_GT(spread(0.5), 1.0);
    auto m = manifest(d);
    EXPECT_EQ(m["exit_code"], 0);
    EXPECT_EQ(m["subcommand"], "equilibrate");
}

TEST(Cli, SwellOutputs)
{
    auto d = work_dir("swell");
    ASSERT_EQ(cli("swell --out " + d.string() + kSmall + " --set T_end=20 --every 10 --profile-times 1,5"),
              0);
    auto s = read_csv(d / "swelling.csv");
    EXPECT_EQ(s.rows.size(), 41u);
    auto R = s.numbers("outer_radius");
    for (std::size_t k = 1; k < R.size(); ++k)
        EXPECT_GE(R[k], R[k - 1]);
    auto p = read_csv(d / "gel_profiles.csv");
    EXPECT_EQ(p.rows.size(), 2u * 49u);
    EXPECT_EQ(cli("swell --out " + d.string() + kSmall + " --set T_end=20 --profile-times 1.01"), 2);
}

TEST(Cli, ReleaseZeroLoadingGivesZeroEfflux)
{
    auto d = work_dir("zero");
    fs::create_directories(d);
    {
        std::ofstream f(d / "zero.csv");
        f << "loading\n";
        for (int i = 0; i < 49; ++i)
            f << "0\n";
    }
    ASSERT_EQ(cli("release --out " + d.string() + kSmall + " --loading " + (d / "zero.csv").string()), 0);
    auto t = read_csv(d / "release.csv");
    for (double v : t.numbers("F"))
        EXPECT_EQ(v, 0.0);
    {
        std::ofstream f(d / "short.csv");
        f << "1\n2\n";
    }
    EXPECT_EQ(cli("release --out " + d.string() + kSmall + " --loading " + (d / "short.csv").string()), 2);
}

TEST(Cli, OptimizeThenReleaseReproducesEfflux)
{
    auto d = work_dir("optimize");
    const std::string args = "optimize --out " + d.string() + kSmall + " --starts 3";
    ASSERT_EQ(cli(args), 0);
    auto m1 = manifest(d);
    EXPECT_TRUE(m1["summary"]["certified"].get<bool>());
    EXPECT_EQ(m1["cache"]["basis"]["misses"], 1);
    auto load = read_csv(d / "optimal_loading.csv");
    auto eff = read_csv(d / "efflux.csv");
    ASSERT_EQ(load.rows.size(), 49u);
    double total = 0;
    for (double w : load.numbers("d_weight"))
        total += w;
    EXPECT_NEAR(total, 4.0 * kPi / 3.0, 1e-9);

    auto rel = work_dir("optimize_release");
    ASSERT_EQ(cli("release --out " + rel.string() + kSmall + " --cache " + (d / "cache").string() +
                  " --loading " + (d / "optimal_loading.csv").string()),
              0);
    EXPECT_EQ(manifest(rel)["cache"]["gel"]["hits"], 1);
    auto F = read_csv(rel / "release.csv").numbers("F");
    auto Fopt = eff.numbers("F_opt");
    ASSERT_EQ(F.size(), Fopt.size());
    for (std::size_t k = 1; k < F.size(); ++k)
        EXPECT_NEAR(F[k], Fopt[k], 1e-9);

    // rerun: cache hit and byte-identical tables
    std::string before = read_file(d / "optimal_loading.csv") + read_file(d / "efflux.csv");
    ASSERT_EQ(cli(args), 0);
    auto m2 = manifest(d);
    EXPECT_EQ(m2["cache"]["basis"]["hits"], 1);
    EXPECT_EQ(m2["cache"]["basis"]["misses"], 0);
    EXPECT_EQ(read_file(d / "optimal_loading.csv") + read_file(d / "efflux.csv"), before);
}

TEST(Cli, VolumeFractionCapRespected)
{
    auto d = work_dir("eps");
    ASSERT_EQ(cli("optimize --out " + d.string() + kSmall + " --set eps=0.1"), 0);
    auto phi = read_csv(d / "optimal_loading.csv").numbers("phi");
    double mx = 0;
    for (double v : phi) {
        EXPECT_LE(v, 0.2 + 1e-12);
        mx = std::max(mx, v);
    }
    EXPECT_NEAR(mx, 0.2, 1e-9);
}

TEST(Cli, SweepTableAndThreadInvariance)
{
    auto d1 = work_dir("sweep1"), d2 = work_dir("sweep2");
    const std::string common = kSmall + " --ghats 7e-4,7e-3 --taus 6,24 --no-cache";
    ASSERT_EQ(cli("sweep --out " + d1.string() + common + " --threads 1"), 0);
    ASSERT_EQ(cli("sweep --out " + d2.string() + common + " --threads 2"), 0);
    auto t = read_csv(d1 / "sweep.csv");
    ASSERT_EQ(t.rows.size(), 4u);
    for (const auto& r : t.rows)
        EXPECT_EQ(r[t.col("status")], "ok");
    EXPECT_EQ(read_file(d1 / "sweep.csv"), read_file(d2 / "sweep.csv"));
    EXPECT_FALSE(fs::exists(d1 / "cache"));
}

TEST(Cli, NumericalFailureExitsOne)
{
    // an absurdly stiff network leaves the swelling equation without a bracketed root
    auto d = work_dir("numerical");
    EXPECT_EQ(cli("swell --out " + d.string() + kSmall + " --set Ghat=1e12"), 1);
    EXPECT_EQ(cli("equilibrate --out " + d.string() + " --ghats 1e12 --chi-range 0.5:0.5:0.1"), 0);
    auto t = read_csv(d / "equilibrium.csv");
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0][t.col("status")].rfind("failed", 0), 0u);
}
