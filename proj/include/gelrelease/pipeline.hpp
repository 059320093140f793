#pragma once

#include <gelrelease/io.hpp>
#include <gelrelease/optimizer.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>

namespace gelrelease {

/// Gel histories and efflux bases keyed by digest in an optional cache directory.
///
/// A missing, unreadable or mismatching file counts as a miss: the artifact is
/// recomputed and the file replaced atomically. Thread-safe; concurrent misses on
/// the same digest may both compute, and the last rename wins with identical bytes.
class ArtifactStore {
  public:
    explicit ArtifactStore(std::filesystem::path dir = {}, unsigned threads = 1)
        : dir_(std::move(dir)), threads_(threads)
    {
    }

    [[nodiscard]] bool caching() const { return !dir_.empty(); }
    [[nodiscard]] const std::filesystem::path& directory() const { return dir_; }

    GelHistory gel(const ParamSet& prm, const Grid& g)
    {
        auto t0 = Clock::now();
        if (caching()) {
            auto path = gel_cache_path(dir_, gel_digest(prm));
            if (std::filesystem::exists(path)) {
                try {
                    auto h = load_gel_history(path, prm, g);
                    record("gel", true, t0);
                    return h;
                } catch (const CacheError& e) {
                    note(e.what());
                }
            }
        }
        GelHistory h = solve_gel(prm, g, StepSchedule::for_params(prm));
        if (caching())
            save_gel_history(gel_cache_path(dir_, h.digest), h);
        record("gel", false, t0);
        return h;
    }

    EffluxBasis basis(const ParamSet& prm, const Grid& g)
    {
        if (caching()) {
            auto t0 = Clock::now();
            auto path = basis_cache_path(dir_, basis_digest(prm));
            if (std::filesystem::exists(path)) {
                try {
                    auto b = load_efflux_basis(path, prm);
                    record("basis", true, t0);
                    return b;
                } catch (const CacheError& e) {
                    note(e.what());
                }
            }
        }
        GelHistory h = gel(prm, g);
        auto t0 = Clock::now();
        EffluxBasis b = compute_efflux_basis(h, g, prm, threads_);
        if (caching())
            save_efflux_basis(basis_cache_path(dir_, b.digest), b);
        record("basis", false, t0);
        return b;
    }

    BasisSource source()
    {
        return [this](const ParamSet& p) { return basis(p, build_grid(p.M)); };
    }

    struct Stats {
        long hits = 0;
        long misses = 0;
        double seconds = 0.0;
    };

    [[nodiscard]] std::map<std::string, Stats> stats() const
    {
        std::lock_guard lock(mutex_);
        return stats_;
    }

    [[nodiscard]] std::vector<std::string> notes() const
    {
        std::lock_guard lock(mutex_);
        return notes_;
    }

  private:
    using Clock = std::chrono::steady_clock;

    void record(const std::string& kind, bool hit, Clock::time_point t0)
    {
        double s = std::chrono::duration<double>(Clock::now() - t0).count();
        std::lock_guard lock(mutex_);
        auto& st = stats_[kind];
        (hit ? st.hits : st.misses) += 1;
        st.seconds += s;
    }

    void note(std::string msg)
    {
        std::lock_guard lock(mutex_);
        notes_.push_back(std::move(msg));
    }

    std::filesystem::path dir_;
    unsigned threads_;
    mutable std::mutex mutex_;
    std::map<std::string, Stats> stats_;
    std::vector<std::string> notes_;
};

} // namespace gelrelease
