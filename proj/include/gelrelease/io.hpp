#pragma once

#include <gelrelease/error.hpp>
#include <gelrelease/gel_solver.hpp>
#include <gelrelease/grid.hpp>
#include <gelrelease/optimizer.hpp>
#include <gelrelease/params.hpp>

#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gelrelease {

namespace fs = std::filesystem;

/// Write `bytes` to `path` through a sibling temporary file and a rename, so readers
/// never observe a partially written file.
inline void write_atomically(const fs::path& path, std::string_view bytes)
{
    static std::atomic<unsigned long> counter{0};
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(counter.fetch_add(1)) + "." +
           std::to_string(std::hash<std::string>{}(path.string()) & 0xffff);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw CacheError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out)
            throw CacheError("write to " + tmp.string() + " failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw CacheError("cannot rename into " + path.string());
    }
}

inline std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw CacheError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace binio {

class Writer {
  public:
    template <class T>
    void put(const T& v)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        const char* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void put(std::span<const double> v)
    {
        buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    void magic(std::string_view m) { buf_.append(m); }
    [[nodiscard]] const std::string& bytes() const { return buf_; }

  private:
    std::string buf_;
};

class Reader {
  public:
    Reader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

    template <class T>
    T get()
    {
        static_assert(std::is_trivially_copyable_v<T>);
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void get(std::span<double> out)
    {
        need(out.size() * sizeof(double));
        std::memcpy(out.data(), data_.data() + pos_, out.size() * sizeof(double));
        pos_ += out.size() * sizeof(double);
    }
    void expect_magic(std::string_view m)
    {
        need(m.size());
        if (std::string_view(data_).substr(pos_, m.size()) != m)
            throw CacheError(name_ + ": not a " + std::string(m) + " cache file");
        pos_ += m.size();
    }
    void expect_end() const
    {
        if (pos_ != data_.size())
            throw CacheError(name_ + ": trailing bytes");
    }

  private:
    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n)
            throw CacheError(name_ + ": truncated");
    }
    std::string data_;
    std::string name_;
    std::size_t pos_ = 0;
};

} // namespace binio

inline constexpr std::uint32_t kCacheVersion = 1;

inline fs::path gel_cache_path(const fs::path& dir, std::uint64_t digest)
{
    return dir / ("gel-" + hex_digest(digest) + ".bin");
}

inline fs::path basis_cache_path(const fs::path& dir, std::uint64_t digest)
{
    return dir / ("basis-" + hex_digest(digest) + ".bin");
}

/// Layout: "GELH", version, digest, M, count, step counters, then per instant
/// t, water uptake, r (M+1), Nw (M), p (M). Derived fields are recomputed on load.
inline std::string encode_gel_history(const GelHistory& h)
{
    binio::Writer w;
    w.magic("GELH");
    w.put(kCacheVersion);
    w.put(h.digest);
    w.put(static_cast<std::int32_t>(h.M));
    w.put(static_cast<std::uint64_t>(h.size()));
    w.put(static_cast<std::int64_t>(h.accepted_steps));
    w.put(static_cast<std::int64_t>(h.rejected_steps));
    w.put(static_cast<std::int64_t>(h.newton_iterations));
    for (const auto& s : h.snapshots) {
        w.put(s.t);
        w.put(s.water_uptake);
        w.put(std::span<const double>(s.r));
        w.put(std::span<const double>(s.Nw));
        w.put(std::span<const double>(s.p));
    }
    return w.bytes();
}

inline GelHistory decode_gel_history(std::string bytes, const std::string& name, const ParamSet& prm,
                                     const Grid& g)
{
    binio::Reader r(std::move(bytes), name);
    r.expect_magic("GELH");
    if (auto v = r.get<std::uint32_t>(); v != kCacheVersion)
        throw CacheError(name + ": unsupported version " + std::to_string(v));
    GelHistory h;
    h.digest = r.get<std::uint64_t>();
    if (h.digest != gel_digest(prm))
        throw CacheError(name + ": digest " + hex_digest(h.digest) + " does not match parameters (" +
                         hex_digest(gel_digest(prm)) + ")");
    h.M = r.get<std::int32_t>();
    if (h.M != g.M)
        throw CacheError(name + ": cell count mismatch");
    auto count = r.get<std::uint64_t>();
    if (count != static_cast<std::uint64_t>(prm.n_out() + 1))
        throw CacheError(name + ": sample count mismatch");
    h.accepted_steps = r.get<std::int64_t>();
    h.rejected_steps = r.get<std::int64_t>();
    h.newton_iterations = r.get<std::int64_t>();
    h.snapshots.reserve(count);
    GelState s;
    s.r.resize(g.M + 1);
    s.Nw.resize(g.M);
    s.p.resize(g.M);
    for (std::uint64_t k = 0; k < count; ++k) {
        s.t = r.get<double>();
        double uptake = r.get<double>();
        r.get(s.r);
        r.get(s.Nw);
        r.get(s.p);
        h.snapshots.push_back(gel::snapshot(g, prm, s, uptake));
    }
    r.expect_end();
    return h;
}

inline void save_gel_history(const fs::path& path, const GelHistory& h)
{
    write_atomically(path, encode_gel_history(h));
}

inline GelHistory load_gel_history(const fs::path& path, const ParamSet& prm, const Grid& g)
{
    return decode_gel_history(read_file(path), path.string(), prm, g);
}

/// Layout: "EFFB", version, digest, M, sample count, dt_out, then the M x K curve
/// matrix row by row.
inline std::string encode_efflux_basis(const EffluxBasis& b)
{
    binio::Writer w;
    w.magic("EFFB");
    w.put(kCacheVersion);
    w.put(b.digest);
    w.put(static_cast<std::int32_t>(b.M));
    w.put(static_cast<std::uint64_t>(b.samples()));
    w.put(b.dt_out);
    std::vector<double> row(b.samples());
    for (int i = 0; i < b.M; ++i) {
        for (long k = 0; k < b.samples(); ++k)
            row[k] = b.f(i, k);
        w.put(std::span<const double>(row));
    }
    return w.bytes();
}

inline EffluxBasis decode_efflux_basis(std::string bytes, const std::string& name,
                                       const ParamSet& prm)
{
    binio::Reader r(std::move(bytes), name);
    r.expect_magic("EFFB");
    if (auto v = r.get<std::uint32_t>(); v != kCacheVersion)
        throw CacheError(name + ": unsupported version " + std::to_string(v));
    EffluxBasis b;
    b.digest = r.get<std::uint64_t>();
    if (b.digest != basis_digest(prm))
        throw CacheError(name + ": digest " + hex_digest(b.digest) + " does not match parameters (" +
                         hex_digest(basis_digest(prm)) + ")");
    b.M = r.get<std::int32_t>();
    auto K = r.get<std::uint64_t>();
    b.dt_out = r.get<double>();
    if (b.M != prm.M || K != static_cast<std::uint64_t>(prm.n_out() + 1) || b.dt_out != prm.dt_out)
        throw CacheError(name + ": dimensions do not match parameters");
    b.times.resize(K);
    for (std::uint64_t k = 0; k < K; ++k)
        b.times[k] = prm.time_at(static_cast<long>(k));
    b.f.resize(b.M, static_cast<Eigen::Index>(K));
    std::vector<double> row(K);
    for (int i = 0; i < b.M; ++i) {
        r.get(row);
        for (std::uint64_t k = 0; k < K; ++k)
            b.f(i, static_cast<Eigen::Index>(k)) = row[k];
    }
    r.expect_end();
    b.integrals = basis_integrals(b.f, b.dt_out);
    return b;
}

inline void save_efflux_basis(const fs::path& path, const EffluxBasis& b)
{
    write_atomically(path, encode_efflux_basis(b));
}

inline EffluxBasis load_efflux_basis(const fs::path& path, const ParamSet& prm)
{
    return decode_efflux_basis(read_file(path), path.string(), prm);
}

/// In-memory CSV table: a comment line carrying the digest, a header row, then rows.
/// Numbers use the shortest round-trip representation so output is reproducible.
class CsvTable {
  public:
    CsvTable(std::string digest_line, std::vector<std::string> columns)
        : columns_(std::move(columns))
    {
        text_ = "# " + digest_line + "\n";
        for (std::size_t c = 0; c < columns_.size(); ++c)
            text_ += (c ? "," : "") + columns_[c];
        text_ += "\n";
    }

    void row(std::initializer_list<double> values)
    {
        std::vector<std::string> cells;
        for (double v : values)
            cells.push_back(format_double(v));
        row(cells);
    }

    void row(const std::vector<std::string>& cells)
    {
        if (cells.size() != columns_.size())
            throw ConfigError("csv: row has " + std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(columns_.size()));
        for (std::size_t c = 0; c < cells.size(); ++c)
            text_ += (c ? "," : "") + cells[c];
        text_ += "\n";
        ++rows_;
    }

    [[nodiscard]] std::size_t rows() const { return rows_; }
    [[nodiscard]] const std::string& text() const { return text_; }
    void save(const fs::path& path) const { write_atomically(path, text_); }

  private:
    std::vector<std::string> columns_;
    std::string text_;
    std::size_t rows_ = 0;
};

} // namespace gelrelease
