#pragma once

#include <gelrelease/error.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace gelrelease {

/// Square band matrix with kl sub- and ku super-diagonals, factorised in place by
/// Gaussian elimination with partial pivoting (the LAPACK gbtrf layout: column-major
/// band storage with kl extra rows for pivoting fill-in).
class BandMatrix {
  public:
    BandMatrix(int n, int kl, int ku)
        : n_(n), kl_(kl), ku_(ku), ld_(2 * kl + ku + 1),
          ab_(static_cast<std::size_t>(ld_) * n, 0.0), piv_(n, 0)
    {
    }

    [[nodiscard]] int size() const { return n_; }
    [[nodiscard]] int lower() const { return kl_; }
    [[nodiscard]] int upper() const { return ku_; }

    /// True when (i, j) lies inside the declared band.
    [[nodiscard]] bool in_band(int i, int j) const { return i - j <= kl_ && j - i <= ku_; }

    double& operator()(int i, int j) { return ab_[index(i, j)]; }
    double operator()(int i, int j) const { return ab_[index(i, j)]; }

    void set_zero() { std::fill(ab_.begin(), ab_.end(), 0.0); }

    void factorize()
    {
        const int span_u = kl_ + ku_;
        for (int k = 0; k < n_; ++k) {
            int last = std::min(n_ - 1, k + kl_);
            int p = k;
            double best = std::abs((*this)(k, k));
            for (int r = k + 1; r <= last; ++r) {
                if (double v = std::abs((*this)(r, k)); v > best) {
                    best = v;
                    p = r;
                }
            }
            if (best == 0.0 || !std::isfinite(best))
                throw NumericalError("banded LU: singular matrix at column " + std::to_string(k));
            piv_[k] = p;
            int jmax = std::min(n_ - 1, k + span_u);
            if (p != k)
                for (int j = k; j <= jmax; ++j)
                    std::swap((*this)(k, j), (*this)(p, j));
            double pivot = (*this)(k, k);
            for (int r = k + 1; r <= last; ++r) {
                double l = (*this)(r, k) / pivot;
                (*this)(r, k) = l;
                if (l == 0.0)
                    continue;
                for (int j = k + 1; j <= jmax; ++j)
                    (*this)(r, j) -= l * (*this)(k, j);
            }
        }
    }

    /// Solve in place after factorize().
    void solve(std::span<double> b) const
    {
        const int span_u = kl_ + ku_;
        for (int k = 0; k < n_; ++k) {
            if (piv_[k] != k)
                std::swap(b[k], b[piv_[k]]);
            int last = std::min(n_ - 1, k + kl_);
            for (int r = k + 1; r <= last; ++r)
                b[r] -= (*this)(r, k) * b[k];
        }
        for (int k = n_ - 1; k >= 0; --k) {
            double s = b[k];
            int jmax = std::min(n_ - 1, k + span_u);
            for (int j = k + 1; j <= jmax; ++j)
                s -= (*this)(k, j) * b[j];
            b[k] = s / (*this)(k, k);
        }
    }

  private:
    [[nodiscard]] std::size_t index(int i, int j) const
    {
        return static_cast<std::size_t>(kl_ + ku_ + i - j) + static_cast<std::size_t>(j) * ld_;
    }

    int n_, kl_, ku_, ld_;
    std::vector<double> ab_;
    std::vector<int> piv_;
};

/// Tridiagonal solve (Thomas algorithm) for a diagonally dominant system; the
/// factorisation is shared across several right-hand sides.
class Tridiagonal {
  public:
    explicit Tridiagonal(std::size_t n) : lower_(n), diag_(n), upper_(n), c_(n), inv_(n) {}

    std::vector<double>& lower() { return lower_; }
    std::vector<double>& diag() { return diag_; }
    std::vector<double>& upper() { return upper_; }

    void factorize()
    {
        std::size_t n = diag_.size();
        inv_[0] = 1.0 / diag_[0];
        c_[0] = upper_[0] * inv_[0];
        for (std::size_t i = 1; i < n; ++i) {
            double denom = diag_[i] - lower_[i] * c_[i - 1];
            inv_[i] = 1.0 / denom;
            c_[i] = upper_[i] * inv_[i];
        }
    }

    void solve(std::span<double> x) const
    {
        std::size_t n = diag_.size();
        x[0] *= inv_[0];
        for (std::size_t i = 1; i < n; ++i)
            x[i] = (x[i] - lower_[i] * x[i - 1]) * inv_[i];
        for (std::size_t i = n - 1; i > 0; --i)
            x[i - 1] -= c_[i - 1] * x[i];
    }

  private:
    std::vector<double> lower_, diag_, upper_, c_, inv_;
};

} // namespace gelrelease
