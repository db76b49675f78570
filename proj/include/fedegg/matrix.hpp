#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fedegg/errors.hpp"
#include "fedegg/numerics.hpp"
#include "fedegg/rng.hpp"

namespace fedegg {

/// Small dense row-major square matrix. Only what the quadratic task family needs.
class Matrix {
public:
    Matrix() = default;
    explicit Matrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(std::span<const double> diag) {
        Matrix m(diag.size());
        for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
        return m;
    }

    std::size_t dim() const noexcept { return n_; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * n_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * n_ + c]; }

    ParamVector operator*(const ParamVector& x) const {
        require_same_dim(n_, x.size(), "Matrix * vector");
        ParamVector y(n_);
        for (std::size_t r = 0; r < n_; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < n_; ++c) acc += (*this)(r, c) * x[c];
            y[r] = acc;
        }
        return y;
    }

    Matrix& operator+=(const Matrix& o) {
        require_same_dim(n_, o.n_, "Matrix +=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    double max_asymmetry() const {
        double worst = 0.0;
        for (std::size_t r = 0; r < n_; ++r)
            for (std::size_t c = r + 1; c < n_; ++c)
                worst = std::max(worst, std::abs((*this)(r, c) - (*this)(c, r)));
        return worst;
    }

private:
    std::size_t n_ = 0;
    std::vector<double> data_;
};

/// Solves A x = b for symmetric positive-definite A via Cholesky.
/// Throws DomainError when A is not positive definite.
inline ParamVector cholesky_solve(const Matrix& a, const ParamVector& b) {
    const std::size_t n = a.dim();
    require_same_dim(n, b.size(), "cholesky_solve");
    Matrix l(n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) throw DomainError("cholesky_solve: matrix is not positive definite");
        l(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double acc = a(i, j);
            for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
            l(i, j) = acc / l(j, j);
        }
    }
    ParamVector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = b[i];
        for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * y[k];
        y[i] = acc / l(i, i);
    }
    ParamVector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double acc = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) acc -= l(k, ii) * x[k];
        x[ii] = acc / l(ii, ii);
    }
    return x;
}

/// Eigenvalues of a symmetric matrix, ascending. Cyclic Jacobi rotations,
/// sweeping until the off-diagonal mass is at rounding level relative to the
/// Frobenius norm (or a fixed sweep budget runs out).
inline std::vector<double> symmetric_eigenvalues(Matrix a) {
    const std::size_t n = a.dim();
    double frob = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) frob += a(r, c) * a(r, c);
    const double tol = 1e-15 * std::sqrt(frob);
    constexpr int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = r + 1; c < n; ++c) off += a(r, c) * a(r, c);
        if (std::sqrt(off) <= tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

/// Haar-ish random orthogonal matrix: Gram-Schmidt on a Gaussian matrix.
inline Matrix random_orthogonal(std::size_t n, RngStream& rng) {
    std::vector<ParamVector> cols;
    cols.reserve(n);
    while (cols.size() < n) {
        ParamVector v(n);
        for (auto& x : v) x = rng.normal();
        for (const auto& u : cols) v.axpy(-dot(v, u), u);
        const double nv = norm(v);
        if (nv < 1e-8) continue;
        v *= 1.0 / nv;
        cols.push_back(std::move(v));
    }
    Matrix q(n);
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t r = 0; r < n; ++r) q(r, c) = cols[c][r];
    return q;
}

/// Q diag(eigenvalues) Q^T, symmetrised exactly.
inline Matrix spd_from_spectrum(std::span<const double> eigenvalues, RngStream& rng) {
    const std::size_t n = eigenvalues.size();
    const Matrix q = random_orthogonal(n, rng);
    Matrix a(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = r; c < n; ++c) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += q(r, k) * eigenvalues[k] * q(c, k);
            a(r, c) = acc;
            a(c, r) = acc;
        }
    }
    return a;
}

}  // namespace fedegg
