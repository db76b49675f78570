#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fedegg/errors.hpp"

namespace fedegg {

/// Flat vector of model parameters. Used for global/aggregated/local models,
/// optima, gradients and feature vectors alike.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
    ParamVector(std::initializer_list<double> init) : values_(init) {}
    explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
    explicit ParamVector(std::span<const double> values) : values_(values.begin(), values.end()) {}

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    std::span<double> span() noexcept { return values_; }
    std::span<const double> span() const noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    auto begin() noexcept { return values_.begin(); }
    auto end() noexcept { return values_.end(); }
    auto begin() const noexcept { return values_.begin(); }
    auto end() const noexcept { return values_.end(); }

    bool all_finite() const noexcept {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    /// this += alpha * x
    ParamVector& axpy(double alpha, const ParamVector& x);
    ParamVector& operator+=(const ParamVector& x) { return axpy(1.0, x); }
    ParamVector& operator-=(const ParamVector& x) { return axpy(-1.0, x); }
    ParamVector& operator*=(double s) {
        for (double& v : values_) v *= s;
        return *this;
    }

    friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
    std::vector<double> values_;
};

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                             " vs " + std::to_string(b) + ")");
    }
}

inline ParamVector& ParamVector::axpy(double alpha, const ParamVector& x) {
    require_same_dim(size(), x.size(), "axpy");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += alpha * x.values_[i];
    return *this;
}

inline ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
inline ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
inline ParamVector operator*(double s, ParamVector a) { return a *= s; }

inline double dot(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a.size(), b.size(), "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double dot(const ParamVector& a, const ParamVector& b) { return dot(a.span(), b.span()); }

inline double squared_norm(const ParamVector& a) { return dot(a, a); }

inline double norm(const ParamVector& a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(const ParamVector& a, const ParamVector& b) {
    require_same_dim(a.size(), b.size(), "squared_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

/// Cosine of the angle between a and b, clamped to [-1, 1].
/// Throws DegenerateInputError when either vector has zero norm.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    require_same_dim(a.size(), b.size(), "cosine_similarity");
    const double aa = dot(a, a);
    const double bb = dot(b, b);
    if (aa == 0.0 || bb == 0.0) {
        throw DegenerateInputError("cosine_similarity: zero-norm input");
    }
    // sqrt(aa * bb) keeps cos(a, a) == 1 exactly; fall back when the product leaves range.
    double denom = std::sqrt(aa * bb);
    if (!std::isfinite(denom) || denom == 0.0) denom = std::sqrt(aa) * std::sqrt(bb);
    return std::clamp(dot(a, b) / denom, -1.0, 1.0);
}

inline double cosine_similarity(const ParamVector& a, const ParamVector& b) {
    return cosine_similarity(a.span(), b.span());
}

/// Elementwise mean. Summation runs in ascending list order so the result is a
/// pure function of the input order.
inline ParamVector mean_vector(std::span<const ParamVector> vs) {
    if (vs.empty()) throw DomainError("mean_vector: empty list");
    const std::size_t dim = vs.front().size();
    ParamVector acc(dim);
    for (const auto& v : vs) {
        require_same_dim(dim, v.size(), "mean_vector");
        acc += v;
    }
    acc *= 1.0 / static_cast<double>(vs.size());
    return acc;
}

inline ParamVector mean_vector(const std::vector<ParamVector>& vs) {
    return mean_vector(std::span<const ParamVector>(vs));
}

inline double mean(std::span<const double> xs) {
    if (xs.empty()) throw DomainError("mean: empty list");
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

}  // namespace fedegg
