#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "gradalign/errors.hpp"

namespace gradalign {

// Dense flattened policy gradient. Flattening order is row-major by answer
// index then feature index and must match PolicyParams everywhere gradients
// are compared.
struct GradientVec {
    std::vector<double> values;

    GradientVec() = default;
    explicit GradientVec(std::size_t n) : values(n, 0.0) {}
    explicit GradientVec(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    GradientVec& add_scaled(const GradientVec& other, double c) {
        if (other.size() != size()) throw config_error("gradient length mismatch in add_scaled");
        for (std::size_t i = 0; i < values.size(); ++i) values[i] += c * other.values[i];
        return *this;
    }

    GradientVec& scale(double c) {
        for (double& v : values) v *= c;
        return *this;
    }
};

inline double dot(const GradientVec& a, const GradientVec& b) {
    if (a.size() != b.size()) throw config_error("gradient length mismatch in dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const GradientVec& g) {
    return std::sqrt(dot(g, g));
}

inline bool all_finite(const GradientVec& g) {
    return std::all_of(g.values.begin(), g.values.end(),
                       [](double v) { return std::isfinite(v); });
}

// Cosine similarity, defined as 0 when either vector is numerically zero.
// Corrupted candidates legitimately produce near-zero gradients; scoring
// them 0 rather than NaN keeps them rankable.
inline constexpr double kCosineNormFloor = 1e-12;

inline double cosine_similarity(const GradientVec& a, const GradientVec& b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na < kCosineNormFloor || nb < kCosineNormFloor) return 0.0;
    return dot(a, b) / (na * nb);
}

namespace detail {

inline GradientVec pairwise_sum_range(std::span<const GradientVec> items,
                                      std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return items[lo];
    const std::size_t mid = lo + (hi - lo) / 2;
    GradientVec left = pairwise_sum_range(items, lo, mid);
    GradientVec right = pairwise_sum_range(items, mid, hi);
    left.add_scaled(right, 1.0);
    return left;
}

} // namespace detail

inline GradientVec pairwise_sum(std::span<const GradientVec> items) {
    if (items.empty()) throw input_error("pairwise_sum of empty list");
    return detail::pairwise_sum_range(items, 0, items.size());
}

// Order-independent reduction: entries are sorted by id, then summed with a
// fixed pairwise tree. Two calls with the same multiset of (id, gradient)
// pairs produce bit-identical results regardless of input order.
inline GradientVec mean_by_id(std::vector<std::pair<std::int64_t, GradientVec>> entries) {
    if (entries.empty()) throw input_error("mean_by_id of empty list");
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<GradientVec> grads;
    grads.reserve(entries.size());
    for (auto& e : entries) grads.push_back(std::move(e.second));
    GradientVec total = pairwise_sum(grads);
    total.scale(1.0 / static_cast<double>(grads.size()));
    return total;
}

} // namespace gradalign
