#pragma once

#include "fedsim/distmatrix.hpp"
#include "fedsim/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedsim {

enum class MetricId { cosine, mse, euclidean, manhattan, chebyshev, mmd, kl, jsd, wasserstein1, random };

inline constexpr std::array<MetricId, 9> all_metrics{MetricId::cosine,    MetricId::mse, MetricId::euclidean,
                                                     MetricId::manhattan, MetricId::chebyshev, MetricId::mmd,
                                                     MetricId::kl,        MetricId::jsd, MetricId::wasserstein1};

inline constexpr std::string_view to_string(MetricId m) noexcept {
    switch (m) {
        case MetricId::cosine: return "cosine";
        case MetricId::mse: return "mse";
        case MetricId::euclidean: return "euclidean";
        case MetricId::manhattan: return "manhattan";
        case MetricId::chebyshev: return "chebyshev";
        case MetricId::mmd: return "mmd";
        case MetricId::kl: return "kl";
        case MetricId::jsd: return "jsd";
        case MetricId::wasserstein1: return "wasserstein1";
        case MetricId::random: return "random";
    }
    return "?";
}

inline std::optional<MetricId> parse_metric(std::string_view name) noexcept {
    for (auto m : all_metrics)
        if (to_string(m) == name) return m;
    if (name == "random") return MetricId::random;
    return std::nullopt;
}

// Additive smoothing applied to both arguments of the KL metric.
inline constexpr double kl_smoothing = 1e-12;
// Tolerance on sum(p) == 1 for inputs to compute_metric.
inline constexpr double probability_tolerance = 1e-9;

namespace detail {

inline void check_probability(std::span<const double> p, const char* which) {
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0) || !std::isfinite(x))
            throw invalid_distribution_error(std::string(which) + " has a negative or non-finite entry");
        sum += x;
    }
    if (std::abs(sum - 1.0) > probability_tolerance)
        throw invalid_distribution_error(std::string(which) + " sums to " + std::to_string(sum) + ", not 1");
}

inline double squared_l2(std::span<const double> p, std::span<const double> q) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double d = p[k] - q[k];
        s += d * d;
    }
    return s;
}

// sum p_k ln(p_k / q_k) with 0 ln(0/.) = 0
inline double kl_sum(std::span<const double> p, std::span<const double> q) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k)
        if (p[k] > 0.0) s += p[k] * std::log(p[k] / q[k]);
    return s;
}

}  // namespace detail

// One-directional D_KL(p || q), natural log, no smoothing. Infinite when q
// has a zero where p does not.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw dimension_mismatch_error("KL divergence of vectors with different lengths");
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] <= 0.0) continue;
        if (q[k] <= 0.0) return std::numeric_limits<double>::infinity();
        s += p[k] * std::log(p[k] / q[k]);
    }
    return s;
}

// Dissimilarity between two label pmfs; 0 means identical for every metric.
inline double compute_metric(MetricId m, std::span<const double> p, std::span<const double> q) {
    if (m == MetricId::random) throw unsupported_metric_error("'random' is a selection mode, not a metric");
    if (p.size() != q.size())
        throw dimension_mismatch_error("metric inputs have lengths " + std::to_string(p.size()) + " and " +
                                       std::to_string(q.size()));
    if (p.size() < 2) throw dimension_mismatch_error("metric inputs need at least 2 labels");
    detail::check_probability(p, "first distribution");
    detail::check_probability(q, "second distribution");

    const std::size_t k_count = p.size();
    switch (m) {
        case MetricId::cosine: {
            double dot = 0.0, pp = 0.0, qq = 0.0;
            for (std::size_t k = 0; k < k_count; ++k) {
                dot += p[k] * q[k];
                pp += p[k] * p[k];
                qq += q[k] * q[k];
            }
            const double cos = dot / std::sqrt(pp * qq);
            return std::clamp(1.0 - cos, 0.0, 1.0);
        }
        case MetricId::mse: return detail::squared_l2(p, q) / static_cast<double>(k_count);
        case MetricId::euclidean: return std::sqrt(detail::squared_l2(p, q));
        case MetricId::manhattan: {
            double s = 0.0;
            for (std::size_t k = 0; k < k_count; ++k) s += std::abs(p[k] - q[k]);
            return s;
        }
        case MetricId::chebyshev: {
            double best = 0.0;
            for (std::size_t k = 0; k < k_count; ++k) best = std::max(best, std::abs(p[k] - q[k]));
            return best;
        }
        case MetricId::mmd:
            // Linear kernel: <p,p> - 2<p,q> + <q,q> = ||p - q||^2.
            return detail::squared_l2(p, q);
        case MetricId::kl: {
            const double norm = 1.0 + static_cast<double>(k_count) * kl_smoothing;
            std::vector<double> ps(k_count), qs(k_count);
            for (std::size_t k = 0; k < k_count; ++k) {
                ps[k] = (p[k] + kl_smoothing) / norm;
                qs[k] = (q[k] + kl_smoothing) / norm;
            }
            return std::max(0.0, 0.5 * (detail::kl_sum(ps, qs) + detail::kl_sum(qs, ps)));
        }
        case MetricId::jsd: {
            std::vector<double> mid(k_count);
            for (std::size_t k = 0; k < k_count; ++k) mid[k] = 0.5 * (p[k] + q[k]);
            return std::max(0.0, 0.5 * (detail::kl_sum(p, mid) + detail::kl_sum(q, mid)));
        }
        case MetricId::wasserstein1: {
            double cdf_p = 0.0, cdf_q = 0.0, s = 0.0;
            for (std::size_t k = 0; k + 1 < k_count; ++k) {
                cdf_p += p[k];
                cdf_q += q[k];
                s += std::abs(cdf_p - cdf_q);
            }
            return s;
        }
        case MetricId::random: break;
    }
    throw unsupported_metric_error("unknown metric");
}

// Symmetric, zero-diagonal N x N matrix of pairwise dissimilarities.
class DissimilarityMatrix {
public:
    DissimilarityMatrix() = default;
    explicit DissimilarityMatrix(std::size_t n, MetricId metric = MetricId::euclidean)
        : n_(n), metric_(metric), data_(n * n, 0.0) {}

    std::size_t size() const noexcept { return n_; }
    MetricId metric() const noexcept { return metric_; }

    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * n_ + j]; }

    // Writes both (i,j) and (j,i).
    void set(std::size_t i, std::size_t j, double value) noexcept {
        data_[i * n_ + j] = value;
        data_[j * n_ + i] = value;
    }

    double max_entry() const noexcept { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

    DissimilarityMatrix scaled(double factor) const {
        auto out = *this;
        for (auto& x : out.data_) x *= factor;
        return out;
    }

    bool operator==(const DissimilarityMatrix&) const = default;

private:
    std::size_t n_ = 0;
    MetricId metric_ = MetricId::euclidean;
    std::vector<double> data_;
};

inline DissimilarityMatrix pairwise_dissimilarity(const LabelMatrix& p, MetricId m) {
    if (m == MetricId::random) throw unsupported_metric_error("'random' is a selection mode, not a metric");
    if (p.rows() < 3) throw std::invalid_argument("pairwise dissimilarity needs at least 3 clients");
    DissimilarityMatrix d(p.rows(), m);
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = i + 1; j < p.rows(); ++j) d.set(i, j, compute_metric(m, p.row(i), p.row(j)));
    return d;
}

}  // namespace fedsim
