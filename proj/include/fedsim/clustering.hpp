#pragma once

#include "fedsim/metrics.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

struct ClusterModel {
    std::size_t clusters = 0;
    // Sorted ascending; medoids[c] is the medoid of cluster c.
    std::vector<std::size_t> medoids;
    std::vector<std::size_t> assignment;
    double cost = 0.0;
    double silhouette = 0.0;

    std::vector<std::vector<std::size_t>> members() const {
        std::vector<std::vector<std::size_t>> out(clusters);
        for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
        return out;
    }

    bool is_medoid(std::size_t i) const {
        return std::binary_search(medoids.begin(), medoids.end(), i);
    }

    bool operator==(const ClusterModel&) const = default;
};

inline constexpr int pam_max_iterations = 300;

// Relative slack under which two PAM objective values count as tied, so
// that ties resolve by index identically for D and any positive multiple of D.
inline constexpr double pam_tie_tolerance = 1e-10;
inline constexpr double silhouette_tie_tolerance = 1e-12;

// Mean silhouette over all points. Singleton members score 0.
inline double silhouette_mean(const DissimilarityMatrix& d, const std::vector<std::size_t>& assignment) {
    const std::size_t n = d.size();
    if (assignment.size() != n) throw std::invalid_argument("assignment length differs from matrix size");
    if (n == 0) throw std::invalid_argument("silhouette of an empty clustering");
    const std::size_t c = *std::max_element(assignment.begin(), assignment.end()) + 1;
    if (c < 2) throw std::invalid_argument("silhouette needs at least 2 clusters");
    std::vector<std::size_t> sizes(c, 0);
    for (auto a : assignment) ++sizes[a];
    for (std::size_t k = 0; k < c; ++k)
        if (sizes[k] == 0) throw std::invalid_argument("cluster " + std::to_string(k) + " is empty");

    double total = 0.0;
    std::vector<double> sums(c);
    for (std::size_t i = 0; i < n; ++i) {
        const auto own = assignment[i];
        if (sizes[own] == 1) continue;
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) sums[assignment[j]] += d(i, j);
        const double intra = sums[own] / static_cast<double>(sizes[own] - 1);
        double inter = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < c; ++k)
            if (k != own) inter = std::min(inter, sums[k] / static_cast<double>(sizes[k]));
        const double denom = std::max(intra, inter);
        if (denom > 0.0) total += (inter - intra) / denom;
    }
    return total / static_cast<double>(n);
}

namespace detail {

// Nearest-medoid index assignment (ties to the lower cluster id); medoids
// always belong to their own cluster.
inline std::vector<std::size_t> assign_to_medoids(const DissimilarityMatrix& d,
                                                  const std::vector<std::size_t>& medoids) {
    std::vector<std::size_t> assignment(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < medoids.size(); ++k)
            if (d(i, medoids[k]) < d(i, medoids[best])) best = k;
        assignment[i] = best;
    }
    for (std::size_t k = 0; k < medoids.size(); ++k) assignment[medoids[k]] = k;
    return assignment;
}

}  // namespace detail

// PAM k-medoids: greedy BUILD followed by best-improvement SWAP until no
// swap lowers the total cost. All ties resolve toward the lower index. The
// procedure is deterministic; `seed` is accepted for interface symmetry with
// randomized initializations and is not consumed.
inline ClusterModel kmedoids(const DissimilarityMatrix& d, std::size_t c, [[maybe_unused]] std::uint64_t seed = 0) {
    const std::size_t n = d.size();
    if (c < 2 || c + 1 > n)
        throw std::invalid_argument("cluster count " + std::to_string(c) + " outside [2, " +
                                    std::to_string(n > 0 ? n - 1 : 0) + "]");
    const double tol = pam_tie_tolerance * d.max_entry() * static_cast<double>(n);

    std::vector<bool> is_medoid(n, false);
    std::vector<std::size_t> medoids;
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());

    // BUILD
    {
        std::size_t first = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += d(i, j);
            if (s < best - tol) {
                best = s;
                first = j;
            }
        }
        medoids.push_back(first);
        is_medoid[first] = true;
        for (std::size_t i = 0; i < n; ++i) nearest[i] = d(i, first);
    }
    while (medoids.size() < c) {
        std::size_t pick = n;
        double best_gain = -1.0;
        for (std::size_t h = 0; h < n; ++h) {
            if (is_medoid[h]) continue;
            double gain = 0.0;
            for (std::size_t i = 0; i < n; ++i) gain += std::max(nearest[i] - d(i, h), 0.0);
            if (pick == n || gain > best_gain + tol) {
                best_gain = gain;
                pick = h;
            }
        }
        medoids.push_back(pick);
        is_medoid[pick] = true;
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], d(i, pick));
    }
    std::sort(medoids.begin(), medoids.end());

    // SWAP
    std::vector<std::size_t> owner(n);
    std::vector<double> second(n);
    for (int iter = 0; iter < pam_max_iterations; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
            std::size_t o = 0;
            for (std::size_t k = 0; k < medoids.size(); ++k) {
                const double v = d(i, medoids[k]);
                if (v < d1) {
                    d2 = d1;
                    d1 = v;
                    o = k;
                } else if (v < d2) {
                    d2 = v;
                }
            }
            nearest[i] = d1;
            second[i] = d2;
            owner[i] = o;
        }

        double best_delta = 0.0;
        std::size_t best_k = 0, best_h = n;
        for (std::size_t k = 0; k < medoids.size(); ++k) {
            for (std::size_t h = 0; h < n; ++h) {
                if (is_medoid[h]) continue;
                double delta = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dh = d(i, h);
                    if (owner[i] == k)
                        delta += std::min(dh, second[i]) - nearest[i];
                    else if (dh < nearest[i])
                        delta += dh - nearest[i];
                }
                if (delta < best_delta - tol) {
                    best_delta = delta;
                    best_k = k;
                    best_h = h;
                }
            }
        }
        if (best_h == n) break;
        is_medoid[medoids[best_k]] = false;
        is_medoid[best_h] = true;
        medoids[best_k] = best_h;
        std::sort(medoids.begin(), medoids.end());
    }

    ClusterModel model;
    model.clusters = c;
    model.medoids = medoids;
    model.assignment = detail::assign_to_medoids(d, medoids);
    for (std::size_t i = 0; i < n; ++i) model.cost += d(i, medoids[model.assignment[i]]);
    model.silhouette = silhouette_mean(d, model.assignment);
    return model;
}

// Runs PAM for every c in [2, c_max] and keeps the highest mean silhouette
// (ties to the smaller c).
inline ClusterModel select_cluster_count(const DissimilarityMatrix& d, std::size_t c_max, std::uint64_t seed = 0) {
    const std::size_t n = d.size();
    if (n < 4) throw std::invalid_argument("cluster-count selection needs at least 4 points");
    if (c_max < 2 || c_max + 1 > n)
        throw std::invalid_argument("c_max " + std::to_string(c_max) + " outside [2, " + std::to_string(n - 1) + "]");
    ClusterModel best = kmedoids(d, 2, seed);
    for (std::size_t c = 3; c <= c_max; ++c) {
        auto model = kmedoids(d, c, seed);
        if (model.silhouette > best.silhouette + silhouette_tie_tolerance) best = std::move(model);
    }
    return best;
}

}  // namespace fedsim
