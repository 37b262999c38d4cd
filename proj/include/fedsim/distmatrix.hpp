#pragma once

#include "fedsim/dataio.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

// N x K row-stochastic matrix; row i is client i's label pmf.
class LabelMatrix {
public:
    LabelMatrix() = default;
    LabelMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t i, std::size_t k) noexcept { return data_[i * cols_ + k]; }
    double operator()(std::size_t i, std::size_t k) const noexcept { return data_[i * cols_ + k]; }

    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

    bool operator==(const LabelMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline std::vector<std::size_t> label_histogram(const ClientShard& shard, const Dataset& ds) {
    if (shard.sample_indices.empty())
        throw std::invalid_argument("client " + std::to_string(shard.client_id) + " has an empty shard");
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (auto i : shard.sample_indices) ++counts[static_cast<std::size_t>(ds.labels.at(i))];
    return counts;
}

// p[i][k] = n[i][k] / n[i]
inline LabelMatrix build_distribution_matrix(std::span<const ClientShard> shards, const Dataset& ds) {
    LabelMatrix p(shards.size(), ds.num_classes);
    for (std::size_t i = 0; i < shards.size(); ++i) {
        const auto counts = label_histogram(shards[i], ds);
        const double n = static_cast<double>(shards[i].sample_indices.size());
        for (std::size_t k = 0; k < counts.size(); ++k) p(i, k) = static_cast<double>(counts[k]) / n;
    }
    return p;
}

struct PcaProjection {
    std::vector<std::array<double, 2>> points;
    // Variance along each returned component (eigenvalues of the covariance).
    std::array<double, 2> variance{0.0, 0.0};
    // Set when the covariance has fewer than two positive eigenvalues; the
    // missing coordinates are zero.
    bool rank_deficient = false;
};

// Projects the centered rows of `p` onto the top two eigenvectors of the
// K x K sample covariance. Each component is signed so that its
// largest-magnitude loading is positive.
inline PcaProjection pca_project(const LabelMatrix& p) {
    const auto n = p.rows();
    const auto k = p.cols();
    if (n < 3 || k < 2) throw std::invalid_argument("PCA needs at least 3 rows and 2 columns");

    Eigen::MatrixXd x(n, k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p(i, j);
    x.rowwise() -= x.colwise().mean();
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("PCA eigen-solve failed");
    // Eigenvalues ascend; relative cut-off separates true zeros from round-off.
    const Eigen::VectorXd& values = eig.eigenvalues();
    const double largest = std::max(values(values.size() - 1), 0.0);
    const double cutoff = largest * 1e-12 * static_cast<double>(k);

    PcaProjection out;
    out.points.assign(n, {0.0, 0.0});
    int positive = 0;
    for (int c = 0; c < 2; ++c) {
        const Eigen::Index col = values.size() - 1 - c;
        if (!(values(col) > cutoff) || largest == 0.0) break;
        ++positive;
        Eigen::VectorXd axis = eig.eigenvectors().col(col);
        Eigen::Index pivot = 0;
        for (Eigen::Index j = 1; j < axis.size(); ++j)
            if (std::abs(axis(j)) > std::abs(axis(pivot)) + 1e-12) pivot = j;
        if (axis(pivot) < 0) axis = -axis;
        const Eigen::VectorXd coords = x * axis;
        for (std::size_t i = 0; i < n; ++i) out.points[i][c] = coords(static_cast<Eigen::Index>(i));
        out.variance[c] = values(col);
    }
    out.rank_deficient = positive < 2;
    return out;
}

}  // namespace fedsim
