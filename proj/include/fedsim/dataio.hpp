#pragma once

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fedsim {

// Pixel values are divided by this on load so features land in [0,1].
inline constexpr double pixel_scale = 255.0;

inline constexpr std::uint32_t idx_images_magic = 2051;
inline constexpr std::uint32_t idx_labels_magic = 2049;

// Labeled samples stored row-major: features[i * dim + f].
struct Dataset {
    std::vector<double> features;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    // Non-zero only for image data; required by the convolutional model.
    std::size_t image_rows = 0;
    std::size_t image_cols = 0;

    std::size_t size() const noexcept { return labels.size(); }

    std::span<const double> row(std::size_t i) const noexcept {
        return {features.data() + i * dim, dim};
    }

    bool operator==(const Dataset&) const = default;
};

struct ClientShard {
    std::size_t client_id = 0;
    std::vector<std::size_t> sample_indices;

    bool operator==(const ClientShard&) const = default;
};

// Throws std::invalid_argument when a Dataset invariant does not hold.
inline void validate_dataset(const Dataset& ds) {
    if (ds.labels.empty()) throw std::invalid_argument("dataset is empty");
    if (ds.dim == 0 || ds.features.size() != ds.labels.size() * ds.dim)
        throw std::invalid_argument("dataset feature storage does not match labels x dim");
    if (ds.num_classes < 1) throw std::invalid_argument("dataset has no classes");
    std::vector<bool> seen(ds.num_classes, false);
    for (int y : ds.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= ds.num_classes)
            throw std::invalid_argument("label " + std::to_string(y) + " outside [0, K-1]");
        seen[static_cast<std::size_t>(y)] = true;
    }
    for (std::size_t k = 0; k < ds.num_classes; ++k)
        if (!seen[k]) throw std::invalid_argument("label " + std::to_string(k) + " never occurs");
}

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw idx_error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void require_bytes(const std::vector<std::uint8_t>& bytes, std::size_t needed, const std::string& path,
                          const char* what) {
    if (bytes.size() < needed)
        throw idx_truncated_error("'" + path + "' truncated in " + what + ": need " + std::to_string(needed) +
                                  " bytes, have " + std::to_string(bytes.size()));
}

}  // namespace detail

// Reads an IDX image file (magic 2051, dims n x rows x cols) and its IDX label
// file (magic 2049, dim n). K is inferred as max(label) + 1.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = detail::read_file_bytes(images_path);
    const auto lab = detail::read_file_bytes(labels_path);

    detail::require_bytes(img, 4, images_path, "magic");
    if (auto magic = detail::read_be32(img, 0); magic != idx_images_magic)
        throw idx_magic_error("'" + images_path + "': image magic " + std::to_string(magic) + ", expected 2051");
    detail::require_bytes(lab, 4, labels_path, "magic");
    if (auto magic = detail::read_be32(lab, 0); magic != idx_labels_magic)
        throw idx_magic_error("'" + labels_path + "': label magic " + std::to_string(magic) + ", expected 2049");

    detail::require_bytes(img, 16, images_path, "header");
    detail::require_bytes(lab, 8, labels_path, "header");
    const std::size_t count = detail::read_be32(img, 4);
    const std::size_t rows = detail::read_be32(img, 8);
    const std::size_t cols = detail::read_be32(img, 12);
    const std::size_t label_count = detail::read_be32(lab, 4);
    if (count != label_count)
        throw idx_count_mismatch_error("image count " + std::to_string(count) + " differs from label count " +
                                       std::to_string(label_count));
    if (count == 0 || rows == 0 || cols == 0) throw idx_error("'" + images_path + "' has an empty dimension");

    const std::size_t dim = rows * cols;
    detail::require_bytes(img, 16 + count * dim, images_path, "pixel payload");
    detail::require_bytes(lab, 8 + count, labels_path, "label payload");

    Dataset ds;
    ds.dim = dim;
    ds.image_rows = rows;
    ds.image_cols = cols;
    ds.features.resize(count * dim);
    std::transform(img.begin() + 16, img.begin() + 16 + static_cast<std::ptrdiff_t>(count * dim),
                   ds.features.begin(), [](std::uint8_t px) { return px / pixel_scale; });
    ds.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(count));
    ds.num_classes = static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
    try {
        validate_dataset(ds);
    } catch (const std::invalid_argument& e) {
        throw idx_error("'" + labels_path + "': " + e.what());
    }
    return ds;
}

namespace detail {

inline std::vector<double> synthetic_means(std::size_t classes, std::size_t dim, std::uint64_t seed) {
    auto gen = make_stream(seed, {stream::synthetic_means});
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> means(classes * dim);
    for (auto& m : means) m = unit(gen);
    return means;
}

inline Dataset sample_around(const std::vector<double>& means, std::size_t classes, std::size_t dim,
                             std::size_t per_class, double spread, rng_engine gen) {
    std::normal_distribution<double> unit(0.0, 1.0);
    Dataset ds;
    ds.num_classes = classes;
    ds.dim = dim;
    ds.features.reserve(classes * per_class * dim);
    ds.labels.reserve(classes * per_class);
    for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t s = 0; s < per_class; ++s) {
            for (std::size_t f = 0; f < dim; ++f) ds.features.push_back(means[k * dim + f] + spread * unit(gen));
            ds.labels.push_back(static_cast<int>(k));
        }
    }
    return ds;
}

inline void check_synthetic_args(std::size_t classes, std::size_t dim, std::size_t per_class, double spread) {
    if (classes < 2) throw std::invalid_argument("synthetic data needs K >= 2");
    if (dim < 2) throw std::invalid_argument("synthetic data needs F >= 2");
    if (per_class < 1) throw std::invalid_argument("synthetic data needs samples_per_class >= 1");
    if (!(spread >= 0.0)) throw std::invalid_argument("synthetic spread must be non-negative");
}

}  // namespace detail

// K isotropic Gaussian classes around standard-normal means drawn from seed.
// Samples are grouped by class (class 0 first).
inline Dataset generate_synthetic(std::size_t classes, std::size_t dim, std::size_t samples_per_class, double spread,
                                  std::uint64_t seed) {
    detail::check_synthetic_args(classes, dim, samples_per_class, spread);
    const auto means = detail::synthetic_means(classes, dim, seed);
    return detail::sample_around(means, classes, dim, samples_per_class, spread,
                                 make_stream(seed, {stream::synthetic_samples, 0}));
}

// A held-out set drawn around the same class means as generate_synthetic(seed)
// but from an independent sample stream.
inline Dataset generate_synthetic_holdout(std::size_t classes, std::size_t dim, std::size_t samples_per_class,
                                          double spread, std::uint64_t seed) {
    detail::check_synthetic_args(classes, dim, samples_per_class, spread);
    const auto means = detail::synthetic_means(classes, dim, seed);
    return detail::sample_around(means, classes, dim, samples_per_class, spread,
                                 make_stream(seed, {stream::synthetic_samples, 1}));
}

// Rows `indices` of `ds`, in the given order.
inline Dataset select_rows(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.dim = ds.dim;
    out.image_rows = ds.image_rows;
    out.image_cols = ds.image_cols;
    out.features.reserve(indices.size() * ds.dim);
    out.labels.reserve(indices.size());
    for (auto i : indices) {
        auto r = ds.row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

// Uniform random subset of `count` samples, kept in original order. Used to
// run on a slice of a large IDX set.
inline Dataset random_subset(const Dataset& ds, std::size_t count, std::uint64_t seed) {
    if (count == 0 || count > ds.size()) throw std::invalid_argument("subset size out of range");
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto gen = make_stream(seed, {stream::split});
    std::shuffle(idx.begin(), idx.end(), gen);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    auto out = select_rows(ds, idx);
    validate_dataset(out);
    return out;
}

namespace detail {

// Integer split of `total` proportional to `weights` (which sum to 1) using
// largest remainders; ties go to the lower index.
inline std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total) {
    const std::size_t n = weights.size();
    std::vector<std::size_t> counts(n);
    std::vector<double> remainder(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double quota = weights[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(quota);
        remainder[i] = quota - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    // Guard against quota rounding pushing the floor sum past total.
    while (assigned > total) {
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++counts[order[r % n]];
    return counts;
}

inline bool dirichlet_draw(rng_engine& gen, double beta, std::vector<double>& out) {
    std::gamma_distribution<double> gamma(beta, 1.0);
    double sum = 0.0;
    for (auto& x : out) {
        x = gamma(gen);
        sum += x;
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) return false;
    for (auto& x : out) x /= sum;
    return true;
}

}  // namespace detail

inline constexpr int partition_max_retries = 64;

// Label-skewed split: for each label, client proportions come from a
// symmetric Dirichlet(beta) draw and that label's samples are dealt out by
// largest-remainder rounding. A draw leaving a client empty is retried with
// the next sub-seed; after partition_max_retries the last draw is repaired
// by moving single samples from the largest shards to the empty ones.
inline std::vector<ClientShard> partition_dirichlet(const Dataset& ds, std::size_t clients, double beta,
                                                    std::uint64_t seed) {
    if (clients < 2) throw partition_error("partition needs at least 2 clients");
    if (!(beta > 0.0)) throw partition_error("Dirichlet concentration must be positive");
    if (ds.size() < clients) throw partition_error("fewer samples than clients");

    std::vector<std::vector<std::size_t>> by_label(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_label[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    std::vector<std::vector<std::size_t>> shards;
    for (int attempt = 0; attempt < partition_max_retries; ++attempt) {
        auto gen = make_stream(seed, {stream::partition, static_cast<std::uint64_t>(attempt)});
        shards.assign(clients, {});
        std::vector<double> props(clients);
        bool ok = true;
        for (const auto& members : by_label) {
            if (members.empty()) continue;
            auto order = members;
            std::shuffle(order.begin(), order.end(), gen);
            if (!detail::dirichlet_draw(gen, beta, props)) {
                ok = false;
                break;
            }
            const auto counts = detail::largest_remainder(props, order.size());
            std::size_t pos = 0;
            for (std::size_t c = 0; c < clients; ++c)
                for (std::size_t j = 0; j < counts[c]; ++j) shards[c].push_back(order[pos++]);
        }
        if (ok && std::none_of(shards.begin(), shards.end(), [](const auto& s) { return s.empty(); })) break;
        if (attempt + 1 < partition_max_retries) continue;

        if (!ok) throw partition_error("Dirichlet draws degenerate for every retry");
        for (auto& target : shards) {
            if (!target.empty()) continue;
            auto donor = std::max_element(shards.begin(), shards.end(),
                                          [](const auto& a, const auto& b) { return a.size() < b.size(); });
            if (donor->size() < 2) throw partition_error("cannot top up empty client: no shard has a spare sample");
            target.push_back(donor->back());
            donor->pop_back();
        }
    }

    std::vector<ClientShard> out(clients);
    for (std::size_t c = 0; c < clients; ++c) {
        out[c].client_id = c;
        out[c].sample_indices = std::move(shards[c]);
        std::sort(out[c].sample_indices.begin(), out[c].sample_indices.end());
    }
    return out;
}

}  // namespace fedsim
