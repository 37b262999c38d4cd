#pragma once

#include "fedsim/clustering.hpp"
#include "fedsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

enum class SelectionMode { clustered, random };

struct SelectionPlan {
    SelectionMode mode = SelectionMode::random;
    std::optional<ClusterModel> cluster_model;
    std::optional<double> epsilon;
    std::optional<std::size_t> n_fixed;

    static SelectionPlan clustered(ClusterModel model) {
        SelectionPlan p;
        p.mode = SelectionMode::clustered;
        p.cluster_model = std::move(model);
        return p;
    }
    static SelectionPlan random_fraction(double eps) {
        SelectionPlan p;
        p.epsilon = eps;
        return p;
    }
    static SelectionPlan random_count(std::size_t n) {
        SelectionPlan p;
        p.n_fixed = n;
        return p;
    }

    void validate() const {
        if (mode == SelectionMode::clustered) {
            if (!cluster_model) throw std::invalid_argument("clustered selection requires a cluster model");
            return;
        }
        if (epsilon.has_value() == n_fixed.has_value())
            throw std::invalid_argument("random selection needs exactly one of epsilon or a fixed count");
        if (epsilon && !(*epsilon > 0.0 && *epsilon <= 1.0))
            throw std::invalid_argument("selection fraction must lie in (0, 1]");
        if (n_fixed && *n_fixed < 1) throw std::invalid_argument("selection count must be at least 1");
    }
};

// n = max(floor(eps * N), 1)
inline std::size_t clients_for_fraction(std::size_t n_clients, double epsilon) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw std::invalid_argument("selection fraction must lie in (0, 1]");
    const auto n = static_cast<std::size_t>(std::floor(epsilon * static_cast<double>(n_clients)));
    return std::max<std::size_t>(n, 1);
}

// One client drawn uniformly from each cluster; returned sorted.
inline std::vector<std::size_t> select_clustered(const ClusterModel& model, rng_engine& gen) {
    std::vector<std::size_t> chosen;
    chosen.reserve(model.clusters);
    for (const auto& members : model.members()) {
        if (members.empty()) throw std::invalid_argument("cluster model has an empty cluster");
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        chosen.push_back(members[pick(gen)]);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

// Uniform sample of `count` distinct clients out of n_clients; returned sorted.
inline std::vector<std::size_t> select_random(std::size_t n_clients, std::size_t count, rng_engine& gen) {
    if (n_clients < 1) throw std::invalid_argument("no clients to select from");
    if (count < 1 || count > n_clients)
        throw std::invalid_argument("cannot select " + std::to_string(count) + " of " + std::to_string(n_clients) +
                                    " clients");
    std::vector<std::size_t> ids(n_clients);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    // partial Fisher-Yates
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
        std::swap(ids[i], ids[pick(gen)]);
    }
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline std::vector<std::size_t> select_random_fraction(std::size_t n_clients, double epsilon, rng_engine& gen) {
    return select_random(n_clients, clients_for_fraction(n_clients, epsilon), gen);
}

// Clients per round a plan selects.
inline std::size_t clients_per_round(const SelectionPlan& plan, std::size_t n_clients) {
    plan.validate();
    if (plan.mode == SelectionMode::clustered) return plan.cluster_model->clusters;
    return plan.n_fixed ? *plan.n_fixed : clients_for_fraction(n_clients, *plan.epsilon);
}

// Selection for `round`, drawn from a stream named by (seed, mode, round).
inline std::vector<std::size_t> select_for_round(const SelectionPlan& plan, std::size_t n_clients,
                                                 std::uint64_t seed, std::size_t round) {
    plan.validate();
    if (plan.mode == SelectionMode::clustered) {
        auto gen = make_stream(seed, {stream::select_clustered, round});
        return select_clustered(*plan.cluster_model, gen);
    }
    auto gen = make_stream(seed, {stream::select_random, round});
    return select_random(n_clients, clients_per_round(plan, n_clients), gen);
}

}  // namespace fedsim
