#pragma once

#include "fedsim/dataio.hpp"
#include "fedsim/energy.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/selection.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace fedsim {

struct HyperParams {
    std::size_t local_epochs = 1;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    ModelArch arch{};
    double accuracy_threshold = 0.97;
    std::size_t patience = 3;
    std::size_t max_rounds = 300;

    void validate() const {
        if (local_epochs < 1 || batch_size < 1 || patience < 1)
            throw config_error("local_epochs, batch_size and patience must be positive");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw config_error("learning_rate must be positive");
        if (!(accuracy_threshold > 0.0 && accuracy_threshold < 1.0))
            throw config_error("accuracy_threshold must lie in (0, 1)");
    }

    bool operator==(const HyperParams&) const = default;
};

// Source of per-client training time. `injected` charges
// fixed_seconds + per_sample_seconds * n_i * local_epochs and keeps runs
// reproducible; `wall_clock` measures the actual training call.
struct TimingModel {
    enum class Kind { injected, wall_clock };
    Kind kind = Kind::injected;
    double fixed_seconds = 0.0;
    double per_sample_seconds = 0.01;

    double injected_seconds(std::size_t samples, std::size_t epochs) const noexcept {
        return fixed_seconds + per_sample_seconds * static_cast<double>(samples) * static_cast<double>(epochs);
    }

    bool operator==(const TimingModel&) const = default;
};

struct LocalUpdate {
    ModelParams params;
    double seconds = 0.0;
    std::size_t samples = 0;
};

// Identifies a local training call in error messages.
struct TrainContext {
    long round = -1;
    long client = -1;
};

// Mini-batch SGD on cross-entropy over the shard, reshuffled every epoch.
inline LocalUpdate local_train(const ModelParams& global, const ClientShard& shard, const Dataset& ds,
                               const HyperParams& h, const TimingModel& timing, rng_engine& gen,
                               TrainContext ctx = {}) {
    if (shard.sample_indices.empty())
        throw std::invalid_argument("client " + std::to_string(shard.client_id) + " has an empty shard");
    if (global.shape != shape_for(global.shape.arch, ds))
        throw shape_mismatch_error("model shape does not match the dataset");
    if (h.batch_size < 1) throw std::invalid_argument("batch size must be positive");

    const auto start = std::chrono::steady_clock::now();
    const Network net(global.shape);
    LocalUpdate out{global, 0.0, shard.sample_indices.size()};
    auto& w = out.params.values;
    std::vector<std::size_t> order = shard.sample_indices;
    std::vector<double> grad;
    Network::Workspace ws;
    for (std::size_t epoch = 0; epoch < h.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), gen);
        for (std::size_t begin = 0; begin < order.size(); begin += h.batch_size) {
            const auto count = std::min(h.batch_size, order.size() - begin);
            const double loss =
                batch_loss_and_gradient(net, w, ds, std::span(order).subspan(begin, count), grad, ws);
            if (!std::isfinite(loss))
                throw non_finite_loss_error("non-finite loss in round " + std::to_string(ctx.round) + ", client " +
                                                std::to_string(ctx.client) + ", epoch " + std::to_string(epoch),
                                            ctx.round, ctx.client);
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= h.learning_rate * grad[j];
        }
    }
    if (timing.kind == TimingModel::Kind::injected)
        out.seconds = timing.injected_seconds(out.samples, h.local_epochs);
    else
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

// n_i / sum(n)
inline std::vector<double> aggregation_weights(std::span<const std::size_t> samples) {
    const double total = static_cast<double>(std::accumulate(samples.begin(), samples.end(), std::size_t{0}));
    if (!(total > 0.0)) throw std::invalid_argument("aggregation weights need a positive sample total");
    std::vector<double> w(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) w[i] = static_cast<double>(samples[i]) / total;
    return w;
}

// Sample-weighted FedAvg. Evaluated as w_0 + sum_i a_i (w_i - w_0) so that
// identical inputs come back bit-identical.
inline ModelParams aggregate(std::span<const std::pair<ModelParams, std::size_t>> updates) {
    if (updates.empty()) throw std::invalid_argument("nothing to aggregate");
    const auto& base = updates.front().first;
    std::vector<std::size_t> samples;
    for (const auto& [params, n] : updates) {
        if (params.shape != base.shape || params.values.size() != base.values.size())
            throw shape_mismatch_error("aggregated models have different shapes");
        samples.push_back(n);
    }
    const auto weights = aggregation_weights(samples);
    ModelParams out = base;
    for (std::size_t u = 1; u < updates.size(); ++u) {
        const auto& v = updates[u].first.values;
        for (std::size_t j = 0; j < v.size(); ++j) out.values[j] += weights[u] * (v[j] - base.values[j]);
    }
    // The base's own term, a_0 (w_0 - w_0), is zero.
    return out;
}

// Top-1 accuracy; argmax ties resolve to the lowest class.
inline double evaluate(const ModelParams& params, const Dataset& test) {
    if (test.size() == 0) throw std::invalid_argument("empty test set");
    if (params.shape != shape_for(params.shape.arch, test))
        throw shape_mismatch_error("model shape does not match the test set");
    const Network net(params.shape);
    Network::Workspace ws;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (net.predict(params.values, test.row(i), ws) == static_cast<std::size_t>(test.labels[i])) ++correct;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

struct ConvergenceResult {
    bool converged = false;
    std::size_t rounds = 0;
    double std_window = 0.0;
};

inline double population_std(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    // Shifted by the first sample so a constant window gives exactly 0.
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x - xs[0];
    mean /= n;
    double ss = 0.0;
    for (double x : xs) ss += (x - xs[0] - mean) * (x - xs[0] - mean);
    return std::sqrt(ss / n);
}

// history[t-1] is the accuracy after round t. Converged at the first t whose
// trailing `patience` accuracies all reach the threshold; std_window is the
// population std of that window. Not converged: rounds = history length and
// std_window covers the trailing window.
inline ConvergenceResult check_convergence(std::span<const double> history, const HyperParams& h) {
    if (history.empty()) throw std::invalid_argument("empty accuracy history");
    const std::size_t p = std::max<std::size_t>(h.patience, 1);
    std::size_t run = 0;
    for (std::size_t t = 0; t < history.size(); ++t) {
        run = history[t] >= h.accuracy_threshold ? run + 1 : 0;
        if (run >= p) return {true, t + 1, population_std(history.subspan(t + 1 - p, p))};
    }
    const auto w = std::min(p, history.size());
    return {false, history.size(), population_std(history.subspan(history.size() - w, w))};
}

struct RoundEntry {
    std::size_t round = 0;
    std::vector<std::size_t> selected;
    std::vector<std::size_t> samples;
    std::vector<double> train_seconds;
    double accuracy = 0.0;

    bool operator==(const RoundEntry&) const = default;
};

struct RunRecord {
    // rounds[0] is the evaluation of the initial model (no clients selected).
    std::vector<RoundEntry> rounds;
    bool converged = false;
    std::size_t rounds_to_converge = 0;
    double accuracy_std_window = 0.0;
    double total_energy_wh = 0.0;
    std::vector<EnergyEntry> energy;
    ModelParams final_params;

    // Mean selected clients over training rounds.
    double clients_per_round() const {
        if (rounds.size() <= 1) return 0.0;
        double s = 0.0;
        for (std::size_t t = 1; t < rounds.size(); ++t) s += static_cast<double>(rounds[t].selected.size());
        return s / static_cast<double>(rounds.size() - 1);
    }

    bool operator==(const RunRecord&) const = default;
};

struct FederatedSetup {
    const Dataset& train;
    const Dataset& test;
    std::span<const ClientShard> shards;
    SelectionPlan plan;
    HyperParams hyper;
    std::uint64_t seed = 0;
    PowerModel power{};
    TimingModel timing{};
    // Threads used for the local updates of one round.
    std::size_t workers = 1;
};

namespace detail {

inline std::vector<LocalUpdate> train_selected(const FederatedSetup& s, const ModelParams& global,
                                               const std::vector<std::size_t>& selected, std::size_t round) {
    std::vector<LocalUpdate> results(selected.size());
    std::vector<std::exception_ptr> failures(selected.size());
    auto work = [&](std::size_t slot) {
        const auto client = selected[slot];
        try {
            auto gen = make_stream(s.seed, {stream::local_train, round, client});
            results[slot] = local_train(global, s.shards[client], s.train, s.hyper, s.timing, gen,
                                        {static_cast<long>(round), static_cast<long>(client)});
        } catch (const error&) {
            failures[slot] = std::current_exception();
        } catch (const std::exception& e) {
            failures[slot] = std::make_exception_ptr(
                error("round " + std::to_string(round) + ", client " + std::to_string(client) + ": " + e.what()));
        }
    };
    const auto threads = std::min(std::max<std::size_t>(s.workers, 1), selected.size());
    if (threads <= 1) {
        for (std::size_t slot = 0; slot < selected.size(); ++slot) work(slot);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t slot = t; slot < selected.size(); slot += threads) work(slot);
            });
    }
    for (auto& f : failures)
        if (f) std::rethrow_exception(f);
    return results;
}

}  // namespace detail

// Server loop: evaluate w_0, then per round select, train locally from the
// current global model, aggregate, evaluate and charge energy, stopping at
// convergence or max_rounds.
inline RunRecord run_federated(const FederatedSetup& s) {
    s.hyper.validate();
    s.plan.validate();
    if (s.shards.empty()) throw std::invalid_argument("no client shards");
    for (std::size_t c = 0; c < s.shards.size(); ++c)
        if (s.shards[c].client_id != c) throw std::invalid_argument("shard ids must equal their positions");
    if (s.plan.mode == SelectionMode::clustered && s.plan.cluster_model->assignment.size() != s.shards.size())
        throw std::invalid_argument("cluster model covers a different number of clients");

    const Network net(shape_for(s.hyper.arch, s.train));
    ModelParams global = net.init(s.seed);
    EnergyLedger ledger;
    RunRecord rec;
    rec.rounds.push_back({0, {}, {}, {}, evaluate(global, s.test)});
    std::vector<double> history;

    for (std::size_t round = 1; round <= s.hyper.max_rounds; ++round) {
        RoundEntry entry;
        entry.round = round;
        entry.selected = select_for_round(s.plan, s.shards.size(), s.seed, round);
        auto results = detail::train_selected(s, global, entry.selected, round);

        std::vector<std::pair<ModelParams, std::size_t>> updates;
        updates.reserve(results.size());
        for (std::size_t slot = 0; slot < results.size(); ++slot) {
            const auto client = entry.selected[slot];
            entry.samples.push_back(results[slot].samples);
            entry.train_seconds.push_back(results[slot].seconds);
            ledger.record(round, client, s.power.watts_for(client), results[slot].seconds);
            updates.emplace_back(std::move(results[slot].params), results[slot].samples);
        }
        global = aggregate(updates);
        entry.accuracy = evaluate(global, s.test);
        history.push_back(entry.accuracy);
        rec.rounds.push_back(std::move(entry));

        const auto conv = check_convergence(history, s.hyper);
        if (conv.converged) {
            rec.converged = true;
            rec.rounds_to_converge = conv.rounds;
            rec.accuracy_std_window = conv.std_window;
            break;
        }
    }
    if (!rec.converged) {
        rec.rounds_to_converge = history.size();
        rec.accuracy_std_window = history.empty() ? 0.0 : check_convergence(history, s.hyper).std_window;
    }
    rec.energy = ledger.entries();
    rec.total_energy_wh = total(rec.energy);
    rec.final_params = std::move(global);
    return rec;
}

}  // namespace fedsim
