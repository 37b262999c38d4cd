#pragma once

#include "fedsim/clustering.hpp"
#include "fedsim/csv.hpp"
#include "fedsim/dataio.hpp"
#include "fedsim/distmatrix.hpp"
#include "fedsim/energy.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/fedcore.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/outputs.hpp"
#include "fedsim/selection.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace fedsim {

using json = nlohmann::json;

struct DatasetSpec {
    enum class Kind { synthetic, idx };
    Kind kind = Kind::synthetic;
    std::uint64_t seed = 7;

    std::size_t classes = 10;
    std::size_t features = 16;
    std::size_t train_per_class = 300;
    std::size_t test_per_class = 100;
    double spread = 0.8;

    std::string train_images, train_labels, test_images, test_labels;
    // 0 keeps the full set.
    std::size_t train_subset = 0;
    std::size_t test_subset = 0;

    bool operator==(const DatasetSpec&) const = default;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    std::size_t clients = 20;
    double beta = 0.05;
    std::vector<MetricId> metrics;
    std::vector<std::size_t> random_baselines;
    std::vector<double> random_fractions;
    // Adds a random baseline at the rounded mean clients-per-round of every metric.
    bool match_random = false;
    // 0 means N - 1.
    std::size_t c_max = 0;
    HyperParams hyper;
    PowerModel power;
    TimingModel timing;
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "out";
    // Concurrent (strategy, seed) cells.
    std::size_t workers = 1;
    // Threads per round inside one cell.
    std::size_t train_workers = 1;

    std::size_t effective_c_max() const { return c_max == 0 ? clients - 1 : c_max; }

    void validate() const {
        if (clients < 4) throw config_error("at least 4 clients are required");
        if (!(beta > 0.0) || !std::isfinite(beta)) throw config_error("beta must be positive");
        if (metrics.empty() && random_baselines.empty() && random_fractions.empty() && !match_random)
            throw config_error("no metric or random baseline to run");
        if (match_random && metrics.empty()) throw config_error("match_random needs at least one metric");
        if (seeds.empty()) throw config_error("seeds must not be empty");
        if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
            throw config_error("seeds must be distinct");
        if (std::set<MetricId>(metrics.begin(), metrics.end()).size() != metrics.size())
            throw config_error("metrics must be distinct");
        for (auto n : random_baselines)
            if (n < 1 || n > clients) throw config_error("random baseline n=" + std::to_string(n) + " out of range");
        for (auto f : random_fractions)
            if (!(f > 0.0 && f <= 1.0)) throw config_error("random fraction must lie in (0, 1]");
        if (c_max != 0 && (c_max < 2 || c_max + 1 > clients)) throw config_error("c_max must lie in [2, N-1]");
        if (workers < 1 || train_workers < 1) throw config_error("worker counts must be positive");
        if (power.watts.empty() || (power.watts.size() != 1 && power.watts.size() != clients))
            throw config_error("power needs one value or one per client");
        for (double w : power.watts)
            if (!(w > 0.0)) throw config_error("client power must be positive");
        if (!(timing.fixed_seconds >= 0.0) || !(timing.per_sample_seconds >= 0.0))
            throw config_error("timing costs must be non-negative");
        if (dataset.kind == DatasetSpec::Kind::synthetic) {
            if (dataset.classes < 2 || dataset.features < 1 || dataset.train_per_class < 1 || dataset.test_per_class < 1)
                throw config_error("synthetic dataset sizes must be positive with at least 2 classes");
            if (!(dataset.spread >= 0.0)) throw config_error("synthetic spread must be non-negative");
        } else if (dataset.train_images.empty() || dataset.train_labels.empty() || dataset.test_images.empty() ||
                   dataset.test_labels.empty()) {
            throw config_error("idx dataset needs all four file paths");
        }
        hyper.validate();
    }
};

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw config_error(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }))
            throw config_error("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw config_error(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline ArchKind parse_arch(const std::string& s) {
    if (s == "linear") return ArchKind::linear;
    if (s == "mlp") return ArchKind::mlp;
    if (s == "cnn") return ArchKind::cnn;
    throw config_error("unknown arch '" + s + "'");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
    using detail::read_opt;
    detail::reject_unknown(j,
                           {"dataset", "clients", "beta", "metrics", "random_baselines", "random_fractions",
                            "match_random", "c_max", "hyperparams", "power", "timing", "seeds", "output_dir",
                            "workers", "train_workers"},
                           "config");
    ExperimentConfig c;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::reject_unknown(d,
                               {"kind", "seed", "classes", "features", "train_per_class", "test_per_class", "spread",
                                "train_images", "train_labels", "test_images", "test_labels", "train_subset",
                                "test_subset"},
                               "dataset");
        std::string kind = "synthetic";
        read_opt(d, "kind", kind);
        if (kind == "synthetic")
            c.dataset.kind = DatasetSpec::Kind::synthetic;
        else if (kind == "idx")
            c.dataset.kind = DatasetSpec::Kind::idx;
        else
            throw config_error("unknown dataset kind '" + kind + "'");
        read_opt(d, "seed", c.dataset.seed);
        read_opt(d, "classes", c.dataset.classes);
        read_opt(d, "features", c.dataset.features);
        read_opt(d, "train_per_class", c.dataset.train_per_class);
        read_opt(d, "test_per_class", c.dataset.test_per_class);
        read_opt(d, "spread", c.dataset.spread);
        read_opt(d, "train_images", c.dataset.train_images);
        read_opt(d, "train_labels", c.dataset.train_labels);
        read_opt(d, "test_images", c.dataset.test_images);
        read_opt(d, "test_labels", c.dataset.test_labels);
        read_opt(d, "train_subset", c.dataset.train_subset);
        read_opt(d, "test_subset", c.dataset.test_subset);
    }
    read_opt(j, "clients", c.clients);
    read_opt(j, "beta", c.beta);
    if (j.contains("metrics")) {
        std::vector<std::string> names;
        read_opt(j, "metrics", names);
        for (const auto& n : names) {
            if (n == "all") {
                c.metrics.insert(c.metrics.end(), all_metrics.begin(), all_metrics.end());
                continue;
            }
            const auto m = parse_metric(n);
            if (!m || *m == MetricId::random) throw config_error("unknown metric '" + n + "'");
            c.metrics.push_back(*m);
        }
    }
    read_opt(j, "random_baselines", c.random_baselines);
    read_opt(j, "random_fractions", c.random_fractions);
    read_opt(j, "match_random", c.match_random);
    read_opt(j, "c_max", c.c_max);
    if (j.contains("hyperparams")) {
        const auto& h = j.at("hyperparams");
        detail::reject_unknown(h,
                               {"local_epochs", "batch_size", "learning_rate", "arch", "hidden", "conv1_channels",
                                "conv2_channels", "accuracy_threshold", "patience", "max_rounds"},
                               "hyperparams");
        read_opt(h, "local_epochs", c.hyper.local_epochs);
        read_opt(h, "batch_size", c.hyper.batch_size);
        read_opt(h, "learning_rate", c.hyper.learning_rate);
        if (h.contains("arch")) c.hyper.arch.kind = detail::parse_arch(h.at("arch").get<std::string>());
        read_opt(h, "hidden", c.hyper.arch.hidden);
        read_opt(h, "conv1_channels", c.hyper.arch.conv1_channels);
        read_opt(h, "conv2_channels", c.hyper.arch.conv2_channels);
        read_opt(h, "accuracy_threshold", c.hyper.accuracy_threshold);
        read_opt(h, "patience", c.hyper.patience);
        read_opt(h, "max_rounds", c.hyper.max_rounds);
    }
    if (j.contains("power")) {
        const auto& p = j.at("power");
        if (p.is_number()) {
            c.power.watts = {p.get<double>()};
        } else {
            detail::reject_unknown(p, {"watts"}, "power");
            const auto& w = p.at("watts");
            c.power.watts = w.is_number() ? std::vector<double>{w.get<double>()} : w.get<std::vector<double>>();
        }
    }
    if (j.contains("timing")) {
        const auto& t = j.at("timing");
        detail::reject_unknown(t, {"kind", "fixed_seconds", "per_sample_seconds"}, "timing");
        std::string kind = "injected";
        read_opt(t, "kind", kind);
        if (kind == "injected")
            c.timing.kind = TimingModel::Kind::injected;
        else if (kind == "wall_clock")
            c.timing.kind = TimingModel::Kind::wall_clock;
        else
            throw config_error("unknown timing kind '" + kind + "'");
        read_opt(t, "fixed_seconds", c.timing.fixed_seconds);
        read_opt(t, "per_sample_seconds", c.timing.per_sample_seconds);
    }
    read_opt(j, "seeds", c.seeds);
    read_opt(j, "output_dir", c.output_dir);
    read_opt(j, "workers", c.workers);
    read_opt(j, "train_workers", c.train_workers);
    c.validate();
    return c;
}

// Full echo with every default filled in.
inline json to_json(const ExperimentConfig& c) {
    json d;
    if (c.dataset.kind == DatasetSpec::Kind::synthetic) {
        d = {{"kind", "synthetic"},
             {"seed", c.dataset.seed},
             {"classes", c.dataset.classes},
             {"features", c.dataset.features},
             {"train_per_class", c.dataset.train_per_class},
             {"test_per_class", c.dataset.test_per_class},
             {"spread", c.dataset.spread}};
    } else {
        d = {{"kind", "idx"},
             {"seed", c.dataset.seed},
             {"train_images", c.dataset.train_images},
             {"train_labels", c.dataset.train_labels},
             {"test_images", c.dataset.test_images},
             {"test_labels", c.dataset.test_labels},
             {"train_subset", c.dataset.train_subset},
             {"test_subset", c.dataset.test_subset}};
    }
    std::vector<std::string> metrics;
    for (auto m : c.metrics) metrics.emplace_back(to_string(m));
    return {{"dataset", d},
            {"clients", c.clients},
            {"beta", c.beta},
            {"metrics", metrics},
            {"random_baselines", c.random_baselines},
            {"random_fractions", c.random_fractions},
            {"match_random", c.match_random},
            {"c_max", c.effective_c_max()},
            {"hyperparams",
             {{"local_epochs", c.hyper.local_epochs},
              {"batch_size", c.hyper.batch_size},
              {"learning_rate", c.hyper.learning_rate},
              {"arch", std::string(to_string(c.hyper.arch.kind))},
              {"hidden", c.hyper.arch.hidden},
              {"conv1_channels", c.hyper.arch.conv1_channels},
              {"conv2_channels", c.hyper.arch.conv2_channels},
              {"accuracy_threshold", c.hyper.accuracy_threshold},
              {"patience", c.hyper.patience},
              {"max_rounds", c.hyper.max_rounds}}},
            {"power", {{"watts", c.power.watts}}},
            {"timing",
             {{"kind", c.timing.kind == TimingModel::Kind::injected ? "injected" : "wall_clock"},
              {"fixed_seconds", c.timing.fixed_seconds},
              {"per_sample_seconds", c.timing.per_sample_seconds}}},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir},
            {"workers", c.workers},
            {"train_workers", c.train_workers}};
}

inline ExperimentConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(csv::read_file(path));
    } catch (const json::parse_error& e) {
        throw config_error("cannot parse '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

struct LoadedData {
    Dataset train;
    Dataset test;
};

inline LoadedData load_data(const DatasetSpec& spec) {
    if (spec.kind == DatasetSpec::Kind::synthetic)
        return {generate_synthetic(spec.classes, spec.features, spec.train_per_class, spec.spread, spec.seed),
                generate_synthetic_holdout(spec.classes, spec.features, spec.test_per_class, spec.spread, spec.seed)};
    LoadedData d{load_idx(spec.train_images, spec.train_labels), load_idx(spec.test_images, spec.test_labels)};
    if (spec.train_subset) d.train = random_subset(d.train, spec.train_subset, spec.seed);
    if (spec.test_subset) d.test = random_subset(d.test, spec.test_subset, spec.seed + 1);
    d.test.num_classes = d.train.num_classes = std::max(d.train.num_classes, d.test.num_classes);
    return d;
}

struct Strategy {
    std::string name;
    std::optional<MetricId> metric;
    std::optional<std::size_t> random_n;
    std::optional<double> random_fraction;

    bool clustered() const { return metric.has_value(); }

    SelectionPlan plan_without_model() const {
        if (random_n) return SelectionPlan::random_count(*random_n);
        if (random_fraction) return SelectionPlan::random_fraction(*random_fraction);
        throw std::logic_error("clustered strategy needs a cluster model");
    }

    static Strategy for_metric(MetricId m) { return {std::string(to_string(m)), m, std::nullopt, std::nullopt}; }
    static Strategy random_count(std::size_t n) {
        return {"random_n" + std::to_string(n), std::nullopt, n, std::nullopt};
    }
    static Strategy random_frac(double f) {
        return {"random_f" + csv::format_double(f), std::nullopt, std::nullopt, f};
    }
};

// Per-seed client population: partition, label distributions and their PCA.
struct SeedContext {
    std::uint64_t seed = 0;
    std::vector<ClientShard> shards;
    LabelMatrix distribution{0, 0};
    std::optional<PcaProjection> pca;
};

inline SeedContext prepare_seed(const ExperimentConfig& c, const LoadedData& data, std::uint64_t seed) {
    SeedContext s;
    s.seed = seed;
    s.shards = partition_dirichlet(data.train, c.clients, c.beta, seed);
    s.distribution = build_distribution_matrix(s.shards, data.train);
    if (s.distribution.cols() >= 2) s.pca = pca_project(s.distribution);
    return s;
}

struct Clustering {
    MetricId metric = MetricId::euclidean;
    std::uint64_t seed = 0;
    DissimilarityMatrix dissimilarity{0, MetricId::euclidean};
    ClusterModel model;
};

inline Clustering cluster_clients(const ExperimentConfig& c, const SeedContext& s, MetricId m) {
    auto d = pairwise_dissimilarity(s.distribution, m);
    auto model = select_cluster_count(d, c.effective_c_max(), s.seed);
    return {m, s.seed, std::move(d), std::move(model)};
}

struct CellResult {
    std::string strategy;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    RunRecord record;
};

inline RunRecord run_cell(const ExperimentConfig& c, const LoadedData& data, const SeedContext& s,
                          const Strategy& strategy, const Clustering* clustering) {
    SelectionPlan plan;
    if (strategy.clustered()) {
        if (!clustering) throw std::logic_error("missing clustering for " + strategy.name);
        plan = SelectionPlan::clustered(clustering->model);
    } else {
        plan = strategy.plan_without_model();
    }
    FederatedSetup setup{data.train, data.test, s.shards, plan, c.hyper, s.seed, c.power, c.timing, c.train_workers};
    return run_federated(setup);
}

inline std::string seed_file(const std::string& stem, const std::string& name, std::uint64_t seed) {
    return stem + "_" + name + "_" + std::to_string(seed) + ".csv";
}

inline void write_table(const std::filesystem::path& dir, const std::string& file, const csv::Table& t) {
    csv::write_file((dir / file).string(), csv::to_string(t));
}

inline void write_cluster_outputs(const std::filesystem::path& dir, const SeedContext& s, const Clustering& cl) {
    const std::string name(to_string(cl.metric));
    write_table(dir, seed_file("clusters", name, s.seed), io::clusters_table(cl.model));
    write_table(dir, seed_file("dissimilarity", name, s.seed), io::dissimilarity_table(cl.dissimilarity));
    if (s.pca) write_table(dir, seed_file("pca", name, s.seed), io::pca_table(*s.pca, cl.model.assignment));
}

inline void write_cell_outputs(const std::filesystem::path& dir, const CellResult& cell) {
    write_table(dir, seed_file("rounds", cell.strategy, cell.seed), io::rounds_table(cell.record));
    write_table(dir, seed_file("energy", cell.strategy, cell.seed), io::energy_table(cell.record.energy));
}

// Cross-seed means per strategy. Runs that never converge count with the
// number of rounds they ran.
inline TableRow summarize_strategy(const Strategy& strategy, const std::vector<CellResult>& cells) {
    TableRow row;
    row.strategy = strategy.name;
    row.clustered = strategy.clustered();
    for (const auto& cell : cells) {
        if (cell.strategy != strategy.name) continue;
        if (!cell.ok) {
            ++row.failed_runs;
            continue;
        }
        ++row.runs;
        if (cell.record.converged) ++row.converged_runs;
        row.clients_per_round += cell.record.clients_per_round();
        row.rounds += static_cast<double>(cell.record.rounds_to_converge);
        row.energy_wh += cell.record.total_energy_wh;
        row.acc_std += cell.record.accuracy_std_window;
        row.final_accuracy += cell.record.rounds.back().accuracy;
    }
    if (row.runs) {
        const auto n = static_cast<double>(row.runs);
        row.clients_per_round /= n;
        row.rounds /= n;
        row.energy_wh /= n;
        row.acc_std /= n;
        row.final_accuracy /= n;
    }
    return row;
}

inline constexpr double match_window = 1.0;

// Pairs every clustered row with the random row nearest in mean
// clients-per-round (within match_window, ties to fewer clients) and reports
// the relative reductions in rounds and energy. Negative values mean the
// clustered strategy was worse.
inline std::vector<Savings> compare_summary(const std::vector<TableRow>& rows) {
    std::vector<Savings> out;
    for (const auto& row : rows) {
        if (!row.clustered || row.runs == 0) continue;
        Savings s;
        s.metric = row.strategy;
        s.clients_per_round = row.clients_per_round;
        const TableRow* best = nullptr;
        for (const auto& base : rows) {
            if (base.clustered || base.runs == 0) continue;
            const double gap = std::abs(base.clients_per_round - row.clients_per_round);
            if (gap > match_window + 1e-9) continue;
            if (!best) {
                best = &base;
                continue;
            }
            const double best_gap = std::abs(best->clients_per_round - row.clients_per_round);
            if (gap < best_gap - 1e-12 ||
                (std::abs(gap - best_gap) <= 1e-12 && base.clients_per_round < best->clients_per_round))
                best = &base;
        }
        if (best) {
            s.baseline = best->strategy;
            s.baseline_clients_per_round = best->clients_per_round;
            s.rounds_reduction_pct = best->rounds > 0.0 ? 100.0 * (best->rounds - row.rounds) / best->rounds : 0.0;
            s.energy_reduction_pct =
                best->energy_wh > 0.0 ? 100.0 * (best->energy_wh - row.energy_wh) / best->energy_wh : 0.0;
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct ClusteringSummary {
    std::string metric;
    std::uint64_t seed = 0;
    std::size_t clusters = 0;
    double silhouette = 0.0;
    bool ok = false;
    std::string error;
};

struct ExperimentResult {
    std::vector<Strategy> strategies;
    std::vector<CellResult> cells;
    std::vector<ClusteringSummary> clusterings;
    std::vector<TableRow> table;
    std::vector<Savings> savings;

    std::size_t failed_cells() const {
        return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.ok; }));
    }
};

inline json to_json(const TableRow& r) {
    return {{"strategy", r.strategy},
            {"mode", r.clustered ? "clustered" : "random"},
            {"clients_per_round", r.clients_per_round},
            {"rounds", r.rounds},
            {"energy_wh", r.energy_wh},
            {"acc_std", r.acc_std},
            {"final_accuracy", r.final_accuracy},
            {"runs", r.runs},
            {"converged_runs", r.converged_runs},
            {"failed_runs", r.failed_runs}};
}

inline json to_json(const Savings& s) {
    return {{"metric", s.metric},
            {"clients_per_round", s.clients_per_round},
            {"baseline", s.baseline ? json(*s.baseline) : json(nullptr)},
            {"baseline_clients_per_round", s.baseline_clients_per_round},
            {"rounds_reduction_pct", s.rounds_reduction_pct},
            {"energy_reduction_pct", s.energy_reduction_pct}};
}

inline json summary_json(const ExperimentConfig& c, const ExperimentResult& r) {
    json cells = json::array(), clusterings = json::array(), table = json::array(), savings = json::array();
    for (const auto& cell : r.cells) {
        json j{{"strategy", cell.strategy}, {"seed", cell.seed}, {"ok", cell.ok}};
        if (cell.ok) {
            j["clients_per_round"] = cell.record.clients_per_round();
            j["rounds"] = cell.record.rounds_to_converge;
            j["converged"] = cell.record.converged;
            j["energy_wh"] = cell.record.total_energy_wh;
            j["acc_std"] = cell.record.accuracy_std_window;
            j["final_accuracy"] = cell.record.rounds.back().accuracy;
        } else {
            j["error"] = cell.error;
        }
        cells.push_back(std::move(j));
    }
    for (const auto& cl : r.clusterings) {
        json j{{"metric", cl.metric}, {"seed", cl.seed}, {"ok", cl.ok}};
        if (cl.ok) {
            j["clusters"] = cl.clusters;
            j["silhouette"] = cl.silhouette;
        } else {
            j["error"] = cl.error;
        }
        clusterings.push_back(std::move(j));
    }
    for (const auto& row : r.table) table.push_back(to_json(row));
    for (const auto& s : r.savings) savings.push_back(to_json(s));
    return {{"config", to_json(c)},    {"table", table},   {"savings", savings},
            {"clusterings", clusterings}, {"cells", cells}, {"failed_cells", r.failed_cells()}};
}

namespace detail {

template <typename F>
void parallel_for(std::size_t count, std::size_t workers, F&& body) {
    workers = std::min(std::max<std::size_t>(workers, 1), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) body(i);
        });
}

}  // namespace detail

// Runs every (strategy, seed) cell and writes all outputs to
// config.output_dir. A failing cell is recorded and the sweep goes on.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
    c.validate();
    const std::filesystem::path dir(c.output_dir);
    std::filesystem::create_directories(dir);
    const auto data = load_data(c.dataset);

    const std::size_t n_seeds = c.seeds.size();
    std::vector<std::optional<SeedContext>> contexts(n_seeds);
    std::vector<std::string> seed_errors(n_seeds);
    detail::parallel_for(n_seeds, c.workers, [&](std::size_t i) {
        try {
            contexts[i] = prepare_seed(c, data, c.seeds[i]);
        } catch (const std::exception& e) {
            seed_errors[i] = e.what();
        }
    });

    ExperimentResult result;
    // clusterings[metric index][seed index]
    std::vector<std::vector<std::optional<Clustering>>> clusterings(
        c.metrics.size(), std::vector<std::optional<Clustering>>(n_seeds));
    result.clusterings.resize(c.metrics.size() * n_seeds);
    detail::parallel_for(c.metrics.size() * n_seeds, c.workers, [&](std::size_t job) {
        const auto m = job / n_seeds, si = job % n_seeds;
        auto& summary = result.clusterings[job];
        summary.metric = std::string(to_string(c.metrics[m]));
        summary.seed = c.seeds[si];
        if (!contexts[si]) {
            summary.error = seed_errors[si];
            return;
        }
        try {
            auto cl = cluster_clients(c, *contexts[si], c.metrics[m]);
            write_cluster_outputs(dir, *contexts[si], cl);
            summary.ok = true;
            summary.clusters = cl.model.clusters;
            summary.silhouette = cl.model.silhouette;
            clusterings[m][si] = std::move(cl);
        } catch (const std::exception& e) {
            summary.error = e.what();
        }
    });
    for (std::size_t si = 0; si < n_seeds; ++si)
        if (contexts[si])
            write_table(dir, "distribution_" + std::to_string(c.seeds[si]) + ".csv",
                        io::label_matrix_table(contexts[si]->distribution));

    for (auto m : c.metrics) result.strategies.push_back(Strategy::for_metric(m));
    std::set<std::size_t> counts(c.random_baselines.begin(), c.random_baselines.end());
    if (c.match_random) {
        for (std::size_t m = 0; m < c.metrics.size(); ++m) {
            double sum = 0.0;
            std::size_t ok = 0;
            for (const auto& cl : clusterings[m])
                if (cl) sum += static_cast<double>(cl->model.clusters), ++ok;
            // Halves round down, toward fewer clients.
            if (ok) counts.insert(static_cast<std::size_t>(std::ceil(sum / static_cast<double>(ok) - 0.5)));
        }
    }
    for (auto n : counts) result.strategies.push_back(Strategy::random_count(n));
    for (auto f : c.random_fractions) result.strategies.push_back(Strategy::random_frac(f));

    const std::size_t n_cells = result.strategies.size() * n_seeds;
    result.cells.resize(n_cells);
    detail::parallel_for(n_cells, c.workers, [&](std::size_t job) {
        const auto st = job / n_seeds, si = job % n_seeds;
        const auto& strategy = result.strategies[st];
        auto& cell = result.cells[job];
        cell.strategy = strategy.name;
        cell.seed = c.seeds[si];
        try {
            if (!contexts[si]) throw error("seed setup failed: " + seed_errors[si]);
            const Clustering* cl = nullptr;
            if (strategy.clustered()) {
                const auto m = static_cast<std::size_t>(
                    std::find(c.metrics.begin(), c.metrics.end(), *strategy.metric) - c.metrics.begin());
                if (!clusterings[m][si]) throw error("clustering failed: " + result.clusterings[m * n_seeds + si].error);
                cl = &*clusterings[m][si];
            }
            cell.record = run_cell(c, data, *contexts[si], strategy, cl);
            cell.ok = true;
            write_cell_outputs(dir, cell);
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
    });

    for (const auto& s : result.strategies) result.table.push_back(summarize_strategy(s, result.cells));
    result.savings = compare_summary(result.table);
    write_table(dir, "table.csv", io::comparison_table(result.table));
    write_table(dir, "savings.csv", io::savings_table(result.savings));
    csv::write_file((dir / "summary.json").string(), summary_json(c, result).dump(2) + "\n");
    return result;
}

}  // namespace fedsim
