// fedsim: clustered client selection experiments from the command line.
#include "fedsim/harness.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace fedsim;

struct Common {
    std::string config;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> metrics;
    std::string out;
};

ExperimentConfig load(const Common& o) {
    auto c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
    if (!o.seeds.empty()) c.seeds = o.seeds;
    if (!o.out.empty()) c.output_dir = o.out;
    if (!o.metrics.empty()) {
        c.metrics.clear();
        for (const auto& n : o.metrics) {
            if (n == "all") {
                c.metrics.assign(all_metrics.begin(), all_metrics.end());
                continue;
            }
            const auto m = parse_metric(n);
            if (!m || *m == MetricId::random) throw config_error("unknown metric '" + n + "'");
            c.metrics.push_back(*m);
        }
    }
    if (c.seeds.empty()) c.seeds = {1};
    return c;
}

void print_table(const std::vector<TableRow>& rows) {
    std::printf("%-16s %9s %9s %12s %10s %9s %s\n", "strategy", "clients", "rounds", "energy_wh", "acc_std", "final_acc",
                "converged");
    for (const auto& r : rows)
        std::printf("%-16s %9.3f %9.2f %12.4f %10.6f %9.4f %zu/%zu%s\n", r.strategy.c_str(), r.clients_per_round,
                    r.rounds, r.energy_wh, r.acc_std, r.final_accuracy, r.converged_runs, r.runs,
                    r.failed_runs ? (" (" + std::to_string(r.failed_runs) + " failed)").c_str() : "");
}

void print_savings(const std::vector<Savings>& rows) {
    if (rows.empty()) return;
    std::printf("\n%-16s %9s %-16s %12s %12s\n", "metric", "clients", "baseline", "rounds_%", "energy_%");
    for (const auto& s : rows) {
        if (s.baseline)
            std::printf("%-16s %9.3f %-16s %12.2f %12.2f\n", s.metric.c_str(), s.clients_per_round, s.baseline->c_str(),
                        s.rounds_reduction_pct, s.energy_reduction_pct);
        else
            std::printf("%-16s %9.3f %-16s\n", s.metric.c_str(), s.clients_per_round, "unmatched");
    }
}

int cmd_cluster(const Common& o) {
    auto c = load(o);
    if (c.metrics.empty()) c.metrics.assign(all_metrics.begin(), all_metrics.end());
    const std::filesystem::path dir(c.output_dir);
    std::filesystem::create_directories(dir);
    const auto data = load_data(c.dataset);
    for (auto seed : c.seeds) {
        const auto ctx = prepare_seed(c, data, seed);
        write_table(dir, "distribution_" + std::to_string(seed) + ".csv", io::label_matrix_table(ctx.distribution));
        for (auto m : c.metrics) {
            const auto cl = cluster_clients(c, ctx, m);
            write_cluster_outputs(dir, ctx, cl);
            std::printf("seed %llu  %-13s clusters=%zu silhouette=%.6f\n", static_cast<unsigned long long>(seed),
                        std::string(to_string(m)).c_str(), cl.model.clusters, cl.model.silhouette);
        }
    }
    return 0;
}

int cmd_train(const Common& o, std::size_t clients) {
    auto c = load(o);
    if ((clients > 0) == (o.metrics.size() == 1))
        throw config_error("train needs exactly one of --metric <name> or --clients <n>");
    const auto strategy = clients > 0 ? Strategy::random_count(clients) : Strategy::for_metric(c.metrics.front());
    const std::filesystem::path dir(c.output_dir);
    std::filesystem::create_directories(dir);
    const auto data = load_data(c.dataset);
    std::vector<CellResult> cells;
    for (auto seed : c.seeds) {
        CellResult cell{strategy.name, seed, false, {}, {}};
        try {
            const auto ctx = prepare_seed(c, data, seed);
            std::optional<Clustering> cl;
            if (strategy.clustered()) {
                cl = cluster_clients(c, ctx, *strategy.metric);
                write_cluster_outputs(dir, ctx, *cl);
            }
            cell.record = run_cell(c, data, ctx, strategy, cl ? &*cl : nullptr);
            cell.ok = true;
            write_cell_outputs(dir, cell);
            std::printf("seed %llu  %s rounds=%zu%s energy_wh=%.4f acc=%.4f\n",
                        static_cast<unsigned long long>(seed), strategy.name.c_str(), cell.record.rounds_to_converge,
                        cell.record.converged ? "" : " (not converged)", cell.record.total_energy_wh,
                        cell.record.rounds.back().accuracy);
        } catch (const std::exception& e) {
            cell.error = e.what();
            std::fprintf(stderr, "seed %llu  %s failed: %s\n", static_cast<unsigned long long>(seed),
                         strategy.name.c_str(), e.what());
        }
        cells.push_back(std::move(cell));
    }
    std::printf("\n");
    print_table({summarize_strategy(strategy, cells)});
    return std::all_of(cells.begin(), cells.end(), [](const auto& x) { return x.ok; }) ? 0 : 1;
}

int cmd_experiment(const Common& o, std::size_t workers) {
    auto c = load(o);
    if (workers) c.workers = workers;
    const auto result = run_experiment(c);
    print_table(result.table);
    print_savings(result.savings);
    for (const auto& cell : result.cells)
        if (!cell.ok)
            std::fprintf(stderr, "cell %s seed %llu failed: %s\n", cell.strategy.c_str(),
                         static_cast<unsigned long long>(cell.seed), cell.error.c_str());
    return result.failed_cells() ? 1 : 0;
}

int cmd_summarize(const std::string& dir) {
    const std::filesystem::path d(dir);
    const auto rows = io::comparison_from_table(csv::parse(csv::read_file((d / "table.csv").string())));
    const auto savings = compare_summary(rows);
    write_table(d, "savings.csv", io::savings_table(savings));
    print_table(rows);
    print_savings(savings);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning simulator with clustered client selection"};
    app.require_subcommand(1);

    Common o;
    std::size_t clients = 0, workers = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seeds, "Run seed (repeatable); overrides the config");
        sub->add_option("--out", o.out, "Output directory; overrides the config");
    };

    auto* cluster = app.add_subcommand("cluster", "Write label distributions, dissimilarities, clusters and PCA");
    add_common(cluster);
    cluster->add_option("--metric", o.metrics, "Metric name or 'all' (repeatable)");

    auto* train = app.add_subcommand("train", "Run one strategy");
    add_common(train);
    train->add_option("--metric", o.metrics, "Clustered selection with this metric");
    train->add_option("--clients", clients, "Random selection of n clients per round");

    auto* experiment = app.add_subcommand("experiment", "Full clustered vs random sweep");
    add_common(experiment);
    experiment->add_option("--metric", o.metrics, "Restrict to these metrics (repeatable)");
    experiment->add_option("--workers", workers, "Concurrent cells; overrides the config");

    std::string summary_dir = "out";
    auto* summarize = app.add_subcommand("summarize", "Recompute savings from an experiment's table.csv");
    summarize->add_option("--out", summary_dir, "Experiment output directory");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*cluster) return cmd_cluster(o);
        if (*train) return cmd_train(o, clients);
        if (*experiment) return cmd_experiment(o, workers);
        if (*summarize) return cmd_summarize(summary_dir);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
