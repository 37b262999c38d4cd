#include "fedsim/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <random>

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("fedsim_harness_" + name);
    fs::remove_all(p);
    return p;
}

json small_config(const fs::path& out) {
    return json{{"dataset",
                 {{"kind", "synthetic"},
                  {"seed", 3},
                  {"classes", 5},
                  {"features", 6},
                  {"train_per_class", 40},
                  {"test_per_class", 20},
                  {"spread", 0.8}}},
                {"clients", 8},
                {"beta", 0.1},
                {"metrics", {"mse", "mmd", "wasserstein1"}},
                {"random_baselines", {2, 3}},
                {"hyperparams", {{"local_epochs", 2}, {"accuracy_threshold", 0.8}, {"max_rounds", 15}}},
                {"seeds", {1, 2}},
                {"output_dir", out.string()}};
}

std::map<std::string, std::string> read_all(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = csv::read_file(e.path().string());
    return files;
}

TableRow row(std::string name, bool clustered, double cpr, double rounds, double energy) {
    TableRow r;
    r.strategy = std::move(name);
    r.clustered = clustered;
    r.clients_per_round = cpr;
    r.rounds = rounds;
    r.energy_wh = energy;
    r.runs = 5;
    r.converged_runs = 5;
    return r;
}

}  // namespace

TEST(Csv, DoubleRoundTrip) {
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 10000; ++i) {
        const double x = u(gen) * std::pow(10.0, static_cast<int>(gen() % 40) - 20);
        EXPECT_EQ(csv::parse_double(csv::format_double(x)), x);
    }
    for (double x : {0.0, -0.0, 1.0, 0.1, 1e-300, std::numeric_limits<double>::max(),
                     std::numeric_limits<double>::denorm_min()})
        EXPECT_EQ(csv::parse_double(csv::format_double(x)), x);
    EXPECT_THROW(csv::parse_double("1.5x"), error);
    EXPECT_THROW(csv::parse_size("-3"), error);
}

TEST(Csv, TableRoundTrip) {
    const csv::Table t{{"a", "b"}, {{"1", "x y"}, {"", "3"}}};
    const auto back = csv::parse(csv::to_string(t));
    EXPECT_EQ(back.header, t.header);
    EXPECT_EQ(back.rows, t.rows);
    EXPECT_THROW(csv::to_string(csv::Table{{"a"}, {{"1,2"}}}), error);
    EXPECT_THROW(csv::parse("a,b\n1\n"), error);
    EXPECT_THROW(csv::parse(""), error);
    EXPECT_THROW(t.column("zz"), error);
}

TEST(Outputs, RecordTablesRoundTrip) {
    const auto train = generate_synthetic(4, 5, 30, 1.0, 1), test = generate_synthetic_holdout(4, 5, 10, 1.0, 1);
    const auto shards = partition_dirichlet(train, 6, 0.2, 1);
    HyperParams h;
    h.max_rounds = 4;
    h.accuracy_threshold = 0.99;
    const TimingModel timing{TimingModel::Kind::injected, 0.123, 0.0071};
    const auto rec =
        run_federated({train, test, shards, SelectionPlan::random_count(3), h, 2, PowerModel{{33.3}}, timing});
    EXPECT_EQ(io::rounds_from_table(csv::parse(csv::to_string(io::rounds_table(rec)))), rec.rounds);
    EXPECT_EQ(io::energy_from_table(csv::parse(csv::to_string(io::energy_table(rec.energy)))), rec.energy);

    const auto p = build_distribution_matrix(shards, train);
    const auto d = pairwise_dissimilarity(p, MetricId::jsd);
    const auto m = select_cluster_count(d, 5);
    const auto clusters = io::clusters_from_table(csv::parse(csv::to_string(io::clusters_table(m))));
    ASSERT_EQ(clusters.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(clusters[i].cluster_id, m.assignment[i]);
        EXPECT_EQ(clusters[i].is_medoid, m.is_medoid(i));
    }
    const auto pca = pca_project(p);
    const auto rows = io::pca_from_table(csv::parse(csv::to_string(io::pca_table(pca, m.assignment))));
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(rows[i].pc1, pca.points[i][0]);
        EXPECT_EQ(rows[i].pc2, pca.points[i][1]);
    }

    const std::vector<TableRow> table{row("kl", true, 8.667, 39.333, 471.221), row("random_n10", false, 10, 87.8, 563.378)};
    EXPECT_EQ(io::comparison_from_table(csv::parse(csv::to_string(io::comparison_table(table)))), table);
}

TEST(CompareSummary, ReferenceRowsEuclideanSaving) {
    const std::vector<TableRow> t{row("euclidean", true, 10, 45.8, 329.746), row("random_n10", false, 10, 87.8, 563.378)};
    const auto s = compare_summary(t);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].baseline, "random_n10");
    EXPECT_NEAR(s[0].energy_reduction_pct, 41.47, 0.005);
}

// Reference comparison rows: clustered metrics against the random
// baselines. Matching within one client per round gives savings of 23.93 to
// 41.61 % against random_n10.
TEST(CompareSummary, ReferenceRowsRange) {
    const std::vector<TableRow> t{
        row("wasserstein1", true, 2, 45.8, 155.388), row("jsd", true, 8.667, 39.333, 469.727),
        row("kl", true, 8.667, 39.333, 471.221),     row("euclidean", true, 10, 45.8, 329.746),
        row("chebyshev", true, 10.2, 45.8, 328.94),  row("manhattan", true, 10.4, 45.8, 400.298),
        row("mse", true, 10.4, 45.8, 427.103),       row("mmd", true, 10.4, 45.8, 428.517),
        row("cosine", true, 11, 45.8, 424.304),      row("random_n2", false, 2, 215.2, 204.448),
        row("random_n5", false, 5, 113.4, 377.386),  row("random_n10", false, 10, 87.8, 563.378),
        row("random_n15", false, 15, 63.8, 621.135), row("random_n20", false, 20, 57.8, 840.196),
        row("random_n25", false, 25, 49.4, 726.045)};
    const auto s = compare_summary(t);
    ASSERT_EQ(s.size(), 9u);
    double lo = 1e9, hi = -1e9;
    for (const auto& x : s) {
        if (x.metric == "jsd" || x.metric == "kl") {
            EXPECT_FALSE(x.baseline.has_value());
            continue;
        }
        ASSERT_TRUE(x.baseline.has_value()) << x.metric;
        if (x.metric == "wasserstein1") {
            EXPECT_EQ(*x.baseline, "random_n2");
            EXPECT_NEAR(x.rounds_reduction_pct, 100 * (215.2 - 45.8) / 215.2, 1e-9);
            EXPECT_NEAR(x.energy_reduction_pct, 100 * (204.448 - 155.388) / 204.448, 1e-9);
            continue;
        }
        EXPECT_EQ(*x.baseline, "random_n10");
        lo = std::min(lo, x.energy_reduction_pct);
        hi = std::max(hi, x.energy_reduction_pct);
    }
    EXPECT_NEAR(lo, 23.93, 0.01);
    EXPECT_NEAR(hi, 41.61, 0.01);
}

TEST(CompareSummary, SignsAndMatching) {
    auto s = compare_summary({row("cosine", true, 5, 10, 50), row("random_n5", false, 5, 10, 50)});
    EXPECT_EQ(s[0].energy_reduction_pct, 0.0);
    EXPECT_EQ(s[0].rounds_reduction_pct, 0.0);
    s = compare_summary({row("cosine", true, 5, 20, 80), row("random_n5", false, 5, 10, 50)});
    EXPECT_EQ(s[0].energy_reduction_pct, -60.0);
    EXPECT_EQ(s[0].rounds_reduction_pct, -100.0);
    // Equidistant baselines: the smaller one wins.
    s = compare_summary({row("cosine", true, 5.5, 10, 50), row("random_n6", false, 6, 10, 50),
                         row("random_n5", false, 5, 10, 50)});
    EXPECT_EQ(s[0].baseline, "random_n5");
    s = compare_summary({row("cosine", true, 7.2, 10, 50), row("random_n5", false, 5, 10, 50)});
    EXPECT_FALSE(s[0].baseline.has_value());
    EXPECT_TRUE(compare_summary({row("random_n5", false, 5, 10, 50)}).empty());
}

TEST(Config, ParsesAndEchoes) {
    const auto c = config_from_json(small_config("x"));
    EXPECT_EQ(c.clients, 8u);
    EXPECT_EQ(c.metrics, (std::vector<MetricId>{MetricId::mse, MetricId::mmd, MetricId::wasserstein1}));
    EXPECT_EQ(c.effective_c_max(), 7u);
    EXPECT_EQ(c.hyper.local_epochs, 2u);
    EXPECT_EQ(c.hyper.batch_size, 32u);
    const auto again = config_from_json(to_json(c));
    EXPECT_EQ(to_json(again), to_json(c));
    EXPECT_EQ(again.dataset, c.dataset);
    EXPECT_EQ(again.hyper, c.hyper);
}

TEST(Config, AllMetrics) {
    auto j = small_config("x");
    j["metrics"] = {"all"};
    EXPECT_EQ(config_from_json(j).metrics.size(), 9u);
}

TEST(Config, Rejections) {
    auto bad = [](auto edit) {
        auto j = small_config("x");
        edit(j);
        return j;
    };
    EXPECT_THROW(config_from_json(bad([](json& j) { j["seeds"] = json::array(); })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["clients"] = 3; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) {
                     j["metrics"] = json::array();
                     j["random_baselines"] = json::array();
                 })),
                 config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["metrics"] = {"hamming"}; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["metrics"] = {"random"}; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["typo"] = 1; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["beta"] = -1; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["beta"] = "high"; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["random_baselines"] = {0}; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["c_max"] = 8; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["power"] = {{"watts", {1, 2}}}; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["dataset"]["kind"] = "csv"; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["dataset"] = {{"kind", "idx"}}; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["hyperparams"]["arch"] = "rnn"; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["timing"] = {{"kind", "magic"}}; })), config_error);
    EXPECT_THROW(config_from_json(bad([](json& j) { j["seeds"] = {1, 1}; })), config_error);
}

TEST(Experiment, ProportionalMetricsAgree) {
    const auto dir = scratch("prop");
    const auto result = run_experiment(config_from_json(small_config(dir)));
    EXPECT_EQ(result.failed_cells(), 0u);
    const auto& t = result.table;
    ASSERT_EQ(t.size(), 5u);
    EXPECT_EQ(t[0].strategy, "mse");
    EXPECT_EQ(t[1].strategy, "mmd");
    EXPECT_EQ(t[0].clients_per_round, t[1].clients_per_round);
    EXPECT_EQ(t[0].rounds, t[1].rounds);
    for (std::uint64_t seed : {1, 2}) {
        EXPECT_EQ(csv::read_file((dir / seed_file("clusters", "mse", seed)).string()),
                  csv::read_file((dir / seed_file("clusters", "mmd", seed)).string()));
        const auto a = io::rounds_from_table(csv::parse(csv::read_file((dir / seed_file("rounds", "mse", seed)).string())));
        const auto b = io::rounds_from_table(csv::parse(csv::read_file((dir / seed_file("rounds", "mmd", seed)).string())));
        EXPECT_EQ(a, b);
    }
    fs::remove_all(dir);
}

TEST(Experiment, OutputsAndDeterminism) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    auto ja = small_config(a), jb = small_config(b);
    jb["workers"] = 3;
    jb["train_workers"] = 2;
    run_experiment(config_from_json(ja));
    run_experiment(config_from_json(jb));
    auto fa = read_all(a), fb = read_all(b);
    for (const auto& name : {"table.csv", "savings.csv", "summary.json", "rounds_mse_1.csv", "energy_random_n2_2.csv",
                             "pca_wasserstein1_1.csv", "clusters_wasserstein1_2.csv", "distribution_1.csv",
                             "dissimilarity_mmd_2.csv"})
        EXPECT_TRUE(fa.count(name)) << name;
    ASSERT_EQ(fa.size(), fb.size());
    for (auto& [name, text] : fa) {
        if (name == "summary.json") continue;
        EXPECT_EQ(text, fb[name]) << name;
    }
    // The summaries differ only in the echoed output dir and worker counts.
    auto sa = json::parse(fa["summary.json"]), sb = json::parse(fb["summary.json"]);
    sa.erase("config");
    sb.erase("config");
    EXPECT_EQ(sa, sb);

    run_experiment(config_from_json(ja));
    EXPECT_EQ(read_all(a), fa);

    const auto table = io::comparison_from_table(csv::parse(fa["table.csv"]));
    EXPECT_EQ(table.size(), 5u);
    EXPECT_EQ(table.back().strategy, "random_n3");
    EXPECT_EQ(table.back().clients_per_round, 3.0);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Experiment, FailedCellIsRecordedAndRunContinues) {
    const auto dir = scratch("fail");
    auto j = small_config(dir);
    // More clients per round than clients exist cannot fail validation-free
    // configs, so poison the training instead: a huge learning rate overflows.
    j["hyperparams"]["learning_rate"] = 1e300;
    j["metrics"] = {"euclidean"};
    j["random_baselines"] = {2};
    const auto result = run_experiment(config_from_json(j));
    EXPECT_EQ(result.cells.size(), 4u);
    EXPECT_EQ(result.failed_cells(), 4u);
    for (const auto& cell : result.cells) EXPECT_NE(cell.error.find("non-finite"), std::string::npos) << cell.error;
    for (const auto& row : result.table) {
        EXPECT_EQ(row.failed_runs, 2u);
        EXPECT_EQ(row.runs, 0u);
    }
    const auto summary = json::parse(csv::read_file((dir / "summary.json").string()));
    EXPECT_EQ(summary["failed_cells"], 4);
    fs::remove_all(dir);
}

TEST(Experiment, MatchedRandomBaselines) {
    const auto dir = scratch("match");
    auto j = small_config(dir);
    j["random_baselines"] = json::array();
    j["match_random"] = true;
    const auto result = run_experiment(config_from_json(j));
    std::set<std::size_t> expected;
    for (std::size_t m = 0; m < 3; ++m) {
        double sum = 0;
        for (std::size_t s = 0; s < 2; ++s) sum += static_cast<double>(result.clusterings[m * 2 + s].clusters);
        expected.insert(static_cast<std::size_t>(std::ceil(sum / 2 - 0.5)));
    }
    std::set<std::size_t> got;
    for (const auto& s : result.strategies)
        if (s.random_n) got.insert(*s.random_n);
    EXPECT_EQ(got, expected);
    for (const auto& s : result.savings) EXPECT_TRUE(s.baseline.has_value()) << s.metric;
    fs::remove_all(dir);
}

TEST(Experiment, RandomFractionBaseline) {
    const auto dir = scratch("frac");
    auto j = small_config(dir);
    j["metrics"] = json::array();
    j["random_baselines"] = json::array();
    j["random_fractions"] = {0.25};
    const auto result = run_experiment(config_from_json(j));
    ASSERT_EQ(result.table.size(), 1u);
    EXPECT_EQ(result.table[0].strategy, "random_f0.25");
    EXPECT_EQ(result.table[0].clients_per_round, 2.0);
    fs::remove_all(dir);
}

TEST(Experiment, IdxDataset) {
    const auto dir = scratch("idx");
    fs::create_directories(dir);
    auto write = [&](const std::string& name, std::uint32_t magic, std::vector<std::uint32_t> dims,
                     const std::vector<std::uint8_t>& payload) {
        std::vector<std::uint8_t> bytes;
        auto be = [&](std::uint32_t v) {
            for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<std::uint8_t>(v >> s));
        };
        be(magic);
        for (auto d : dims) be(d);
        bytes.insert(bytes.end(), payload.begin(), payload.end());
        csv::write_file((dir / name).string(), std::string(bytes.begin(), bytes.end()));
    };
    std::mt19937_64 gen(1);
    auto make = [&](const std::string& stem, std::uint32_t n) {
        std::vector<std::uint8_t> px, lab;
        for (std::uint32_t i = 0; i < n; ++i) {
            const auto y = static_cast<std::uint8_t>(i % 4);
            lab.push_back(y);
            for (int f = 0; f < 16; ++f) px.push_back(static_cast<std::uint8_t>((f % 4 == y ? 200 : 20) + gen() % 30));
        }
        write(stem + "_images", 2051, {n, 4, 4}, px);
        write(stem + "_labels", 2049, {n}, lab);
    };
    make("train", 200);
    make("test", 40);
    json j = small_config(dir / "out");
    j["dataset"] = {{"kind", "idx"},
                    {"train_images", (dir / "train_images").string()},
                    {"train_labels", (dir / "train_labels").string()},
                    {"test_images", (dir / "test_images").string()},
                    {"test_labels", (dir / "test_labels").string()},
                    {"train_subset", 160}};
    j["metrics"] = {"euclidean"};
    j["random_baselines"] = {2};
    const auto result = run_experiment(config_from_json(j));
    EXPECT_EQ(result.failed_cells(), 0u);
    EXPECT_GT(result.table[0].final_accuracy, 0.5);
    fs::remove_all(dir);
}
