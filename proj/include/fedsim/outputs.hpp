#pragma once

#include "fedsim/clustering.hpp"
#include "fedsim/csv.hpp"
#include "fedsim/distmatrix.hpp"
#include "fedsim/energy.hpp"
#include "fedsim/fedcore.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace fedsim {

// One Table-I-shaped row: cross-seed means for a strategy.
struct TableRow {
    std::string strategy;
    bool clustered = false;
    double clients_per_round = 0.0;
    double rounds = 0.0;
    double energy_wh = 0.0;
    // Mean over runs of the accuracy std inside the convergence window.
    double acc_std = 0.0;
    double final_accuracy = 0.0;
    std::size_t runs = 0;
    std::size_t converged_runs = 0;
    std::size_t failed_runs = 0;

    bool operator==(const TableRow&) const = default;
};

struct Savings {
    std::string metric;
    double clients_per_round = 0.0;
    // Empty when no random baseline lies within one client per round.
    std::optional<std::string> baseline;
    double baseline_clients_per_round = 0.0;
    double rounds_reduction_pct = 0.0;
    double energy_reduction_pct = 0.0;

    bool operator==(const Savings&) const = default;
};

namespace io {

using csv::format_double;
using csv::parse_double;
using csv::parse_size;

inline std::string fmt_size(std::size_t x) { return std::to_string(x); }

inline csv::Table rounds_table(const RunRecord& rec) {
    csv::Table t{{"round", "selected", "samples", "train_seconds", "accuracy"}, {}};
    for (const auto& r : rec.rounds)
        t.rows.push_back({fmt_size(r.round), csv::join(r.selected, fmt_size), csv::join(r.samples, fmt_size),
                          csv::join(r.train_seconds, format_double), format_double(r.accuracy)});
    return t;
}

inline std::vector<RoundEntry> rounds_from_table(const csv::Table& t) {
    const auto c_round = t.column("round"), c_sel = t.column("selected"), c_n = t.column("samples"),
               c_sec = t.column("train_seconds"), c_acc = t.column("accuracy");
    std::vector<RoundEntry> out;
    for (const auto& row : t.rows)
        out.push_back({parse_size(row[c_round]), csv::parse_size_list(row[c_sel]), csv::parse_size_list(row[c_n]),
                       csv::parse_double_list(row[c_sec]), parse_double(row[c_acc])});
    return out;
}

inline csv::Table energy_table(const std::vector<EnergyEntry>& entries) {
    csv::Table t{{"round", "client_id", "seconds", "wh"}, {}};
    for (const auto& e : entries)
        t.rows.push_back({fmt_size(e.round), fmt_size(e.client_id), format_double(e.seconds), format_double(e.wh)});
    return t;
}

inline std::vector<EnergyEntry> energy_from_table(const csv::Table& t) {
    const auto c_round = t.column("round"), c_id = t.column("client_id"), c_s = t.column("seconds"),
               c_wh = t.column("wh");
    std::vector<EnergyEntry> out;
    for (const auto& row : t.rows)
        out.push_back({parse_size(row[c_round]), parse_size(row[c_id]), parse_double(row[c_s]), parse_double(row[c_wh])});
    return out;
}

struct ClusterRow {
    std::size_t client_id = 0;
    std::size_t cluster_id = 0;
    bool is_medoid = false;
    bool operator==(const ClusterRow&) const = default;
};

inline csv::Table clusters_table(const ClusterModel& m) {
    csv::Table t{{"client_id", "cluster_id", "is_medoid"}, {}};
    for (std::size_t i = 0; i < m.assignment.size(); ++i)
        t.rows.push_back({fmt_size(i), fmt_size(m.assignment[i]), m.is_medoid(i) ? "1" : "0"});
    return t;
}

inline std::vector<ClusterRow> clusters_from_table(const csv::Table& t) {
    const auto c_id = t.column("client_id"), c_cl = t.column("cluster_id"), c_med = t.column("is_medoid");
    std::vector<ClusterRow> out;
    for (const auto& row : t.rows) out.push_back({parse_size(row[c_id]), parse_size(row[c_cl]), row[c_med] == "1"});
    return out;
}

struct PcaRow {
    std::size_t client_id = 0;
    double pc1 = 0.0;
    double pc2 = 0.0;
    std::size_t cluster_id = 0;
    bool operator==(const PcaRow&) const = default;
};

inline csv::Table pca_table(const PcaProjection& pca, const std::vector<std::size_t>& assignment) {
    csv::Table t{{"client_id", "pc1", "pc2", "cluster_id"}, {}};
    for (std::size_t i = 0; i < pca.points.size(); ++i)
        t.rows.push_back({fmt_size(i), format_double(pca.points[i][0]), format_double(pca.points[i][1]),
                          fmt_size(i < assignment.size() ? assignment[i] : 0)});
    return t;
}

inline std::vector<PcaRow> pca_from_table(const csv::Table& t) {
    const auto c_id = t.column("client_id"), c1 = t.column("pc1"), c2 = t.column("pc2"),
               c_cl = t.column("cluster_id");
    std::vector<PcaRow> out;
    for (const auto& row : t.rows)
        out.push_back({parse_size(row[c_id]), parse_double(row[c1]), parse_double(row[c2]), parse_size(row[c_cl])});
    return out;
}

inline csv::Table label_matrix_table(const LabelMatrix& p) {
    csv::Table t{{"client_id"}, {}};
    for (std::size_t k = 0; k < p.cols(); ++k) t.header.push_back("p" + std::to_string(k));
    for (std::size_t i = 0; i < p.rows(); ++i) {
        std::vector<std::string> row{fmt_size(i)};
        for (std::size_t k = 0; k < p.cols(); ++k) row.push_back(format_double(p(i, k)));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline csv::Table dissimilarity_table(const DissimilarityMatrix& d) {
    csv::Table t{{"client_id"}, {}};
    for (std::size_t j = 0; j < d.size(); ++j) t.header.push_back("d" + std::to_string(j));
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::vector<std::string> row{fmt_size(i)};
        for (std::size_t j = 0; j < d.size(); ++j) row.push_back(format_double(d(i, j)));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline csv::Table comparison_table(const std::vector<TableRow>& rows) {
    csv::Table t{{"strategy", "mode", "clients_per_round", "rounds", "energy_wh", "acc_std", "final_accuracy",
                  "runs", "converged_runs", "failed_runs"},
                 {}};
    for (const auto& r : rows)
        t.rows.push_back({r.strategy, r.clustered ? "clustered" : "random", format_double(r.clients_per_round),
                          format_double(r.rounds), format_double(r.energy_wh), format_double(r.acc_std),
                          format_double(r.final_accuracy), fmt_size(r.runs), fmt_size(r.converged_runs),
                          fmt_size(r.failed_runs)});
    return t;
}

inline std::vector<TableRow> comparison_from_table(const csv::Table& t) {
    const auto c_s = t.column("strategy"), c_m = t.column("mode"), c_cpr = t.column("clients_per_round"),
               c_r = t.column("rounds"), c_e = t.column("energy_wh"), c_std = t.column("acc_std"),
               c_fa = t.column("final_accuracy"), c_runs = t.column("runs"), c_conv = t.column("converged_runs"),
               c_fail = t.column("failed_runs");
    std::vector<TableRow> out;
    for (const auto& row : t.rows) {
        if (row[c_m] != "clustered" && row[c_m] != "random") throw error("unknown strategy mode '" + row[c_m] + "'");
        out.push_back({row[c_s], row[c_m] == "clustered", parse_double(row[c_cpr]), parse_double(row[c_r]),
                       parse_double(row[c_e]), parse_double(row[c_std]), parse_double(row[c_fa]),
                       parse_size(row[c_runs]), parse_size(row[c_conv]), parse_size(row[c_fail])});
    }
    return out;
}

inline csv::Table savings_table(const std::vector<Savings>& rows) {
    csv::Table t{{"metric", "clients_per_round", "baseline", "baseline_clients_per_round", "rounds_reduction_pct",
                  "energy_reduction_pct"},
                 {}};
    for (const auto& s : rows)
        t.rows.push_back({s.metric, format_double(s.clients_per_round), s.baseline.value_or("unmatched"),
                          format_double(s.baseline_clients_per_round), format_double(s.rounds_reduction_pct),
                          format_double(s.energy_reduction_pct)});
    return t;
}

}  // namespace io
}  // namespace fedsim
