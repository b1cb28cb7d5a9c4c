#pragma once

#include <string>
#include <vector>

#include "vattn/metrics.hpp"
#include "vattn/trainer.hpp"

namespace vattn {

// RunReport <-> JSON. The serialisation is deterministic (sorted keys,
// 2-space indent); the "timestamp" key is the single line that may differ
// between otherwise identical runs.
std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);

// Writes report.json plus the human-readable CSVs (loss_trace.csv,
// metrics.csv) into a run directory.
void write_report_files(const std::string& dir, const RunReport& report);

// Combined two-stage report (stage1/stage2 + contingency + cluster sizes).
std::string dkpnet_report_to_json(const DkpnetResult& result);
void write_dkpnet_report_files(const std::string& dir, const DkpnetResult& result);

// One (mode, domain) aggregation cell across seeds.
struct AggregateCell {
    std::string mode;
    std::string domain;
    std::vector<double> mae;
    std::vector<double> mse;
    double mean_mae = 0.0, std_mae = 0.0;
    double mean_mse = 0.0, std_mse = 0.0;
};

// Loads report.json files from run directories and aggregates per
// (mode, domain). dkpnet reports contribute their stage-1 run as a "va" row
// and their stage-2 run as an "inva" row.
std::vector<AggregateCell> aggregate_runs(const std::vector<std::string>& run_dirs);

// summary.csv (mode,domain,n,mean_mae,std_mae,mean_mse,std_mse) and
// comparison.csv (modes x domains, "mean+-std" MAE cells).
void write_aggregate_csv(const std::string& dir, const std::vector<AggregateCell>& cells);

std::string render_comparison_table(const std::vector<AggregateCell>& cells);

} // namespace vattn
