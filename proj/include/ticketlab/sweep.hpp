#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ticketlab/harness.hpp"

namespace ticketlab {

struct CellRun {
    RunConfig config;
    /// Run whose final codes serve as the recall/Jaccard reference.
    std::optional<RunConfig> reference;
};

/// One aggregate row: a label plus the runs pooled under it (seeds x embeddings).
struct Cell {
    std::string id;
    std::string label;
    std::vector<CellRun> runs;
};

struct Preset {
    std::string name;
    std::vector<Cell> cells;
};

struct PresetOptions {
    std::size_t seeds = 5;
    std::uint64_t first_seed = 0;
    double tau = 0.1;
    /// Drops probe epochs above this value; negative keeps all.
    int max_probe_epoch = -1;
};

std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
Preset make_preset(const std::string& name, const PresetOptions& options = {});

/// Sample mean and standard error of the mean (n-1 denominator; zero for n < 2).
struct Stat {
    std::size_t n = 0;
    double mean = 0.0;
    double sem = 0.0;
};
Stat summarize(std::span<const double> values);

/// Fixed metric column order used by every aggregate CSV.
const std::vector<std::string>& metric_columns();

/// Metric values of one run. Absent metrics are omitted from the map.
std::map<std::string, double> run_metric_values(const RunRecord& run, const RunRecord* reference);

struct AggregateRow {
    std::string cell;
    std::string label;
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::string, Stat> stats;
    std::size_t runs = 0;
    std::size_t failures = 0;

    const Stat& at(const std::string& metric) const;
};

using RecordMap = std::map<std::string, RunRecord>;

std::vector<AggregateRow> aggregate(const Preset& preset, const RecordMap& records);

void write_aggregate_csv(std::ostream& os, const std::string& preset, const std::vector<AggregateRow>& rows);
/// Header-keyed rows of an aggregate CSV.
std::vector<std::map<std::string, std::string>> read_csv(std::istream& is);

struct SweepOptions {
    /// Records go to `<out_dir>/runs`, aggregates to `<out_dir>/aggregates`. Empty keeps everything in memory.
    std::string out_dir;
    std::size_t workers = 1;
    /// Reuse complete records already on disk.
    bool resume = true;
    bool keep_artifacts = false;
};

struct SweepResult {
    Preset preset;
    RecordMap records;
    std::vector<AggregateRow> rows;
    std::size_t executed = 0;
    std::size_t loaded = 0;
    std::size_t failed = 0;

    const AggregateRow* row(const std::string& label) const;
};

/// Distinct configs of a preset (runs and references), in first-seen order.
std::vector<RunConfig> unique_configs(const Preset& preset);

/// Runs `configs` on a worker pool. Results are independent of the worker count.
RecordMap execute(const std::vector<RunConfig>& configs, const SweepOptions& options, std::size_t* executed = nullptr,
                  std::size_t* loaded = nullptr);

SweepResult sweep(const Preset& preset, const SweepOptions& options);

/// Cross-setting comparison: for each (H, K, keep, epoch) group with epoch <= max_epoch,
/// whether `challenger` has strictly more mean exact codes than each rival.
struct WinCount {
    std::size_t comparisons = 0;
    std::size_t wins = 0;
    std::vector<std::string> lines;
};
WinCount count_code_wins(const SweepResult& result, const std::string& challenger,
                         const std::vector<std::string>& rivals, int max_epoch);

/// Writes the figure/table CSVs for a preset below `<out_dir>/plots` and
/// returns the file paths written.
std::vector<std::string> export_plots(const std::string& preset, const PresetOptions& preset_options,
                                      const SweepOptions& sweep_options);

}  // namespace ticketlab
