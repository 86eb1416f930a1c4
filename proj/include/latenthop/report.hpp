#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latenthop/records.hpp"

namespace latenthop {

/// Success counts over a source x target layer grid plus the first successful
/// source layer of each query.
struct GridResult {
    int rows = 0;  // source layers
    int cols = 0;  // target layers
    std::vector<int> successes;
    std::vector<int> totals;
    std::map<std::string, int> first_success;

    int success_at(int source, int target) const { return successes[static_cast<size_t>(source * cols + target)]; }
    int total_at(int source, int target) const { return totals[static_cast<size_t>(source * cols + target)]; }
    int success_sum() const;
    /// Percent of all successful cells, or of the cell's attempts when per_attempt.
    double percent(int source, int target, bool per_attempt) const;
};

GridResult patchscope_grid(const RunRecords& records, Probe probe, const std::string& subset);
GridResult backpatch_grid(const RunRecords& records, Anchor anchor, const std::string& subset);

/// Share of queries where a measurement fired and the mean first layer over those.
struct Measurement {
    int cases = 0;
    int hits = 0;
    std::optional<double> mean_layer;

    double percent() const { return cases == 0 ? 0.0 : 100.0 * hits / cases; }
    nlohmann::json to_json() const;
};

Measurement measure(const std::vector<std::optional<int>>& first_layers);

struct StageRecord {
    std::string query;
    std::string subset;
    std::optional<int> e2_t1;
    std::optional<int> propagation;
    std::optional<int> e2_t2;
    std::optional<int> e3_t2;
    std::optional<int> promotion;

    nlohmann::json to_json() const;
};

inline const std::vector<std::string> kStageNames{"e2_t1", "propagation", "e2_t2", "e3_t2", "promotion"};

std::vector<StageRecord> compute_stage_records(const RunRecords& records);

struct Quartiles {
    int n = 0;
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Linear interpolation between order statistics.
Quartiles quartiles(std::vector<int> values);

/// Queries of a subset: the run's subset list, else those seen in records.
std::vector<std::string> subset_queries(const RunRecords& records, const std::string& subset);

/// Structured summary: per-subset measurements mirroring the result tables,
/// stage quartiles and the stage-ordering pass rate.
nlohmann::json summarize(const RunRecords& records);

struct RenderOptions {
    bool per_attempt = false;
    bool images = true;
};

struct RenderOutcome {
    std::vector<std::string> files;
    std::vector<std::string> notices;
};

/// Writes summary.json, stages.jsonl, CSV matrices, tables.md and PNG figures.
/// A pure function of `records`.
RenderOutcome render_report(const RunRecords& records, const std::filesystem::path& out_dir,
                            const RenderOptions& options = {});

}  // namespace latenthop
