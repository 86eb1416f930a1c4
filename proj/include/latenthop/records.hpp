#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace latenthop {

/// Which entity is probed from which anchor token.
enum class Probe { E2AtT1, E2AtT2, E3AtT2 };
enum class Anchor { T1, T2 };

std::string_view to_string(Probe probe);
std::string_view to_string(Anchor anchor);
Probe parse_probe(std::string_view text);
Anchor parse_anchor(std::string_view text);

struct PatchscopeRecord {
    std::string query;
    std::string subset;
    Probe probe = Probe::E2AtT1;
    int source_layer = 0;
    int target_layer = 0;
    bool matched = false;
    std::vector<std::string> generations;
};

/// First layer whose sublayer update at t2 projects the predicted token to top-1.
struct PromotionRecord {
    std::string query;
    std::string subset;
    int answer_token = 0;
    std::optional<int> attention;
    std::optional<int> mlp;
};

/// First layer whose sublayer update at t2 projects e2's first token to top-1.
struct ProjectionRecord {
    std::string query;
    std::string subset;
    int e2_token = 0;
    std::optional<int> attention;
    std::optional<int> mlp;
};

struct KnockoutRecord {
    std::string query;
    std::string subset;
    int window_first = 0;
    int window_last = 0;
    bool critical = false;
    std::string generation;
};

struct BackpatchRecord {
    std::string query;
    std::string subset;
    Anchor anchor = Anchor::T1;
    int source_layer = 0;
    int target_layer = 0;
    bool success = false;
    std::string generation;
};

/// Everything an experiment run emits. Reports are computed from this alone.
struct RunRecords {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<PatchscopeRecord> patchscope;
    std::vector<PromotionRecord> promotion;
    std::vector<ProjectionRecord> projection;
    std::vector<KnockoutRecord> knockout;
    std::vector<BackpatchRecord> backpatch;

    void append(RunRecords&& other);
};

/// Files written by write_records, relative to the records directory.
const std::vector<std::string>& record_files();

void write_records(const std::filesystem::path& dir, const RunRecords& records);
/// Throws FormatError listing the expected files when any is missing.
RunRecords read_records(const std::filesystem::path& dir);

}  // namespace latenthop
