#include "latenthop/records.hpp"

#include <fstream>

#include "latenthop/error.hpp"

namespace latenthop {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Probe probe) {
    switch (probe) {
        case Probe::E2AtT1: return "e2_t1";
        case Probe::E2AtT2: return "e2_t2";
        case Probe::E3AtT2: return "e3_t2";
    }
    return "?";
}

std::string_view to_string(Anchor anchor) { return anchor == Anchor::T1 ? "t1" : "t2"; }

Probe parse_probe(std::string_view text) {
    for (Probe p : {Probe::E2AtT1, Probe::E2AtT2, Probe::E3AtT2}) {
        if (to_string(p) == text) return p;
    }
    throw FormatError("unknown probe '" + std::string(text) + "'");
}

Anchor parse_anchor(std::string_view text) {
    if (text == "t1") return Anchor::T1;
    if (text == "t2") return Anchor::T2;
    throw FormatError("unknown anchor '" + std::string(text) + "'");
}

void RunRecords::append(RunRecords&& other) {
    auto move_all = [](auto& dst, auto& src) {
        dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
    };
    move_all(patchscope, other.patchscope);
    move_all(promotion, other.promotion);
    move_all(projection, other.projection);
    move_all(knockout, other.knockout);
    move_all(backpatch, other.backpatch);
}

namespace {

json opt(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<int> opt_int(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<int>();
}

json to_json(const PatchscopeRecord& r) {
    return {{"query", r.query},         {"subset", r.subset},   {"probe", to_string(r.probe)},
            {"source_layer", r.source_layer}, {"target_layer", r.target_layer}, {"matched", r.matched},
            {"generations", r.generations}};
}

json to_json(const PromotionRecord& r) {
    return {{"query", r.query},         {"subset", r.subset}, {"answer_token", r.answer_token},
            {"attention", opt(r.attention)}, {"mlp", opt(r.mlp)}};
}

json to_json(const ProjectionRecord& r) {
    return {{"query", r.query},         {"subset", r.subset}, {"e2_token", r.e2_token},
            {"attention", opt(r.attention)}, {"mlp", opt(r.mlp)}};
}

json to_json(const KnockoutRecord& r) {
    return {{"query", r.query},           {"subset", r.subset},           {"window_first", r.window_first},
            {"window_last", r.window_last}, {"critical", r.critical}, {"generation", r.generation}};
}

json to_json(const BackpatchRecord& r) {
    return {{"query", r.query},
            {"subset", r.subset},
            {"anchor", to_string(r.anchor)},
            {"source_layer", r.source_layer},
            {"target_layer", r.target_layer},
            {"success", r.success},
            {"generation", r.generation}};
}

void from_json(const json& j, PatchscopeRecord& r) {
    r.query = j.at("query");
    r.subset = j.at("subset");
    r.probe = parse_probe(j.at("probe").get<std::string>());
    r.source_layer = j.at("source_layer");
    r.target_layer = j.at("target_layer");
    r.matched = j.at("matched");
    r.generations = j.at("generations").get<std::vector<std::string>>();
}

void from_json(const json& j, PromotionRecord& r) {
    r.query = j.at("query");
    r.subset = j.at("subset");
    r.answer_token = j.at("answer_token");
    r.attention = opt_int(j.at("attention"));
    r.mlp = opt_int(j.at("mlp"));
}

void from_json(const json& j, ProjectionRecord& r) {
    r.query = j.at("query");
    r.subset = j.at("subset");
    r.e2_token = j.at("e2_token");
    r.attention = opt_int(j.at("attention"));
    r.mlp = opt_int(j.at("mlp"));
}

void from_json(const json& j, KnockoutRecord& r) {
    r.query = j.at("query");
    r.subset = j.at("subset");
    r.window_first = j.at("window_first");
    r.window_last = j.at("window_last");
    r.critical = j.at("critical");
    r.generation = j.at("generation");
}

void from_json(const json& j, BackpatchRecord& r) {
    r.query = j.at("query");
    r.subset = j.at("subset");
    r.anchor = parse_anchor(j.at("anchor").get<std::string>());
    r.source_layer = j.at("source_layer");
    r.target_layer = j.at("target_layer");
    r.success = j.at("success");
    r.generation = j.at("generation");
}

template <typename T>
void write_lines(const fs::path& path, const std::vector<T>& items) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    for (const auto& r : items) out << to_json(r).dump() << '\n';
}

template <typename T>
std::vector<T> read_lines(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<T> out;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            T r;
            from_json(json::parse(line), r);
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw FormatError(path.filename().string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace

const std::vector<std::string>& record_files() {
    static const std::vector<std::string> files{"run.json",       "patchscope.jsonl", "promotion.jsonl",
                                                "projection.jsonl", "knockout.jsonl", "backpatch.jsonl"};
    return files;
}

void write_records(const fs::path& dir, const RunRecords& records) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "run.json", std::ios::binary);
        if (!out) throw FormatError("cannot write " + (dir / "run.json").string());
        out << records.meta.dump(1) << '\n';
    }
    write_lines(dir / "patchscope.jsonl", records.patchscope);
    write_lines(dir / "promotion.jsonl", records.promotion);
    write_lines(dir / "projection.jsonl", records.projection);
    write_lines(dir / "knockout.jsonl", records.knockout);
    write_lines(dir / "backpatch.jsonl", records.backpatch);
}

RunRecords read_records(const fs::path& dir) {
    std::string missing;
    for (const auto& f : record_files()) {
        if (!fs::exists(dir / f)) missing += (missing.empty() ? "" : ", ") + f;
    }
    if (!missing.empty()) {
        std::string expected;
        for (const auto& f : record_files()) expected += (expected.empty() ? "" : ", ") + f;
        throw FormatError("records directory " + dir.string() + " is missing " + missing + " (expected " + expected +
                          ")");
    }
    RunRecords r;
    {
        std::ifstream in(dir / "run.json");
        try {
            r.meta = json::parse(in);
        } catch (const json::parse_error& e) {
            throw FormatError("run.json: " + std::string(e.what()));
        }
    }
    r.patchscope = read_lines<PatchscopeRecord>(dir / "patchscope.jsonl");
    r.promotion = read_lines<PromotionRecord>(dir / "promotion.jsonl");
    r.projection = read_lines<ProjectionRecord>(dir / "projection.jsonl");
    r.knockout = read_lines<KnockoutRecord>(dir / "knockout.jsonl");
    r.backpatch = read_lines<BackpatchRecord>(dir / "backpatch.jsonl");
    return r;
}

}  // namespace latenthop
