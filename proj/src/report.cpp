#include "latenthop/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "image.hpp"
#include "latenthop/error.hpp"

namespace latenthop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kSubsets{"correct", "incorrect"};

int layers_of(const RunRecords& r) {
    if (!r.meta.contains("n_layers")) throw FormatError("run.json lacks n_layers");
    return r.meta["n_layers"].get<int>();
}

bool ran(const RunRecords& r, std::string_view experiment) {
    if (!r.meta.contains("experiments")) return false;
    for (const auto& e : r.meta["experiments"]) {
        if (e.get<std::string>() == experiment) return true;
    }
    return false;
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

json opt(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<int> min_opt(std::optional<int> a, std::optional<int> b) {
    if (!a) return b;
    if (!b) return a;
    return std::min(*a, *b);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
}

}  // namespace

int GridResult::success_sum() const {
    int s = 0;
    for (int v : successes) s += v;
    return s;
}

double GridResult::percent(int source, int target, bool per_attempt) const {
    const int s = success_at(source, target);
    const int d = per_attempt ? total_at(source, target) : success_sum();
    return d == 0 ? 0.0 : 100.0 * s / d;
}

GridResult patchscope_grid(const RunRecords& records, Probe probe, const std::string& subset) {
    const int n = layers_of(records) + 1;
    GridResult g{n, n, std::vector<int>(static_cast<size_t>(n * n)), std::vector<int>(static_cast<size_t>(n * n)), {}};
    for (const auto& r : records.patchscope) {
        if (r.probe != probe || r.subset != subset) continue;
        if (r.source_layer < 0 || r.source_layer >= n || r.target_layer < 0 || r.target_layer >= n) {
            throw FormatError("patchscope record outside the layer grid for query " + r.query);
        }
        const size_t c = static_cast<size_t>(r.source_layer * n + r.target_layer);
        ++g.totals[c];
        if (r.matched) {
            ++g.successes[c];
            auto [it, fresh] = g.first_success.emplace(r.query, r.source_layer);
            if (!fresh) it->second = std::min(it->second, r.source_layer);
        }
    }
    return g;
}

GridResult backpatch_grid(const RunRecords& records, Anchor anchor, const std::string& subset) {
    const int n = layers_of(records);
    GridResult g{n, n, std::vector<int>(static_cast<size_t>(n * n)), std::vector<int>(static_cast<size_t>(n * n)), {}};
    for (const auto& r : records.backpatch) {
        if (r.anchor != anchor || r.subset != subset) continue;
        if (r.target_layer >= r.source_layer || r.target_layer < 0 || r.source_layer >= n) {
            throw FormatError("back-patch record with invalid layer pair for query " + r.query);
        }
        const size_t c = static_cast<size_t>(r.source_layer * n + r.target_layer);
        ++g.totals[c];
        if (r.success) {
            ++g.successes[c];
            auto [it, fresh] = g.first_success.emplace(r.query, r.source_layer);
            if (!fresh) it->second = std::min(it->second, r.source_layer);
        }
    }
    return g;
}

json Measurement::to_json() const {
    return {{"cases", cases},
            {"hits", hits},
            {"percent", percent()},
            {"mean_layer", mean_layer ? json(*mean_layer) : json(nullptr)}};
}

Measurement measure(const std::vector<std::optional<int>>& first_layers) {
    Measurement m;
    m.cases = static_cast<int>(first_layers.size());
    double sum = 0.0;
    for (const auto& l : first_layers) {
        if (!l) continue;
        ++m.hits;
        sum += *l;
    }
    if (m.hits > 0) m.mean_layer = sum / m.hits;
    return m;
}

json StageRecord::to_json() const {
    return {{"query", query},         {"subset", subset},   {"e2_t1", opt(e2_t1)}, {"propagation", opt(propagation)},
            {"e2_t2", opt(e2_t2)},    {"e3_t2", opt(e3_t2)}, {"promotion", opt(promotion)}};
}

std::vector<std::string> subset_queries(const RunRecords& records, const std::string& subset) {
    std::vector<std::string> out;
    if (records.meta.contains("subsets") && records.meta["subsets"].contains(subset)) {
        for (const auto& q : records.meta["subsets"][subset]) out.push_back(q.get<std::string>());
        return out;
    }
    std::set<std::string> seen;
    auto add = [&](const std::string& q, const std::string& s) {
        if (s == subset && seen.insert(q).second) out.push_back(q);
    };
    for (const auto& r : records.patchscope) add(r.query, r.subset);
    for (const auto& r : records.promotion) add(r.query, r.subset);
    for (const auto& r : records.projection) add(r.query, r.subset);
    for (const auto& r : records.knockout) add(r.query, r.subset);
    for (const auto& r : records.backpatch) add(r.query, r.subset);
    return out;
}

namespace {

struct SubsetView {
    std::vector<std::string> queries;
    std::map<std::string, int> e2_t1, e2_t2, e3_t2;
    std::map<std::string, PromotionRecord> promotion;
    std::map<std::string, ProjectionRecord> projection;
    std::map<std::string, int> knockout_first;
    std::map<std::string, int> backpatch_t1, backpatch_t2;
};

SubsetView view(const RunRecords& records, const std::string& subset) {
    SubsetView v;
    v.queries = subset_queries(records, subset);
    v.e2_t1 = patchscope_grid(records, Probe::E2AtT1, subset).first_success;
    v.e2_t2 = patchscope_grid(records, Probe::E2AtT2, subset).first_success;
    v.e3_t2 = patchscope_grid(records, Probe::E3AtT2, subset).first_success;
    for (const auto& r : records.promotion)
        if (r.subset == subset) v.promotion[r.query] = r;
    for (const auto& r : records.projection)
        if (r.subset == subset) v.projection[r.query] = r;
    for (const auto& r : records.knockout) {
        if (r.subset != subset || !r.critical) continue;
        auto [it, fresh] = v.knockout_first.emplace(r.query, r.window_first);
        if (!fresh) it->second = std::min(it->second, r.window_first);
    }
    v.backpatch_t1 = backpatch_grid(records, Anchor::T1, subset).first_success;
    v.backpatch_t2 = backpatch_grid(records, Anchor::T2, subset).first_success;
    return v;
}

std::optional<int> lookup(const std::map<std::string, int>& m, const std::string& q) {
    auto it = m.find(q);
    return it == m.end() ? std::nullopt : std::optional<int>(it->second);
}

StageRecord stage_of(const SubsetView& v, const std::string& q, const std::string& subset) {
    StageRecord s;
    s.query = q;
    s.subset = subset;
    s.e2_t1 = lookup(v.e2_t1, q);
    s.e2_t2 = lookup(v.e2_t2, q);
    s.e3_t2 = lookup(v.e3_t2, q);
    if (auto it = v.promotion.find(q); it != v.promotion.end()) s.promotion = min_opt(it->second.attention, it->second.mlp);
    std::optional<int> prop = lookup(v.knockout_first, q);
    if (auto it = v.projection.find(q); it != v.projection.end()) {
        prop = min_opt(prop, min_opt(it->second.attention, it->second.mlp));
    }
    s.propagation = min_opt(prop, s.e2_t2);
    return s;
}

std::optional<int> stage_value(const StageRecord& s, size_t index) {
    switch (index) {
        case 0: return s.e2_t1;
        case 1: return s.propagation;
        case 2: return s.e2_t2;
        case 3: return s.e3_t2;
        default: return s.promotion;
    }
}

}  // namespace

std::vector<StageRecord> compute_stage_records(const RunRecords& records) {
    std::vector<StageRecord> out;
    for (const auto& subset : kSubsets) {
        const auto v = view(records, subset);
        for (const auto& q : v.queries) out.push_back(stage_of(v, q, subset));
    }
    return out;
}

Quartiles quartiles(std::vector<int> values) {
    Quartiles q;
    q.n = static_cast<int>(values.size());
    if (values.empty()) return q;
    std::sort(values.begin(), values.end());
    auto at = [&](double p) {
        const double h = (values.size() - 1) * p;
        const size_t lo = static_cast<size_t>(std::floor(h));
        const size_t hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (h - lo) * (values[hi] - values[lo]);
    };
    q.min = values.front();
    q.q1 = at(0.25);
    q.median = at(0.5);
    q.q3 = at(0.75);
    q.max = values.back();
    return q;
}

json summarize(const RunRecords& records) {
    json out;
    out["meta"] = {{"model_fingerprint", records.meta.value("model_fingerprint", "")},
                   {"architecture", records.meta.value("architecture", "")},
                   {"n_layers", layers_of(records)},
                   {"config", records.meta.value("config", json::object())},
                   {"experiments", records.meta.value("experiments", json::array())}};
    if (records.meta.contains("post_filtering")) out["meta"]["post_filtering"] = records.meta["post_filtering"];
    const auto stages = compute_stage_records(records);
    for (const auto& subset : kSubsets) {
        const auto v = view(records, subset);
        json s;
        s["cases"] = v.queries.size();
        auto collect = [&](auto&& f) {
            std::vector<std::optional<int>> xs;
            for (const auto& q : v.queries) xs.push_back(f(q));
            return measure(xs).to_json();
        };
        if (ran(records, "first-hop")) s["e2_from_t1"] = collect([&](const std::string& q) { return lookup(v.e2_t1, q); });
        if (ran(records, "propagation")) {
            s["e2_from_t2"] = collect([&](const std::string& q) { return lookup(v.e2_t2, q); });
            s["propagation"] = collect([&](const std::string& q) { return stage_of(v, q, subset).propagation; });
            s["knockout"] = collect([&](const std::string& q) { return lookup(v.knockout_first, q); });
        }
        if (ran(records, "second-hop")) {
            s["e3_from_t2"] = collect([&](const std::string& q) { return lookup(v.e3_t2, q); });
            s["promotion_attention"] = collect([&](const std::string& q) {
                auto it = v.promotion.find(q);
                return it == v.promotion.end() ? std::nullopt : it->second.attention;
            });
            s["promotion_mlp"] = collect([&](const std::string& q) {
                auto it = v.promotion.find(q);
                return it == v.promotion.end() ? std::nullopt : it->second.mlp;
            });
        }
        if (ran(records, "backpatch")) {
            s["backpatch_t1"] = collect([&](const std::string& q) { return lookup(v.backpatch_t1, q); });
            s["backpatch_t2"] = collect([&](const std::string& q) { return lookup(v.backpatch_t2, q); });
        }
        json qs = json::object();
        for (size_t k = 0; k < kStageNames.size(); ++k) {
            std::vector<int> vals;
            for (const auto& st : stages)
                if (st.subset == subset)
                    if (auto x = stage_value(st, k)) vals.push_back(*x);
            const auto q = quartiles(vals);
            qs[kStageNames[k]] = {{"n", q.n}, {"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}};
        }
        s["stage_quartiles"] = qs;
        int both = 0, ordered = 0;
        for (const auto& st : stages) {
            if (st.subset != subset || !st.e2_t1 || !st.e3_t2) continue;
            ++both;
            if (*st.e2_t1 <= *st.e3_t2) ++ordered;
        }
        s["stage_ordering"] = {{"both_fired", both},
                               {"ordered", ordered},
                               {"pass_rate", both == 0 ? json(nullptr) : json(static_cast<double>(ordered) / both)}};
        out["subsets"][subset] = s;
    }
    return out;
}

namespace {

std::string grid_csv(const GridResult& g, bool normalized, bool per_attempt) {
    std::string out = "source\\target";
    for (int t = 0; t < g.cols; ++t) out += "," + std::to_string(t);
    out += "\n";
    for (int s = 0; s < g.rows; ++s) {
        out += std::to_string(s);
        for (int t = 0; t < g.cols; ++t) {
            out += ",";
            out += normalized ? fmt("%.4f", g.percent(s, t, per_attempt)) : std::to_string(g.success_at(s, t));
        }
        out += "\n";
    }
    return out;
}

void heatmap_png(const GridResult& g, bool per_attempt, const std::string& title, const fs::path& path) {
    const int cell = 18, left = 40, top = 40;
    image::Canvas c(left + g.cols * cell + 20, top + g.rows * cell + 30);
    double max = 0.0;
    for (int s = 0; s < g.rows; ++s)
        for (int t = 0; t < g.cols; ++t) max = std::max(max, g.percent(s, t, per_attempt));
    c.text(4, 4, title, image::kBlack, 2);
    c.text(4, 20, "SRC\\TGT", image::kGrey, 1);
    for (int s = 0; s < g.rows; ++s) {
        // Source layers grow upwards.
        const int y = top + (g.rows - 1 - s) * cell;
        c.text(left - image::Canvas::text_width(std::to_string(s), 1) - 4, y + 6, std::to_string(s), image::kBlack, 1);
        for (int t = 0; t < g.cols; ++t) {
            const bool tried = g.total_at(s, t) > 0;
            const auto color = tried ? image::sequential(max > 0 ? g.percent(s, t, per_attempt) / max : 0.0)
                                     : image::Rgb{235, 235, 235};
            c.fill_rect(left + t * cell, y, cell, cell, color);
        }
    }
    for (int t = 0; t < g.cols; ++t) c.text(left + t * cell + 5, top + g.rows * cell + 6, std::to_string(t), image::kBlack, 1);
    c.rect(left - 1, top - 1, g.cols * cell + 2, g.rows * cell + 2, image::kGrey);
    c.text(left, top + g.rows * cell + 18, "MAX " + fmt("%.1f", max) + "%", image::kGrey, 1);
    c.write_png(path);
}

void boxplot_png(const std::vector<StageRecord>& stages, int n_layers, const fs::path& path) {
    const int scale = 16, left = 40, top = 30, group = 70, box = 22;
    const int plot_h = n_layers * scale;
    image::Canvas c(left + static_cast<int>(kStageNames.size()) * group + 20, top + plot_h + 50);
    const image::Rgb colors[2] = {{31, 119, 180}, {255, 127, 14}};
    c.text(4, 4, "FIRST LAYER PER STAGE", image::kBlack, 2);
    for (int l = 0; l <= n_layers; ++l) {
        const int y = top + plot_h - l * scale;
        c.hline(left - 3, left + static_cast<int>(kStageNames.size()) * group, y, {230, 230, 230});
        c.text(left - image::Canvas::text_width(std::to_string(l), 1) - 6, y - 2, std::to_string(l), image::kBlack, 1);
    }
    auto ypos = [&](double layer) { return top + plot_h - static_cast<int>(std::lround(layer * scale)); };
    for (size_t k = 0; k < kStageNames.size(); ++k) {
        const int gx = left + static_cast<int>(k) * group;
        for (size_t si = 0; si < kSubsets.size(); ++si) {
            std::vector<int> vals;
            for (const auto& st : stages)
                if (st.subset == kSubsets[si])
                    if (auto x = stage_value(st, k)) vals.push_back(*x);
            const auto q = quartiles(vals);
            if (q.n == 0) continue;
            const int x = gx + 10 + static_cast<int>(si) * (box + 4);
            const int mid = x + box / 2;
            c.vline(mid, ypos(q.min), ypos(q.q1), colors[si]);
            c.vline(mid, ypos(q.q3), ypos(q.max), colors[si]);
            c.hline(x + 5, x + box - 5, ypos(q.min), colors[si]);
            c.hline(x + 5, x + box - 5, ypos(q.max), colors[si]);
            const int y3 = ypos(q.q3), y1 = ypos(q.q1);
            c.fill_rect(x, y3, box, std::max(1, y1 - y3 + 1), colors[si]);
            c.hline(x, x + box - 1, ypos(q.median), image::kBlack);
        }
        c.text(gx + 4, top + plot_h + 8, kStageNames[k], image::kBlack, 1);
    }
    c.fill_rect(left, top + plot_h + 24, 10, 10, colors[0]);
    c.text(left + 14, top + plot_h + 26, "CORRECT", image::kBlack, 1);
    c.fill_rect(left + 80, top + plot_h + 24, 10, 10, colors[1]);
    c.text(left + 94, top + plot_h + 26, "INCORRECT", image::kBlack, 1);
    c.write_png(path);
}

std::string cell(const json& m) {
    if (m.is_null()) return "-";
    return fmt("%.2f%%", m["percent"].get<double>());
}

std::string layer_cell(const json& m) {
    if (m.is_null() || m["mean_layer"].is_null()) return "-";
    return fmt("%.2f", m["mean_layer"].get<double>());
}

std::string tables_md(const json& summary) {
    auto get = [&](const std::string& subset, const char* key) -> json {
        const auto& s = summary["subsets"][subset];
        return s.contains(key) ? s[key] : json(nullptr);
    };
    const auto& meta = summary["meta"];
    std::string t;
    t += "# Results\n\n";
    t += "Model `" + meta["model_fingerprint"].get<std::string>() + "` (" + meta["architecture"].get<std::string>() +
         ", " + std::to_string(meta["n_layers"].get<int>()) + " layers)\n\n";

    t += "## Table 1. Cases\n\n| Post filtering | Correct | Incorrect |\n|---|---|---|\n";
    t += "| " + (meta.contains("post_filtering") ? meta["post_filtering"].dump() : std::string("-")) + " | " +
         summary["subsets"]["correct"]["cases"].dump() + " | " + summary["subsets"]["incorrect"]["cases"].dump() + " |\n\n";

    t += "## Table 2. Patchscopes\n\n";
    t += "| Subset | e2 from t1 Cases | Layer | e2 from t2 Cases | Layer | e3 from t2 Cases | Layer |\n";
    t += "|---|---|---|---|---|---|---|\n";
    for (const auto& s : kSubsets) {
        t += "| " + s;
        for (const char* k : {"e2_from_t1", "e2_from_t2", "e3_from_t2"}) t += " | " + cell(get(s, k)) + " | " + layer_cell(get(s, k));
        t += " |\n";
    }

    t += "\n## Table 3. Prediction promotion\n\n| Subset | Attention Cases | Layer | MLP Cases | Layer |\n";
    t += "|---|---|---|---|---|\n";
    for (const auto& s : kSubsets) {
        t += "| " + s;
        for (const char* k : {"promotion_attention", "promotion_mlp"}) t += " | " + cell(get(s, k)) + " | " + layer_cell(get(s, k));
        t += " |\n";
    }

    t += "\n## Table 4. Propagation from t1 to t2\n\n| Subset | Detected | Mean Layer |\n|---|---|---|\n";
    for (const auto& s : kSubsets) t += "| " + s + " | " + cell(get(s, "propagation")) + " | " + layer_cell(get(s, "propagation")) + " |\n";

    t += "\n## Table 5. Back-patching\n\n| Subset | t1 | t2 |\n|---|---|---|\n";
    for (const auto& s : kSubsets) t += "| " + s + " | " + cell(get(s, "backpatch_t1")) + " | " + cell(get(s, "backpatch_t2")) + " |\n";

    t += "\n## Stage ordering\n\n| Subset | Both fired | e2@t1 <= e3@t2 | Pass rate |\n|---|---|---|---|\n";
    for (const auto& s : kSubsets) {
        const auto& o = summary["subsets"][s]["stage_ordering"];
        t += "| " + s + " | " + o["both_fired"].dump() + " | " + o["ordered"].dump() + " | " +
             (o["pass_rate"].is_null() ? std::string("-") : fmt("%.2f%%", 100.0 * o["pass_rate"].get<double>())) + " |\n";
    }
    return t;
}

}  // namespace

RenderOutcome render_report(const RunRecords& records, const fs::path& out_dir, const RenderOptions& options) {
    fs::create_directories(out_dir);
    RenderOutcome out;
    const int n_layers = layers_of(records);
    auto emit = [&](const std::string& name, const std::string& text) {
        write_text(out_dir / name, text);
        out.files.push_back(name);
    };

    const json summary = summarize(records);
    emit("summary.json", summary.dump(1) + "\n");
    emit("tables.md", tables_md(summary));

    const auto stages = compute_stage_records(records);
    std::string jsonl, csv = "query,subset";
    for (const auto& n : kStageNames) csv += "," + n;
    csv += "\n";
    for (const auto& s : stages) {
        jsonl += s.to_json().dump() + "\n";
        csv += s.query + "," + s.subset;
        for (size_t k = 0; k < kStageNames.size(); ++k) {
            const auto v = stage_value(s, k);
            csv += "," + (v ? std::to_string(*v) : std::string());
        }
        csv += "\n";
    }
    emit("stages.jsonl", jsonl);
    emit("stages.csv", csv);

    const bool early_exit = records.meta.contains("config") && records.meta["config"].value("early_exit", false);
    for (const auto& subset : kSubsets) {
        std::vector<std::pair<std::string, GridResult>> grids;
        for (Probe p : {Probe::E2AtT1, Probe::E2AtT2, Probe::E3AtT2}) {
            grids.emplace_back("patchscope_" + std::string(to_string(p)) + "_" + subset, patchscope_grid(records, p, subset));
        }
        for (Anchor a : {Anchor::T1, Anchor::T2}) {
            grids.emplace_back("backpatch_" + std::string(to_string(a)) + "_" + subset, backpatch_grid(records, a, subset));
        }
        for (const auto& [name, g] : grids) {
            int attempts = 0;
            for (int v : g.totals) attempts += v;
            if (attempts == 0) continue;
            emit(name + ".csv", grid_csv(g, true, options.per_attempt));
            emit(name + "_counts.csv", grid_csv(g, false, false));
            if (options.images) {
                if (early_exit && name.rfind("backpatch_", 0) == 0) {
                    out.notices.push_back(name + ": heat-map skipped, grid was evaluated with early exit");
                    continue;
                }
                heatmap_png(g, options.per_attempt, name, out_dir / (name + ".png"));
                out.files.push_back(name + ".png");
            }
        }
        // Share of cases first decoded at each source layer.
        for (Probe p : {Probe::E2AtT1, Probe::E2AtT2, Probe::E3AtT2}) {
            const auto g = patchscope_grid(records, p, subset);
            int attempts = 0;
            for (int v : g.totals) attempts += v;
            if (attempts == 0) continue;
            const auto cases = subset_queries(records, subset).size();
            std::vector<int> first(static_cast<size_t>(g.rows));
            for (const auto& [q, l] : g.first_success) ++first[static_cast<size_t>(l)];
            std::string text = "layer,percent_of_cases\n";
            for (int l = 0; l < g.rows; ++l) {
                text += std::to_string(l) + "," + fmt("%.4f", cases == 0 ? 0.0 : 100.0 * first[static_cast<size_t>(l)] / cases) + "\n";
            }
            emit("first_layers_" + std::string(to_string(p)) + "_" + subset + ".csv", text);
        }
    }

    if (options.images) {
        bool any = false;
        for (const auto& s : stages)
            for (size_t k = 0; k < kStageNames.size(); ++k) any = any || stage_value(s, k).has_value();
        if (any) {
            boxplot_png(stages, n_layers, out_dir / "stages.png");
            out.files.push_back("stages.png");
        } else {
            out.notices.push_back("stages.png: boxplot skipped, no stage fired in any record");
        }
    }
    return out;
}

}  // namespace latenthop
