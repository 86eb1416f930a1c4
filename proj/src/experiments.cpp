#include "latenthop/experiments.hpp"

#include <algorithm>

#include "latenthop/error.hpp"
#include "latenthop/interventions.hpp"

namespace latenthop {

using nlohmann::json;

std::string_view to_string(Experiment experiment) {
    switch (experiment) {
        case Experiment::FirstHop: return "first-hop";
        case Experiment::SecondHop: return "second-hop";
        case Experiment::Propagation: return "propagation";
        case Experiment::Backpatch: return "backpatch";
    }
    return "?";
}

std::vector<Experiment> parse_experiments(std::string_view text) {
    const std::vector<Experiment> all{Experiment::FirstHop, Experiment::SecondHop, Experiment::Propagation,
                                      Experiment::Backpatch};
    if (text == "all") return all;
    for (Experiment e : all) {
        if (to_string(e) == text) return {e};
    }
    throw ContractError("unknown experiment '" + std::string(text) +
                        "' (expected first-hop, second-hop, propagation, backpatch or all)");
}

void ExperimentConfig::validate() const {
    if (window_len < 1) throw ContractError("knockout window length must be >= 1");
    if (answer_tokens < 1) throw ContractError("answer_tokens must be >= 1");
    probe_params.validate();
}

json ExperimentConfig::to_json() const {
    return {{"seed", seed},
            {"window_len", window_len},
            {"probe_samples", probe_params.n_samples},
            {"probe_temperature", probe_params.temperature},
            {"probe_max_new_tokens", probe_params.max_new_tokens},
            {"probe_mode", probe_params.mode == DecodeParams::Mode::Greedy ? "greedy" : "sampled"},
            {"answer_tokens", answer_tokens},
            {"early_exit", early_exit}};
}

namespace {

uint64_t hash_text(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

CaptureSpec residual_only() {
    CaptureSpec c;
    c.logits = CaptureSpec::Logits::None;
    return c;
}

}  // namespace

ExperimentRunner::ExperimentRunner(const Model& model, const BpeTokenizer& tokenizer, ExperimentConfig config)
    : model_(model), tokenizer_(tokenizer), config_(config) {
    config_.validate();
    task_ = PatchscopeTask::create(model, tokenizer, config_.probe_params);
}

std::string ExperimentRunner::greedy_text(std::span<const int32_t> prompt) const {
    return tokenizer_.decode(model_.generate_ids(prompt, DecodeParams::greedy(config_.answer_tokens)).front());
}

json ExperimentRunner::metadata() const {
    return {{"model_fingerprint", model_.fingerprint()},
            {"architecture", to_string(model_.config().architecture)},
            {"n_layers", model_.config().n_layers},
            {"config", config_.to_json()},
            {"target_prompt", task_.prompt()}};
}

std::vector<PatchscopeRecord> ExperimentRunner::patchscope_grid(std::span<const TwoHopQuery> queries,
                                                                const std::string& subset, Probe probe) const {
    const int n = model_.config().n_layers + 1;
    const long nq = static_cast<long>(queries.size());
    std::vector<std::vector<int32_t>> tokens(queries.size());
    std::vector<ForwardTrace> traces(queries.size());
#pragma omp parallel for schedule(dynamic)
    for (long q = 0; q < nq; ++q) {
        tokens[q] = tokenizer_.encode(queries[q].prompt).ids;
        traces[q] = model_.forward(tokens[q], {}, residual_only());
    }
    const long cells = nq * n * n;
    std::vector<PatchscopeRecord> out(static_cast<size_t>(cells));
#pragma omp parallel for schedule(dynamic)
    for (long u = 0; u < cells; ++u) {
        const auto& q = queries[static_cast<size_t>(u / (n * n))];
        const int source = static_cast<int>((u / n) % n);
        const int target = static_cast<int>(u % n);
        const int position = probe == Probe::E2AtT1 ? q.t1 : q.t2;
        const EntityAliasSet& aliases = probe == Probe::E3AtT2 ? q.e3_aliases : q.e2_aliases;
        const auto v = record_hidden(traces[static_cast<size_t>(u / (n * n))], source, position, q.id);
        const uint64_t seed = mix_seed(config_.seed, {hash_text(q.id), static_cast<uint64_t>(probe),
                                                      static_cast<uint64_t>(source), static_cast<uint64_t>(target)});
        const auto r = patchscope_decode(model_, tokenizer_, task_, v, target, seed, &aliases);
        out[static_cast<size_t>(u)] = {q.id, subset, probe, source, target, r.matched, r.generations};
    }
    return out;
}

RunRecords ExperimentRunner::run_first_hop_analysis(std::span<const TwoHopQuery> queries,
                                                    const std::string& subset) const {
    RunRecords r;
    r.patchscope = patchscope_grid(queries, subset, Probe::E2AtT1);
    return r;
}

RunRecords ExperimentRunner::run_second_hop_analysis(std::span<const TwoHopQuery> queries,
                                                     const std::string& subset) const {
    RunRecords r;
    r.patchscope = patchscope_grid(queries, subset, Probe::E3AtT2);
    r.promotion.resize(queries.size());
    const long nq = static_cast<long>(queries.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < nq; ++i) {
        const auto& q = queries[static_cast<size_t>(i)];
        const auto ids = tokenizer_.encode(q.prompt).ids;
        CaptureSpec capture;
        capture.sublayers = true;
        capture.logits = CaptureSpec::Logits::Last;
        const auto trace = model_.forward(ids, {}, capture);
        const auto logits = trace.logits(q.t2);
        const auto answer = static_cast<int32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        const auto p = sublayer_promotion(model_, trace, q.t2, answer);
        r.promotion[static_cast<size_t>(i)] = {q.id, subset, answer, p.attention, p.mlp};
    }
    return r;
}

RunRecords ExperimentRunner::run_propagation_analysis(std::span<const TwoHopQuery> queries,
                                                      const std::string& subset) const {
    RunRecords r;
    const auto& cfg = model_.config();
    const auto windows = sliding_windows(cfg.n_layers, config_.window_len);
    const long nq = static_cast<long>(queries.size());
    const long nw = static_cast<long>(windows.size());

    std::vector<std::vector<int32_t>> tokens(queries.size());
    std::vector<DecodeState> prefixes(queries.size());
    std::vector<std::string> clean(queries.size());
    r.projection.resize(queries.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < nq; ++i) {
        const auto& q = queries[static_cast<size_t>(i)];
        auto& ids = tokens[static_cast<size_t>(i)];
        ids = tokenizer_.encode(q.prompt).ids;
        prefixes[static_cast<size_t>(i)] = model_.prefill(std::span<const int32_t>(ids).first(static_cast<size_t>(q.t2)));
        clean[static_cast<size_t>(i)] = greedy_text(ids);

        CaptureSpec capture;
        capture.sublayers = true;
        capture.logits = CaptureSpec::Logits::None;
        const auto trace = model_.forward(ids, {}, capture);
        const int32_t e2_token = tokenizer_.encode(" " + q.e2_aliases.canonical).ids.front();
        const auto p = sublayer_promotion(model_, trace, q.t2, e2_token);
        r.projection[static_cast<size_t>(i)] = {q.id, subset, e2_token, p.attention, p.mlp};
    }

    r.knockout.resize(static_cast<size_t>(nq * nw));
#pragma omp parallel for schedule(dynamic)
    for (long u = 0; u < nq * nw; ++u) {
        const size_t qi = static_cast<size_t>(u / nw);
        const auto& q = queries[qi];
        const LayerWindow w = windows[static_cast<size_t>(u % nw)];
        const auto plan = make_knockout_plan({q.t2, q.t1, w, std::nullopt}, cfg);
        const auto suffix = std::span<const int32_t>(tokens[qi]).subspan(static_cast<size_t>(q.t2));
        const auto ids = model_.generate_ids(prefixes[qi], suffix, DecodeParams::greedy(config_.answer_tokens), plan);
        std::string text = tokenizer_.decode(ids.front());
        // Correct cases: the answer is lost. Incorrect cases: the text changes.
        const bool critical = subset == "incorrect" ? text != clean[qi] : !entity_match(text, q.e3_aliases);
        r.knockout[static_cast<size_t>(u)] = {q.id, subset, w.first, w.last, critical, std::move(text)};
    }

    r.patchscope = patchscope_grid(queries, subset, Probe::E2AtT2);
    return r;
}

RunRecords ExperimentRunner::run_backpatch_analysis(std::span<const TwoHopQuery> queries, const std::string& subset,
                                                    Anchor anchor) const {
    RunRecords r;
    const auto pairs = backpatch_pairs(model_.config().n_layers);
    const long nq = static_cast<long>(queries.size());
    const long np = static_cast<long>(pairs.size());
    std::vector<std::vector<int32_t>> tokens(queries.size());
    std::vector<ForwardTrace> traces(queries.size());
    std::vector<DecodeState> prefixes(queries.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < nq; ++i) {
        const auto& q = queries[static_cast<size_t>(i)];
        const int position = anchor == Anchor::T1 ? q.t1 : q.t2;
        tokens[static_cast<size_t>(i)] = tokenizer_.encode(q.prompt).ids;
        traces[static_cast<size_t>(i)] = model_.forward(tokens[static_cast<size_t>(i)], {}, residual_only());
        prefixes[static_cast<size_t>(i)] =
            model_.prefill(std::span<const int32_t>(tokens[static_cast<size_t>(i)]).first(static_cast<size_t>(position)));
    }
    auto evaluate = [&](size_t qi, std::pair<int, int> pair) {
        const auto& q = queries[qi];
        const int position = anchor == Anchor::T1 ? q.t1 : q.t2;
        const auto plan = make_backpatch_plan({q.id, position, pair.first, pair.second}, traces[qi]);
        const auto suffix = std::span<const int32_t>(tokens[qi]).subspan(static_cast<size_t>(position));
        const auto ids = model_.generate_ids(prefixes[qi], suffix, DecodeParams::greedy(config_.answer_tokens), plan);
        std::string text = tokenizer_.decode(ids.front());
        const bool success = entity_match(text, q.e3_aliases);
        return BackpatchRecord{q.id, subset, anchor, pair.first, pair.second, success, std::move(text)};
    };
    if (config_.early_exit) {
        std::vector<std::vector<BackpatchRecord>> per_query(queries.size());
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < nq; ++i) {
            for (const auto& pair : pairs) {
                per_query[static_cast<size_t>(i)].push_back(evaluate(static_cast<size_t>(i), pair));
                if (per_query[static_cast<size_t>(i)].back().success) break;
            }
        }
        for (auto& v : per_query) r.backpatch.insert(r.backpatch.end(), v.begin(), v.end());
        return r;
    }
    r.backpatch.resize(static_cast<size_t>(nq * np));
#pragma omp parallel for schedule(dynamic)
    for (long u = 0; u < nq * np; ++u) {
        r.backpatch[static_cast<size_t>(u)] = evaluate(static_cast<size_t>(u / np), pairs[static_cast<size_t>(u % np)]);
    }
    return r;
}

RunRecords ExperimentRunner::run(std::span<const Experiment> experiments, std::span<const TwoHopQuery> correct,
                                 std::span<const TwoHopQuery> incorrect) const {
    RunRecords out;
    out.meta = metadata();
    json names = json::array();
    for (Experiment e : experiments) names.push_back(to_string(e));
    out.meta["experiments"] = names;
    json subsets = json::object();
    for (const auto& [name, queries] : {std::pair{std::string("correct"), correct}, std::pair{std::string("incorrect"), incorrect}}) {
        json ids = json::array();
        for (const auto& q : queries) ids.push_back(q.id);
        subsets[name] = ids;
        for (Experiment e : experiments) {
            switch (e) {
                case Experiment::FirstHop: out.append(run_first_hop_analysis(queries, name)); break;
                case Experiment::SecondHop: out.append(run_second_hop_analysis(queries, name)); break;
                case Experiment::Propagation: out.append(run_propagation_analysis(queries, name)); break;
                case Experiment::Backpatch:
                    out.append(run_backpatch_analysis(queries, name, Anchor::T1));
                    out.append(run_backpatch_analysis(queries, name, Anchor::T2));
                    break;
            }
        }
    }
    out.meta["subsets"] = subsets;
    return out;
}

}  // namespace latenthop
