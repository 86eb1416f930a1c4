// Acceptance suite: one pass/fail line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "latenthop/bundle.hpp"
#include "latenthop/dataset.hpp"
#include "latenthop/error.hpp"
#include "latenthop/experiments.hpp"
#include "latenthop/interventions.hpp"
#include "latenthop/probes.hpp"
#include "latenthop/report.hpp"

using namespace latenthop;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kFixtures = LATENTHOP_FIXTURES;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw LoadError("cannot open " + p.string());
    return json::parse(in);
}

double rel_diff(std::span<const float> a, std::span<const float> b) {
    double worst = 0.0, scale = 0.0;
    for (float x : b) scale = std::max(scale, static_cast<double>(std::abs(x)));
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
    return worst / std::max(scale, 1e-12);
}

const ModelBundle& gpt2() {
    static const auto b = ModelBundle::load(kFixtures / "models" / "gpt2-tiny");
    return b;
}

const ModelBundle& llama() {
    static const auto b = ModelBundle::load(kFixtures / "models" / "llama-tiny");
    return b;
}

const std::vector<TwoHopQuery>& world_queries() {
    static const auto q = build_dataset(KnowledgeBase::load_dump(kFixtures / "world"), gpt2().tokenizer, 0).queries;
    return q;
}

Outcome identity_patch() {
    const auto start = std::chrono::steady_clock::now();
    const auto& b = gpt2();
    const int L = b.model.config().n_layers;
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    const size_t n_prompts = 50;
    if (world_queries().size() < n_prompts) return {false, "fewer than 50 fixture prompts"};
    for (size_t i = 0; i < n_prompts; ++i) {
        const auto ids = b.tokenizer.encode(world_queries()[i].prompt).ids;
        const int T = static_cast<int>(ids.size());
        const auto clean = b.model.forward(ids);
        for (int k = 0; k < 10; ++k) {
            const int layer = static_cast<int>(rng() % static_cast<uint64_t>(L + 1));
            const int pos = static_cast<int>(rng() % static_cast<uint64_t>(T));
            const auto v = record_hidden(clean, layer, pos, "self");
            const auto plan = make_patch_plan({{"self", layer, pos}, {"self", layer, pos}, v}, b.model.config(), T);
            const auto patched = b.model.forward(ids, plan);
            for (int p = 0; p < T; ++p) worst = std::max(worst, rel_diff(patched.logits(p), clean.logits(p)));
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[128];
    std::snprintf(buf, sizeof buf, "500 self-patches, max rel diff %.3g (tol 1e-5), %.1f s (limit 120 s)", worst, secs);
    return {worst <= 1e-5 && secs < 120.0, buf};
}

Outcome golden_parity() {
    const auto prompts = read_json(kFixtures / "models" / "golden_tokens.json")["prompts"];
    std::string detail;
    bool pass = prompts.size() == 20;
    for (const auto& [name, bundle] : {std::pair<std::string, const ModelBundle*>{"gpt2-tiny", &gpt2()},
                                       std::pair<std::string, const ModelBundle*>{"llama-tiny", &llama()}}) {
        const auto golden = TensorFile::open(kFixtures / "models" / name / "golden.safetensors");
        const size_t V = static_cast<size_t>(bundle->model.config().vocab_size);
        double worst = 0.0;
        for (size_t i = 0; i < prompts.size(); ++i) {
            const auto ids = prompts[i]["ids"].get<std::vector<int32_t>>();
            char key[64];
            std::snprintf(key, sizeof key, "prompt_%02zu.logits", i);
            const auto ref = golden.read_f32(key);
            const auto trace = bundle->model.forward(ids);
            for (size_t p = 0; p < ids.size(); ++p) {
                worst = std::max(worst, rel_diff(trace.logits(static_cast<int>(p)), std::span<const float>(ref).subspan(p * V, V)));
            }
        }
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s%s max rel diff %.3g", detail.empty() ? "" : ", ", name.c_str(), worst);
        detail += buf;
        pass = pass && worst <= 1e-4;
    }
    return {pass, std::to_string(prompts.size()) + " prompts, " + detail + " (tol 1e-4)"};
}

Outcome knockout_oracle() {
    const auto& b = gpt2();
    const auto ids = b.tokenizer.encode(world_queries().front().prompt).ids;
    const int T = static_cast<int>(ids.size());
    const int L = b.model.config().n_layers;
    const auto clean = b.model.forward(ids, {}, CaptureSpec::everything());
    std::mt19937_64 rng(77);
    double worst = 0.0;
    int nonzero = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int layer = static_cast<int>(rng() % static_cast<uint64_t>(L));
        const int query = 1 + static_cast<int>(rng() % static_cast<uint64_t>(T - 1));
        const int key = static_cast<int>(rng() % static_cast<uint64_t>(query + 1));
        const auto plan = make_knockout_plan({query, key, {layer, layer}, std::nullopt}, b.model.config());
        const auto knocked = b.model.forward(ids, plan, CaptureSpec::everything());
        for (int h = 0; h < clean.n_heads(); ++h) {
            // Inputs to the knocked layer are untouched, so its scores equal the clean ones.
            const auto row = clean.attention_row(layer, h, query);
            const auto got = knocked.attention_row(layer, h, query);
            if (got[static_cast<size_t>(key)] != 0.0f) ++nonzero;
            double rest = 0.0;
            for (int k = 0; k <= query; ++k)
                if (k != key) rest += row[static_cast<size_t>(k)];
            for (int k = 0; k <= query; ++k) {
                if (k == key) continue;
                const double want = rest > 0.0 ? row[static_cast<size_t>(k)] / rest : 0.0;
                worst = std::max(worst, std::abs(got[static_cast<size_t>(k)] - want));
            }
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "100 triples, %d blocked weights nonzero, oracle max abs diff %.3g (tol 1e-6)", nonzero,
                  worst);
    return {nonzero == 0 && worst <= 1e-6, buf};
}

Outcome substitution() {
    const auto& b = gpt2();
    const auto task = PatchscopeTask::create(b.model, b.tokenizer, DecodeParams::greedy(20));
    std::vector<int32_t> words;
    for (int32_t id = 0; id < b.tokenizer.vocab_size(); ++id) {
        const auto text = b.tokenizer.token_text(id);
        if (text.size() < 3 || text[0] != ' ') continue;
        if (!std::all_of(text.begin() + 1, text.end(), [](unsigned char c) { return std::isalpha(c); })) continue;
        if (b.tokenizer.encode(text).ids != std::vector<int32_t>{id}) continue;
        words.push_back(id);
    }
    if (words.size() < 30) return {false, "fewer than 30 single-token words in the vocabulary"};
    std::mt19937_64 rng(30);
    std::shuffle(words.begin(), words.end(), rng);
    words.resize(30);
    int same = 0;
    for (int32_t w : words) {
        std::vector<int32_t> substituted(task.prompt_ids().begin(), task.prompt_ids().end());
        substituted.back() = w;
        const auto r = patchscope_decode(b.model, b.tokenizer, task, substituted, task.placeholder(), 0, 0, 0);
        const auto direct = b.model.generate_ids(substituted, DecodeParams::greedy(20)).front();
        if (r.generations.size() == 1 && r.generations[0] == b.tokenizer.decode(direct)) ++same;
    }
    return {same == 30, std::to_string(same) + "/30 generations identical"};
}

Outcome projection_parity() {
    const auto& b = gpt2();
    const int L = b.model.config().n_layers;
    if (world_queries().size() < 100) return {false, "fewer than 100 fixture prompts"};
    int agree = 0;
    for (size_t i = 0; i < 100; ++i) {
        const auto ids = b.tokenizer.encode(world_queries()[i].prompt).ids;
        const int last = static_cast<int>(ids.size()) - 1;
        const auto trace = b.model.forward(ids);
        const int32_t top = projected_top1(b.model, trace.residual_in(L, last));
        const auto next = b.model.generate_ids(ids, DecodeParams::greedy(1)).front();
        if (!next.empty() && next[0] == top) ++agree;
    }
    return {agree == 100, std::to_string(agree) + "/100 prompts agree"};
}

struct FixtureRun {
    RunRecords records;
    std::vector<TwoHopQuery> correct;
};

const FixtureRun& fixture_run() {
    static const FixtureRun run = [] {
        FixtureRun r;
        r.correct = read_queries(kFixtures / "golden" / "correct.jsonl");
        ExperimentConfig cfg;
        cfg.seed = 0;
        ExperimentRunner runner(gpt2().model, gpt2().tokenizer, cfg);
        const std::vector<Experiment> exps{Experiment::FirstHop, Experiment::SecondHop, Experiment::Backpatch};
        r.records = runner.run(exps, r.correct, {});
        return r;
    }();
    return run;
}

Outcome backpatch_contract() {
    const int L = gpt2().model.config().n_layers;
    const auto pairs = backpatch_pairs(L);
    bool pass = static_cast<int>(pairs.size()) == L * (L - 1) / 2;
    for (const auto& [s, t] : pairs) pass = pass && t < s && s < L && t >= 0;

    const auto& q0 = world_queries().front();
    const auto trace = gpt2().model.forward(gpt2().tokenizer.encode(q0.prompt).ids);
    int rejected = 0, requests = 0;
    for (int s = 0; s < L; ++s) {
        for (int t = s; t < L; ++t) {
            ++requests;
            try {
                make_backpatch_plan({q0.id, q0.t1, s, t}, trace);
            } catch (const ContractError&) {
                ++rejected;
            }
        }
    }
    pass = pass && rejected == requests;

    const auto& run = fixture_run();
    std::map<std::string, std::map<Anchor, int>> counts;
    std::set<std::string> solved;
    for (const auto& r : run.records.backpatch) {
        ++counts[r.query][r.anchor];
        if (r.success) solved.insert(r.query);
    }
    for (const auto& q : run.correct)
        for (Anchor a : {Anchor::T1, Anchor::T2}) pass = pass && counts[q.id][a] == static_cast<int>(pairs.size());
    const bool all = run.correct.size() == 10 && solved.size() == run.correct.size();
    char buf[200];
    std::snprintf(buf, sizeof buf, "L=%d, %zu pairs (C(L,2)=%d), %d/%d reversed requests rejected, %zu/%zu correct queries solved",
                  L, pairs.size(), L * (L - 1) / 2, rejected, requests, solved.size(), run.correct.size());
    return {pass && all, buf};
}

Outcome dataset_pipeline() {
    const auto kb = KnowledgeBase::load_dump(kFixtures / "world");
    const auto& tok = gpt2().tokenizer;
    const fs::path dir = fs::temp_directory_path() / "latenthop_acceptance_dataset";
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (int run = 0; run < 2; ++run) {
        const auto build = build_dataset(kb, tok, 0);
        write_queries(dir / ("queries" + std::to_string(run) + ".jsonl"), build.queries);
        std::ofstream(dir / ("manifest" + std::to_string(run) + ".json")) << build.manifest.dump(1);
    }
    const bool identical = slurp(dir / "queries0.jsonl") == slurp(dir / "queries1.jsonl") &&
                           slurp(dir / "manifest0.json") == slurp(dir / "manifest1.json");

    const auto fixtures = read_json(kFixtures / "golden" / "shortcut_fixtures.json");
    const auto& queries = world_queries();
    AnswerOracle oracle(gpt2().model, tok);
    auto decision = [&](const std::string& id) -> std::optional<FilterDecision> {
        for (const auto& q : queries)
            if (q.id == id) return shortcut_filter(oracle, q);
        return std::nullopt;
    };
    int dropped = 0, kept = 0;
    for (const auto& id : fixtures["shortcut"]) {
        const auto d = decision(id.get<std::string>());
        if (d && !d->keep) ++dropped;
    }
    for (const auto& id : fixtures["non_shortcut"]) {
        const auto d = decision(id.get<std::string>());
        if (d && d->keep) ++kept;
    }

    std::vector<std::string> prompts;
    for (const auto& q : queries)
        for (const auto* p : {&q.prompt, &q.first_hop_prompt, &q.second_hop_prompt, &q.prompt_without_e1, &q.prompt_without_r1})
            prompts.push_back(*p);
    oracle.prefetch(prompts);
    std::vector<TwoHopQuery> filtered;
    for (const auto& q : queries)
        if (shortcut_filter(oracle, q).keep) filtered.push_back(q);
    const auto correct = subset_correct(oracle, filtered);
    const auto incorrect = subset_incorrect(oracle, filtered);
    std::set<std::string> ids;
    for (const auto& q : correct) ids.insert(q.id);
    int overlap = 0;
    for (const auto& q : incorrect) overlap += static_cast<int>(ids.count(q.id));

    char buf[220];
    std::snprintf(buf, sizeof buf,
                  "rebuild %s, shortcut fixtures dropped %d/2, non-shortcut kept %d/2, correct %zu / incorrect %zu, overlap %d",
                  identical ? "byte-identical" : "differs", dropped, kept, correct.size(), incorrect.size(), overlap);
    return {identical && dropped == 2 && kept == 2 && overlap == 0 && fixtures["shortcut"].size() == 2 &&
                fixtures["non_shortcut"].size() == 2,
            buf};
}

Outcome report_reproducible() {
    const fs::path root = fs::temp_directory_path() / "latenthop_acceptance_report";
    fs::remove_all(root);
    write_records(root / "records", fixture_run().records);
    const auto first = render_report(read_records(root / "records"), root / "report");
    std::map<std::string, std::string> before;
    for (const auto& f : first.files) before[f] = slurp(root / "report" / f);
    fs::remove_all(root / "report");
    const auto second = render_report(read_records(root / "records"), root / "report");
    int compared = 0, differ = 0;
    for (const auto& f : second.files) {
        if (!f.ends_with(".csv") && !f.ends_with(".md") && !f.ends_with(".json") && !f.ends_with(".jsonl")) continue;
        ++compared;
        if (!before.count(f) || before[f] != slurp(root / "report" / f)) ++differ;
    }
    return {first.files == second.files && differ == 0 && compared > 0,
            std::to_string(compared) + " tables and matrices compared, " + std::to_string(differ) + " differ"};
}

Outcome stage_ordering() {
    const auto summary = summarize(fixture_run().records);
    const auto& s = summary["subsets"]["correct"]["stage_ordering"];
    const auto frozen = read_json(kFixtures / "golden" / "frozen.json");
    const int both = s["both_fired"], ordered = s["ordered"];
    const double rate = both == 0 ? 0.0 : static_cast<double>(ordered) / both;
    const double want = frozen["stage_ordering_pass_rate"];
    const bool same_model = frozen["model_fingerprint"] == gpt2().model.fingerprint();
    char buf[200];
    std::snprintf(buf, sizeof buf, "%d/%d ordered, pass rate %.3f (expected >= 0.80, frozen %.3f)%s", ordered, both, rate,
                  want, same_model ? "" : ", model differs from the frozen fixture");
    return {same_model && both > 0 && rate >= 0.8 && std::abs(rate - want) < 1e-9, buf};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"identity-patch invariance", identity_patch},
        {"golden-logit parity", golden_parity},
        {"knockout correctness", knockout_oracle},
        {"substitution equivalence", substitution},
        {"projection/head parity", projection_parity},
        {"back-patch contract", backpatch_contract},
        {"dataset pipeline determinism", dataset_pipeline},
        {"report reproducibility", report_reproducible},
        {"stage ordering", stage_ordering},
    };
    int failed = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
    return failed == 0 ? 0 : 1;
}
