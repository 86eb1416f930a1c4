#include <catch_amalgamated.hpp>

#include <random>

#include "latenthop/error.hpp"
#include "latenthop/interventions.hpp"
#include "support.hpp"

using namespace latenthop;

TEST_CASE("plan merge rejects conflicting overwrites and dedups blocks", "[plan]") {
    InterventionPlan a, b;
    a.overwrite({1, 2, {1.0f}}).block({0, 3, 1, std::nullopt});
    b.overwrite({1, 3, {2.0f}}).block({0, 3, 1, std::nullopt}).block({1, 3, 1, 0});
    const auto m = a.merged(b);
    REQUIRE(m.overwrites().size() == 2);
    REQUIRE(m.blocks().size() == 2);
    InterventionPlan c;
    c.overwrite({1, 2, {3.0f}});
    REQUIRE_THROWS_AS(a.merged(c), ContractError);
}

TEST_CASE("plan JSONL round trip", "[plan]") {
    InterventionPlan p;
    p.overwrite({2, 4, {0.25f, -1.5f, 3.0f}}).block({1, 4, 2, std::nullopt}).block({0, 4, 0, 3});
    const auto back = InterventionPlan::from_jsonl(p.to_jsonl());
    REQUIRE(back == p);
    REQUIRE(InterventionPlan::from_jsonl("").empty());
    REQUIRE_THROWS(InterventionPlan::from_jsonl("{\"op\":\"explode\"}\n"));
}

TEST_CASE("back-patch pairs are exactly the strictly lower pairs", "[interventions]") {
    for (int L : {1, 2, 3, 8, 32}) {
        const auto pairs = backpatch_pairs(L);
        REQUIRE(pairs.size() == static_cast<size_t>(L * (L - 1) / 2));
        for (auto [s, t] : pairs) {
            REQUIRE(t < s);
            REQUIRE(t >= 0);
            REQUIRE(s < L);
        }
    }
    REQUIRE(backpatch_pairs(2) == std::vector<std::pair<int, int>>{{1, 0}});
}

TEST_CASE("back-patch plans reject target >= source", "[interventions]") {
    const auto& b = test_support::gpt2();
    const auto ids = b.tokenizer.encode("The spouse of the performer of Imagine is").ids;
    const auto trace = b.model.forward(ids);
    REQUIRE_THROWS_AS(make_backpatch_plan({"q", 3, 2, 2}, trace), ContractError);
    REQUIRE_THROWS_AS(make_backpatch_plan({"q", 3, 2, 5}, trace), ContractError);
    const auto plan = make_backpatch_plan({"q", 3, 5, 2}, trace);
    REQUIRE(plan.overwrites().size() == 1);
    REQUIRE(plan.overwrites()[0].layer == 2);
    const auto v = trace.residual_in(5, 3);
    REQUIRE(std::equal(v.begin(), v.end(), plan.overwrites()[0].values.begin()));
}

TEST_CASE("knockout windows are start-anchored and truncated", "[interventions]") {
    const auto w = sliding_windows(8, 7);
    REQUIRE(w.size() == 8);
    REQUIRE(w[0] == LayerWindow{0, 6});
    REQUIRE(w[1] == LayerWindow{1, 7});
    REQUIRE(w[7] == LayerWindow{7, 7});
    REQUIRE(sliding_windows(3, 7)[0] == LayerWindow{0, 2});
    REQUIRE_THROWS_AS(sliding_windows(8, 0), ContractError);
}

TEST_CASE("knockout plans", "[interventions]") {
    const auto& cfg = test_support::gpt2().model.config();
    const auto plan = make_knockout_plan({9, 4, {2, 5}, std::nullopt}, cfg);
    REQUIRE(plan.blocks().size() == 4);
    for (int i = 0; i < 4; ++i) REQUIRE(plan.blocks()[static_cast<size_t>(i)] == AttentionBlock{2 + i, 9, 4, std::nullopt});
    REQUIRE(make_knockout_plan({9, 4, {3, 2}, std::nullopt}, cfg).empty());
    REQUIRE_THROWS_AS(make_knockout_plan({9, 4, {0, cfg.n_layers}, std::nullopt}, cfg), ContractError);
    REQUIRE_THROWS_AS(make_knockout_plan({4, 9, {0, 1}, std::nullopt}, cfg), ContractError);
    REQUIRE_THROWS_AS(make_knockout_plan({9, 4, {0, 1}, cfg.n_heads}, cfg), ContractError);
}

TEST_CASE("an empty knockout window is the empty plan", "[interventions]") {
    const auto& b = test_support::gpt2();
    const auto ids = b.tokenizer.encode("The spouse of the performer of Imagine is").ids;
    const auto plan = make_knockout_plan({static_cast<int>(ids.size()) - 1, 2, {4, 3}, std::nullopt}, b.model.config());
    REQUIRE(plan == InterventionPlan{});
    const auto a = b.model.forward(ids, plan), c = b.model.forward(ids);
    const auto la = a.logits(static_cast<int>(ids.size()) - 1), lc = c.logits(static_cast<int>(ids.size()) - 1);
    REQUIRE(std::equal(la.begin(), la.end(), lc.begin()));
}

TEST_CASE("blocked edges get weight zero and the rest renormalize", "[interventions]") {
    const auto& b = test_support::gpt2();
    const auto ids = b.tokenizer.encode("The spouse of the performer of Imagine is").ids;
    const int T = static_cast<int>(ids.size());
    const auto clean = b.model.forward(ids, {}, CaptureSpec::everything());
    InterventionPlan plan;
    plan.block({0, T - 1, 2, std::nullopt});
    const auto knocked = b.model.forward(ids, plan, CaptureSpec::everything());
    for (int h = 0; h < clean.n_heads(); ++h) {
        // Layer 0 inputs are unchanged, so the scores are too: renormalize the clean row.
        const auto row = clean.attention_row(0, h, T - 1);
        const auto got = knocked.attention_row(0, h, T - 1);
        const double rest = 1.0 - row[2];
        for (int k = 0; k < T; ++k) {
            if (k == 2) {
                REQUIRE(got[2] == 0.0f);
            } else {
                REQUIRE(std::abs(got[static_cast<size_t>(k)] - row[static_cast<size_t>(k)] / rest) <= 1e-6);
            }
        }
    }
}

TEST_CASE("record_hidden reads the residual stream", "[interventions]") {
    const auto& b = test_support::gpt2();
    const auto ids = b.tokenizer.encode("The capital of France is").ids;
    const auto trace = b.model.forward(ids);
    const auto v = record_hidden(b.model, ids, 3, 1, "p");
    const auto want = trace.residual_in(3, 1);
    REQUIRE(std::equal(want.begin(), want.end(), v.values.begin()));
    REQUIRE(v.layer == 3);
    REQUIRE(v.position == 1);
    REQUIRE_THROWS_AS(record_hidden(b.model, ids, b.model.config().n_layers + 1, 0), ContractError);
    REQUIRE_THROWS_AS(record_hidden(b.model, ids, 0, static_cast<int>(ids.size())), ContractError);
}

TEST_CASE("patch plans check coordinates", "[interventions]") {
    const auto& cfg = test_support::gpt2().model.config();
    HiddenVector v{std::vector<float>(static_cast<size_t>(cfg.d_model)), "p", 0, 0};
    REQUIRE(make_patch_plan({{"p", 0, 0}, {"t", 2, 4}, v}, cfg, 5).overwrites().size() == 1);
    REQUIRE_THROWS_AS(make_patch_plan({{"p", 0, 0}, {"t", 2, 5}, v}, cfg, 5), ContractError);
    REQUIRE_THROWS_AS(make_patch_plan({{"p", 0, 0}, {"t", cfg.n_layers + 1, 1}, v}, cfg, 5), ContractError);
    v.values.pop_back();
    REQUIRE_THROWS_AS(make_patch_plan({{"p", 0, 0}, {"t", 2, 1}, v}, cfg, 5), ContractError);
}
