#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "latenthop/error.hpp"
#include "latenthop/model.hpp"
#include "support.hpp"

using namespace latenthop;
using test_support::max_rel_diff;

namespace {

nlohmann::json golden_prompts() {
    std::ifstream in(test_support::fixtures() / "models" / "golden_tokens.json");
    return nlohmann::json::parse(in)["prompts"];
}

void check_parity(const ModelBundle& b, const std::string& dir, kernels::Backend backend) {
    const auto golden = TensorFile::open(test_support::fixtures() / "models" / dir / "golden.safetensors");
    const auto prompts = golden_prompts();
    REQUIRE(prompts.size() == 20);
    const int L = b.model.config().n_layers;
    for (size_t i = 0; i < prompts.size(); ++i) {
        const auto ids = prompts[i]["ids"].get<std::vector<int32_t>>();
        INFO(prompts[i]["text"].get<std::string>());
        REQUIRE(b.tokenizer.encode(prompts[i]["text"].get<std::string>()).ids == ids);
        char name[64];
        std::snprintf(name, sizeof name, "prompt_%02zu.logits", i);
        const auto ref = golden.read_f32(name);
        std::snprintf(name, sizeof name, "prompt_%02zu.residual_norms", i);
        const auto norms = golden.read_f32(name);
        const auto trace = b.model.forward(ids, {}, {}, backend);
        const size_t V = static_cast<size_t>(b.model.config().vocab_size);
        for (size_t p = 0; p < ids.size(); ++p) {
            REQUIRE(max_rel_diff(trace.logits(static_cast<int>(p)), std::span<const float>(ref).subspan(p * V, V)) < 1e-4);
        }
        for (int l = 0; l < L; ++l) {
            for (size_t p = 0; p < ids.size(); ++p) {
                double n = 0;
                for (float x : trace.residual_in(l, static_cast<int>(p))) n += static_cast<double>(x) * x;
                const double want = norms[static_cast<size_t>(l) * ids.size() + p];
                REQUIRE(std::abs(std::sqrt(n) - want) <= 1e-4 * want);
            }
        }
    }
}

}  // namespace

TEST_CASE("learned-position family matches reference logits and stream norms", "[model][golden]") {
    check_parity(test_support::gpt2(), "gpt2-tiny", kernels::Backend::Parallel);
    check_parity(test_support::gpt2(), "gpt2-tiny", kernels::Backend::Reference);
}

TEST_CASE("rotary gated family matches reference logits and stream norms", "[model][golden]") {
    check_parity(test_support::llama(), "llama-tiny", kernels::Backend::Parallel);
    check_parity(test_support::llama(), "llama-tiny", kernels::Backend::Reference);
}

TEST_CASE("residual accounting: stream grows by exactly the two sublayer updates", "[model]") {
    for (const auto* b : {&test_support::gpt2(), &test_support::llama()}) {
        const auto ids = b->tokenizer.encode("The spouse of the performer of Imagine is").ids;
        const auto trace = b->model.forward(ids, {}, CaptureSpec::everything());
        for (int l = 0; l < trace.n_layers(); ++l) {
            for (int p = 0; p < trace.seq_len(); ++p) {
                const auto a = trace.residual_in(l, p), n = trace.residual_in(l + 1, p);
                const auto ua = trace.sublayer_update(SublayerKind::Attention, l, p);
                const auto um = trace.sublayer_update(SublayerKind::Mlp, l, p);
                for (size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] + ua[i] + um[i] - n[i]) <= 1e-5f * (1 + std::abs(n[i])));
            }
        }
        for (int l = 0; l < trace.n_layers(); ++l)
            for (int h = 0; h < trace.n_heads(); ++h)
                for (int q = 0; q < trace.seq_len(); ++q) {
                    double s = 0;
                    const auto row = trace.attention_row(l, h, q);
                    for (int k = 0; k < trace.seq_len(); ++k) {
                        if (k > q) REQUIRE(row[static_cast<size_t>(k)] == 0.0f);
                        s += row[static_cast<size_t>(k)];
                    }
                    REQUIRE(std::abs(s - 1.0) < 1e-5);
                }
    }
}

TEST_CASE("identity patch leaves logits unchanged", "[model]") {
    const auto& b = test_support::gpt2();
    const auto ids = b.tokenizer.encode("The capital of France is").ids;
    const auto clean = b.model.forward(ids);
    for (int l = 0; l <= b.model.config().n_layers; ++l) {
        const auto v = clean.residual_in(l, 2);
        InterventionPlan plan;
        plan.overwrite({l, 2, {v.begin(), v.end()}});
        const auto patched = b.model.forward(ids, plan);
        for (int p = 0; p < clean.seq_len(); ++p) REQUIRE(max_rel_diff(patched.logits(p), clean.logits(p)) <= 1e-5);
    }
}

TEST_CASE("overwrite after the last layer drives the logits through the head", "[model]") {
    const auto& b = test_support::gpt2();
    const auto ids = b.tokenizer.encode("The capital of France is").ids;
    const auto other = b.model.forward(b.tokenizer.encode("The mayor of Paris is").ids);
    const int L = b.model.config().n_layers;
    const auto v = other.residual_in(L, other.seq_len() - 1);
    InterventionPlan plan;
    plan.overwrite({L, static_cast<int>(ids.size()) - 1, {v.begin(), v.end()}});
    const auto patched = b.model.forward(ids, plan);
    REQUIRE(max_rel_diff(patched.logits(static_cast<int>(ids.size()) - 1), other.logits(other.seq_len() - 1)) < 1e-5);
}

TEST_CASE("plans are validated before any compute", "[model]") {
    const auto& b = test_support::gpt2();
    const auto ids = b.tokenizer.encode("The capital of France is").ids;
    const int L = b.model.config().n_layers;
    const int d = b.model.config().d_model;
    InterventionPlan bad_layer;
    bad_layer.overwrite({L + 1, 0, std::vector<float>(static_cast<size_t>(d))});
    REQUIRE_THROWS_AS(b.model.forward(ids, bad_layer), ContractError);
    InterventionPlan bad_pos;
    bad_pos.overwrite({0, static_cast<int>(ids.size()), std::vector<float>(static_cast<size_t>(d))});
    REQUIRE_THROWS_AS(b.model.forward(ids, bad_pos), ContractError);
    InterventionPlan bad_width;
    bad_width.overwrite({0, 0, std::vector<float>(3)});
    REQUIRE_THROWS_AS(b.model.forward(ids, bad_width), ContractError);
    InterventionPlan future_key;
    future_key.block({0, 1, 2, std::nullopt});
    REQUIRE_THROWS_AS(b.model.forward(ids, future_key), ContractError);
    std::vector<int32_t> too_long(static_cast<size_t>(b.model.config().max_context) + 1, 0);
    REQUIRE_THROWS_AS(b.model.forward(too_long), ContractError);
    std::vector<int32_t> bad_token{0, b.model.config().vocab_size};
    REQUIRE_THROWS_AS(b.model.forward(bad_token), ContractError);
}

TEST_CASE("chunked prefill equals the full forward", "[model]") {
    for (const auto* b : {&test_support::gpt2(), &test_support::llama()}) {
        const auto ids = b->tokenizer.encode("The spouse of the performer of Imagine is").ids;
        CaptureSpec last;
        last.logits = CaptureSpec::Logits::Last;
        const auto full = b->model.forward(ids, {}, last);
        auto state = b->model.prefill(std::span<const int32_t>(ids).first(3));
        b->model.extend(state, std::span<const int32_t>(ids).subspan(3, 2));
        b->model.extend(state, std::span<const int32_t>(ids).subspan(5));
        const auto want = full.logits(static_cast<int>(ids.size()) - 1);
        REQUIRE(std::equal(want.begin(), want.end(), state.last_logits.begin()));
    }
}

TEST_CASE("cached generation equals naive re-running of the growing sequence", "[model]") {
    for (const auto* b : {&test_support::gpt2(), &test_support::llama()}) {
        const auto prompt = b->tokenizer.encode("The performer of Imagine is").ids;
        const auto cached = b->model.generate_ids(prompt, DecodeParams::greedy(12)).front();
        std::vector<int32_t> seq = prompt, naive;
        CaptureSpec last;
        last.logits = CaptureSpec::Logits::Last;
        for (int step = 0; step < 12; ++step) {
            const auto trace = b->model.forward(seq, {}, last);
            const auto logits = trace.logits(static_cast<int>(seq.size()) - 1);
            const auto next = static_cast<int32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
            if (b->model.config().eos_token_id && next == *b->model.config().eos_token_id) break;
            naive.push_back(next);
            seq.push_back(next);
        }
        REQUIRE(cached == naive);
    }
}

TEST_CASE("interventions in generation match the naive forward on the prompt", "[model]") {
    const auto& b = test_support::gpt2();
    const auto prompt = b.tokenizer.encode("The spouse of the performer of Imagine is").ids;
    InterventionPlan plan;
    plan.block({2, static_cast<int>(prompt.size()) - 1, 5, std::nullopt});
    plan.overwrite({1, 3, std::vector<float>(static_cast<size_t>(b.model.config().d_model), 0.5f)});
    CaptureSpec last;
    last.logits = CaptureSpec::Logits::Last;
    const auto trace = b.model.forward(prompt, plan, last);
    const auto logits = trace.logits(static_cast<int>(prompt.size()) - 1);
    const auto first = static_cast<int32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    const auto gen = b.model.generate_ids(prompt, DecodeParams::greedy(1), plan).front();
    REQUIRE(gen.size() <= 1);
    if (!gen.empty()) REQUIRE(gen[0] == first);
}

TEST_CASE("seeded sampling is reproducible and the seed matters", "[model]") {
    const auto& b = test_support::gpt2();
    const auto prompt = b.tokenizer.encode(
        "Syria: Syria is a country in the Middle East, Leonardo DiCaprio: Leonardo DiCaprio is an American actor, "
        "Samsung: Samsung is a South Korean multinational corporation, x").ids;
    const auto a = b.model.generate_ids(prompt, DecodeParams::sampled(3, 42));
    const auto c = b.model.generate_ids(prompt, DecodeParams::sampled(3, 42));
    REQUIRE(a == c);
    REQUIRE(a.size() == 3);
    bool differs = false;
    for (uint64_t s = 0; s < 8 && !differs; ++s) differs = b.model.generate_ids(prompt, DecodeParams::sampled(3, s)) != a;
    REQUIRE(differs);
}

TEST_CASE("generation that would overflow the context is rejected up front", "[model]") {
    const auto& b = test_support::gpt2();
    std::vector<int32_t> prompt(static_cast<size_t>(b.model.config().max_context) - 5, 10);
    REQUIRE_THROWS_AS(b.model.generate_ids(prompt, DecodeParams::greedy(20)), ContractError);
    REQUIRE_NOTHROW(b.model.generate_ids(prompt, DecodeParams::greedy(5)));
}

TEST_CASE("decode params are validated", "[model]") {
    REQUIRE_THROWS_AS(DecodeParams::sampled(0, 1).validate(), ContractError);
    REQUIRE_THROWS_AS(DecodeParams::sampled(3, 1, 0.0f).validate(), ContractError);
    DecodeParams two_greedy = DecodeParams::greedy();
    two_greedy.n_samples = 2;
    REQUIRE_THROWS_AS(two_greedy.validate(), ContractError);
    DecodeParams negative = DecodeParams::greedy();
    negative.max_new_tokens = -1;
    REQUIRE_THROWS_AS(negative.validate(), ContractError);
}

TEST_CASE("extend rejects plans that reach into the processed prefix", "[model]") {
    const auto& b = test_support::gpt2();
    const auto ids = b.tokenizer.encode("The capital of France is").ids;
    auto state = b.model.prefill(std::span<const int32_t>(ids).first(3));
    InterventionPlan plan;
    plan.overwrite({0, 1, std::vector<float>(static_cast<size_t>(b.model.config().d_model))});
    REQUIRE_THROWS_AS(b.model.extend(state, std::span<const int32_t>(ids).subspan(3), plan), ContractError);
}

TEST_CASE("fingerprints distinguish weights with the same shape", "[model]") {
    const auto a = test_support::random_gpt2(2, 16, 2, 40, 48, 1);
    const auto b = test_support::random_gpt2(2, 16, 2, 40, 48, 2);
    const auto a2 = test_support::random_gpt2(2, 16, 2, 40, 48, 1);
    REQUIRE(a.config().fingerprint() == b.config().fingerprint());
    REQUIRE(a.fingerprint() != b.fingerprint());
    REQUIRE(a.fingerprint() == a2.fingerprint());
    REQUIRE(a.fingerprint().size() == 16);
}
