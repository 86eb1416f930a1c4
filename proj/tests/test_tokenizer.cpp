#include <catch_amalgamated.hpp>

#include <fstream>

#include <nlohmann/json.hpp>

#include "latenthop/error.hpp"
#include "latenthop/tokenizer.hpp"
#include "support.hpp"

using namespace latenthop;

namespace {

const BpeTokenizer& tok() { return test_support::gpt2().tokenizer; }

nlohmann::json goldens() {
    std::ifstream in(test_support::fixtures() / "models" / "golden_tokens.json");
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("encode matches the reference tokenizer ids and offsets", "[tokenizer]") {
    const auto g = goldens();
    REQUIRE(g["tokenizer"].size() >= 20);
    for (const auto& c : g["tokenizer"]) {
        const std::string text = c["text"];
        INFO(text);
        const auto seq = tok().encode(text);
        REQUIRE(seq.ids == c["ids"].get<std::vector<int32_t>>());
        const auto offsets = c["offsets"].get<std::vector<std::vector<size_t>>>();
        REQUIRE(seq.offsets.size() == offsets.size());
        for (size_t i = 0; i < offsets.size(); ++i) {
            // The reference reports character offsets; the fixture texts are ASCII.
            CHECK(seq.offsets[i].end == offsets[i][1]);
        }
    }
}

TEST_CASE("decode inverts encode", "[tokenizer]") {
    for (const std::string text : {"The spouse of the performer of Imagine is", "  two  spaces and  more ",
                                   "Paris, France: a city.", "", "x"}) {
        REQUIRE(tok().decode(tok().encode(text)) == text);
    }
}

TEST_CASE("offsets tile the input", "[tokenizer]") {
    const std::string text = "Syria: Syria is a country in the Middle East, x";
    const auto seq = tok().encode(text);
    size_t at = 0;
    for (const auto& s : seq.offsets) {
        REQUIRE(s.begin == at);
        at = s.end;
    }
    REQUIRE(at == text.size());
}

TEST_CASE("special tokens are matched whole", "[tokenizer]") {
    const auto eos = tok().eos_id();
    REQUIRE(eos.has_value());
    const auto seq = tok().encode("Paris<|endoftext|>");
    REQUIRE(seq.ids.back() == *eos);
}

TEST_CASE("pretokenization follows the byte-level pattern", "[tokenizer]") {
    const std::string text = "Hello world's  42 times!!";
    std::vector<std::string> pieces;
    for (const auto& s : pretokenize(text)) pieces.push_back(text.substr(s.begin, s.end - s.begin));
    REQUIRE(pieces == std::vector<std::string>{"Hello", " world", "'s", " ", " 42", " times", "!!"});
}

TEST_CASE("unrepresentable text names the offending character", "[tokenizer]") {
    // Vocabulary with only the bytes 'a' and 'b'.
    const auto t = BpeTokenizer::from_strings(R"({"a":0,"b":1})", "#version: 0.2\n");
    REQUIRE(t.encode("ab").ids == std::vector<int32_t>{0, 1});
    try {
        t.encode("abc");
        FAIL("expected TokenizeError");
    } catch (const TokenizeError& e) {
        REQUIRE(std::string(e.what()).find("U+0063") != std::string::npos);
    }
}

TEST_CASE("bytes missing from a trained vocabulary are rejected, not dropped", "[tokenizer]") {
    REQUIRE_THROWS_WITH(tok().encode("a\tb"), Catch::Matchers::ContainsSubstring("U+0009"));
}

TEST_CASE("missing tokenizer files are load errors", "[tokenizer]") {
    REQUIRE_THROWS_AS(BpeTokenizer::load("/nonexistent/vocab.json", "/nonexistent/merges.txt"), LoadError);
}
