#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace latenthop {

/// Byte span [begin, end) of a token in the UTF-8 source text.
struct Span {
    size_t begin = 0;
    size_t end = 0;
    bool operator==(const Span&) const = default;
};

struct TokenSequence {
    std::vector<int32_t> ids;
    std::vector<Span> offsets;

    size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

/// Byte-level BPE tokenizer reading a GPT-2 style vocab.json + merges.txt pair.
class BpeTokenizer {
public:
    static BpeTokenizer load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);
    static BpeTokenizer from_strings(std::string_view vocab_json, std::string_view merges_txt);

    /// Throws TokenizeError naming the first character the vocabulary cannot represent.
    TokenSequence encode(std::string_view text) const;
    std::string decode(std::span<const int32_t> ids) const;
    std::string decode(const TokenSequence& seq) const { return decode(seq.ids); }

    /// Decoded text of a single token.
    std::string token_text(int32_t id) const;
    /// Id of a token given its vocabulary (byte-mapped) spelling.
    std::optional<int32_t> find_token(std::string_view vocab_spelling) const;

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    std::optional<int32_t> eos_id() const { return eos_id_; }

private:
    std::vector<std::string> bpe(std::string_view mapped_word) const;
    void encode_plain(std::string_view text, size_t base, TokenSequence& out) const;

    std::unordered_map<std::string, int32_t> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> merge_ranks_;  // "left right" -> rank
    std::vector<std::string> special_tokens_;           // e.g. <|endoftext|>
    std::optional<int32_t> eos_id_;
};

/// Splits text the way the GPT-2 pre-tokenization pattern does. Returns byte spans.
std::vector<Span> pretokenize(std::string_view text);

}  // namespace latenthop
