#include <cstdio>
#include "latenthop/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <climits>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latenthop/error.hpp"

namespace latenthop {

namespace {

std::string utf8_encode(uint32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        s.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        s.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
    return s;
}

// Decodes one code point starting at text[i]; returns its byte length.
size_t utf8_next(std::string_view text, size_t i, uint32_t& cp) {
    const auto c = static_cast<unsigned char>(text[i]);
    size_t len = 1;
    if (c < 0x80) {
        cp = c;
    } else if ((c >> 5) == 0x6) {
        cp = c & 0x1f;
        len = 2;
    } else if ((c >> 4) == 0xe) {
        cp = c & 0x0f;
        len = 3;
    } else if ((c >> 3) == 0x1e) {
        cp = c & 0x07;
        len = 4;
    } else {
        cp = c;  // stray continuation byte, treat as a single unit
        return 1;
    }
    if (i + len > text.size()) {
        cp = c;
        return 1;
    }
    for (size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(text[i + k]) & 0x3f);
    return len;
}

// GPT-2 reversible byte -> printable code point table.
struct ByteTable {
    std::array<std::string, 256> byte_to_str;
    std::unordered_map<uint32_t, uint8_t> cp_to_byte;

    ByteTable() {
        std::array<int, 256> cps{};
        std::array<bool, 256> direct{};
        for (int b = '!'; b <= '~'; ++b) direct[b] = true;
        for (int b = 0xa1; b <= 0xac; ++b) direct[b] = true;
        for (int b = 0xae; b <= 0xff; ++b) direct[b] = true;
        int n = 0;
        for (int b = 0; b < 256; ++b) cps[b] = direct[b] ? b : 256 + n++;
        for (int b = 0; b < 256; ++b) {
            byte_to_str[b] = utf8_encode(static_cast<uint32_t>(cps[b]));
            cp_to_byte[static_cast<uint32_t>(cps[b])] = static_cast<uint8_t>(b);
        }
    }
};

const ByteTable& byte_table() {
    static const ByteTable table;
    return table;
}

enum class CharClass { Letter, Number, Space, Other };

// ASCII follows the pattern's Unicode classes exactly; non-ASCII code points
// are treated as letters, which covers Latin-script names.
CharClass classify(uint32_t cp) {
    if (cp < 0x80) {
        const auto c = static_cast<unsigned char>(cp);
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return CharClass::Letter;
        if (c >= '0' && c <= '9') return CharClass::Number;
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') return CharClass::Space;
        return CharClass::Other;
    }
    if (cp == 0x85 || cp == 0xa0 || cp == 0x2028 || cp == 0x2029 || (cp >= 0x2000 && cp <= 0x200a) ||
        cp == 0x3000) {
        return CharClass::Space;
    }
    return CharClass::Letter;
}

}  // namespace

std::vector<Span> pretokenize(std::string_view text) {
    std::vector<Span> out;
    size_t i = 0;
    const size_t n = text.size();
    auto class_at = [&](size_t pos, size_t& len) {
        uint32_t cp = 0;
        len = utf8_next(text, pos, cp);
        return classify(cp);
    };
    auto run_of = [&](size_t pos, CharClass cls) {
        while (pos < n) {
            size_t len = 0;
            if (class_at(pos, len) != cls) break;
            pos += len;
        }
        return pos;
    };
    static constexpr std::array<std::string_view, 7> kContractions = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};

    while (i < n) {
        if (text[i] == '\'') {
            bool matched = false;
            for (auto c : kContractions) {
                if (text.substr(i, c.size()) == c) {
                    out.push_back({i, i + c.size()});
                    i += c.size();
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        size_t len = 0;
        CharClass cls = class_at(i, len);
        size_t start = i;
        if (text[i] == ' ' && i + 1 < n) {
            size_t nlen = 0;
            CharClass next = class_at(i + 1, nlen);
            if (next != CharClass::Space) {
                size_t end = run_of(i + 1, next);
                out.push_back({start, end});
                i = end;
                continue;
            }
        }
        if (cls != CharClass::Space) {
            size_t end = run_of(i, cls);
            out.push_back({start, end});
            i = end;
            continue;
        }
        // Whitespace run: leave the last character for a following word.
        size_t end = i;
        size_t last_len = 0;
        while (end < n) {
            size_t l = 0;
            if (class_at(end, l) != CharClass::Space) break;
            last_len = l;
            end += l;
        }
        if (end < n && end - start > last_len) end -= last_len;
        out.push_back({start, end});
        i = end;
    }
    return out;
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt) {
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw LoadError("cannot open tokenizer file " + p.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    return from_strings(slurp(vocab_json), slurp(merges_txt));
}

BpeTokenizer BpeTokenizer::from_strings(std::string_view vocab_json, std::string_view merges_txt) {
    BpeTokenizer t;
    nlohmann::json vocab;
    try {
        vocab = nlohmann::json::parse(vocab_json);
    } catch (const nlohmann::json::parse_error& e) {
        throw LoadError(std::string("vocabulary is not valid JSON: ") + e.what());
    }
    int32_t max_id = -1;
    for (const auto& [tok, id] : vocab.items()) max_id = std::max(max_id, id.get<int32_t>());
    t.id_to_token_.assign(static_cast<size_t>(max_id + 1), std::string());
    for (const auto& [tok, id] : vocab.items()) {
        const auto i = id.get<int32_t>();
        t.token_to_id_[tok] = i;
        t.id_to_token_[static_cast<size_t>(i)] = tok;
        if (tok.size() > 4 && tok.starts_with("<|") && tok.ends_with("|>")) t.special_tokens_.push_back(tok);
    }
    std::sort(t.special_tokens_.begin(), t.special_tokens_.end());
    if (auto it = t.token_to_id_.find("<|endoftext|>"); it != t.token_to_id_.end()) t.eos_id_ = it->second;

    std::istringstream in{std::string(merges_txt)};
    std::string line;
    int rank = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.starts_with("#version")) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw LoadError("malformed merges line: '" + line + "'");
        t.merge_ranks_.emplace(line, rank++);
    }
    return t;
}

std::vector<std::string> BpeTokenizer::bpe(std::string_view mapped_word) const {
    // Split into code points (each is one mapped byte).
    std::vector<std::string> parts;
    for (size_t i = 0; i < mapped_word.size();) {
        uint32_t cp = 0;
        size_t len = utf8_next(mapped_word, i, cp);
        parts.emplace_back(mapped_word.substr(i, len));
        i += len;
    }
    while (parts.size() > 1) {
        int best_rank = INT_MAX;
        size_t best = 0;
        for (size_t k = 0; k + 1 < parts.size(); ++k) {
            auto it = merge_ranks_.find(parts[k] + " " + parts[k + 1]);
            if (it != merge_ranks_.end() && it->second < best_rank) {
                best_rank = it->second;
                best = k;
            }
        }
        if (best_rank == INT_MAX) break;
        const std::string left = parts[best];
        const std::string right = parts[best + 1];
        std::vector<std::string> merged;
        merged.reserve(parts.size());
        for (size_t k = 0; k < parts.size();) {
            if (k + 1 < parts.size() && parts[k] == left && parts[k + 1] == right) {
                merged.push_back(left + right);
                k += 2;
            } else {
                merged.push_back(parts[k]);
                ++k;
            }
        }
        parts = std::move(merged);
    }
    return parts;
}

void BpeTokenizer::encode_plain(std::string_view text, size_t base, TokenSequence& out) const {
    const auto& table = byte_table();
    for (const Span& piece : pretokenize(text)) {
        std::string mapped;
        for (size_t b = piece.begin; b < piece.end; ++b) mapped += table.byte_to_str[static_cast<unsigned char>(text[b])];
        size_t cursor = base + piece.begin;
        for (const std::string& sym : bpe(mapped)) {
            // Each mapped code point stands for exactly one source byte.
            size_t n_bytes = 0;
            for (size_t i = 0; i < sym.size();) {
                uint32_t cp = 0;
                i += utf8_next(sym, i, cp);
                ++n_bytes;
            }
            auto it = token_to_id_.find(sym);
            if (it == token_to_id_.end()) {
                // Name the source character that has no byte symbol in the vocabulary.
                const size_t local = cursor - base;
                uint32_t cp = 0;
                size_t len = utf8_next(text, local, cp);
                char code[16];
                std::snprintf(code, sizeof code, "U+%04X", cp);
                throw TokenizeError("character '" + std::string(text.substr(local, len)) + "' (" + code + ") at byte " +
                                    std::to_string(cursor) + " is not representable by the vocabulary");
            }
            out.ids.push_back(it->second);
            out.offsets.push_back({cursor, cursor + n_bytes});
            cursor += n_bytes;
        }
    }
}

TokenSequence BpeTokenizer::encode(std::string_view text) const {
    TokenSequence out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t next = std::string_view::npos;
        const std::string* which = nullptr;
        for (const auto& special : special_tokens_) {
            size_t f = text.find(special, pos);
            if (f < next) {
                next = f;
                which = &special;
            }
        }
        const size_t stop = (next == std::string_view::npos) ? text.size() : next;
        if (stop > pos) encode_plain(text.substr(pos, stop - pos), pos, out);
        if (which == nullptr) break;
        out.ids.push_back(token_to_id_.at(*which));
        out.offsets.push_back({next, next + which->size()});
        pos = next + which->size();
    }
    return out;
}

std::string BpeTokenizer::token_text(int32_t id) const {
    if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size()) {
        throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    }
    const std::string& tok = id_to_token_[static_cast<size_t>(id)];
    if (std::binary_search(special_tokens_.begin(), special_tokens_.end(), tok)) return tok;
    const auto& table = byte_table();
    std::string out;
    for (size_t i = 0; i < tok.size();) {
        uint32_t cp = 0;
        i += utf8_next(tok, i, cp);
        auto it = table.cp_to_byte.find(cp);
        if (it == table.cp_to_byte.end()) {
            out += utf8_encode(cp);  // not a byte symbol; keep verbatim
        } else {
            out.push_back(static_cast<char>(it->second));
        }
    }
    return out;
}

std::string BpeTokenizer::decode(std::span<const int32_t> ids) const {
    std::string out;
    for (int32_t id : ids) out += token_text(id);
    return out;
}

std::optional<int32_t> BpeTokenizer::find_token(std::string_view vocab_spelling) const {
    auto it = token_to_id_.find(std::string(vocab_spelling));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
}

}  // namespace latenthop
