#include "latenthop/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "latenthop/error.hpp"

namespace latenthop {

namespace fs = std::filesystem;
using nlohmann::json;

std::string capitalize(std::string text) {
    if (!text.empty() && text[0] >= 'a' && text[0] <= 'z') text[0] = static_cast<char>(text[0] - 'a' + 'A');
    return text;
}

std::string RelationTemplate::render(std::string_view subject) const {
    const size_t s = slot();
    if (s == std::string::npos) throw ContractError("relation '" + id + "' has no subject slot");
    return phrase.substr(0, s) + std::string(subject) + phrase.substr(s + 2);
}

void RelationTemplate::validate() const {
    const size_t s = phrase.find("{}");
    if (s == std::string::npos || phrase.find("{}", s + 2) != std::string::npos) {
        throw FormatError("relation '" + id + "' template must contain exactly one {} slot: " + phrase);
    }
    if (bare.empty()) throw FormatError("relation '" + id + "' has no bare phrase");
}

namespace {

std::string str_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string()) throw FormatError(where + ": missing string field '" + key + "'");
    return j[key].get<std::string>();
}

template <typename F>
void for_each_record(const fs::path& path, F&& f) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(number);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(where + ": " + e.what());
        }
        if (!j.is_object()) throw FormatError(where + ": record is not an object");
        f(j, where);
    }
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.filename().string() + ": " + e.what());
    }
}

}  // namespace

KnowledgeBase KnowledgeBase::load_dump(const fs::path& dir) {
    KnowledgeBase kb;
    const json types = read_json(dir / "types.json");
    try {
        kb.set_types(types.at("types").get<std::vector<std::string>>(),
                     types.at("bridge_types").get<std::vector<std::string>>());
    } catch (const json::exception& e) {
        throw FormatError("types.json: " + std::string(e.what()));
    }
    const json relations = read_json(dir / "relations.json");
    if (!relations.contains("relations") || !relations["relations"].is_array()) {
        throw FormatError("relations.json: missing 'relations' array");
    }
    for (const auto& r : relations["relations"]) {
        kb.add_relation({str_field(r, "id", "relations.json"), str_field(r, "template", "relations.json"),
                         str_field(r, "bare", "relations.json")});
    }
    for_each_record(dir / "entities.jsonl", [&](const json& j, const std::string& where) {
        EntityRecord e;
        e.id = str_field(j, "id", where);
        e.name = str_field(j, "name", where);
        e.type = str_field(j, "type", where);
        e.description = j.value("description", "");
        std::vector<std::string> aliases;
        if (j.contains("aliases")) {
            if (!j["aliases"].is_array()) throw FormatError(where + ": 'aliases' must be an array");
            for (const auto& a : j["aliases"]) {
                if (!a.is_string()) throw FormatError(where + ": alias is not a string");
                aliases.push_back(a.get<std::string>());
            }
        }
        e.aliases = EntityAliasSet::of(e.name, aliases);
        try {
            kb.add_entity(std::move(e));
        } catch (const std::exception& ex) {
            throw FormatError(where + ": " + ex.what());
        }
    });
    for_each_record(dir / "triplets.jsonl", [&](const json& j, const std::string& where) {
        try {
            kb.add_triplet({str_field(j, "subject", where), str_field(j, "relation", where),
                            str_field(j, "object", where)});
        } catch (const std::exception& ex) {
            const std::string msg = ex.what();
            throw FormatError(msg.starts_with(where) ? msg : where + ": " + msg);
        }
    });
    return kb;
}

void KnowledgeBase::set_types(std::vector<std::string> types, std::vector<std::string> bridge_types) {
    for (const auto& b : bridge_types) {
        if (std::find(types.begin(), types.end(), b) == types.end()) {
            throw FormatError("bridge type '" + b + "' is not a registered type");
        }
    }
    types_ = std::move(types);
    bridge_types_ = std::move(bridge_types);
}

void KnowledgeBase::add_relation(RelationTemplate relation) {
    relation.validate();
    const std::string id = relation.id;
    if (!relations_.emplace(id, std::move(relation)).second) throw FormatError("duplicate relation '" + id + "'");
}

void KnowledgeBase::add_entity(EntityRecord entity) {
    if (entity.name.empty()) throw FormatError("entity '" + entity.id + "' has an empty name");
    if (std::find(types_.begin(), types_.end(), entity.type) == types_.end()) {
        throw FormatError("entity '" + entity.id + "' has unregistered type '" + entity.type + "'");
    }
    entity.aliases.validate();
    const std::string id = entity.id;
    if (!entities_.emplace(id, std::move(entity)).second) throw FormatError("duplicate entity '" + id + "'");
}

void KnowledgeBase::add_triplet(FactTriplet triplet) {
    if (triplet.subject == triplet.object) throw FormatError("triplet subject equals object: " + triplet.subject);
    if (!relations_.count(triplet.relation)) throw FormatError("unknown relation '" + triplet.relation + "'");
    if (!entities_.count(triplet.subject)) throw FormatError("unknown subject '" + triplet.subject + "'");
    if (!entities_.count(triplet.object)) throw FormatError("unknown object '" + triplet.object + "'");
    triplets_.push_back(std::move(triplet));
}

const EntityRecord& KnowledgeBase::entity(const std::string& id) const {
    auto it = entities_.find(id);
    if (it == entities_.end()) throw ContractError("unknown entity '" + id + "'");
    return it->second;
}

const RelationTemplate& KnowledgeBase::relation(const std::string& id) const {
    auto it = relations_.find(id);
    if (it == relations_.end()) throw ContractError("no template for relation '" + id + "'");
    return it->second;
}

bool KnowledgeBase::is_bridge_type(const std::string& type) const {
    return std::find(bridge_types_.begin(), bridge_types_.end(), type) != bridge_types_.end();
}

json TwoHopQuery::to_json() const {
    return json{{"id", id},
                {"e1", e1},
                {"r1", r1},
                {"e2", e2},
                {"r2", r2},
                {"e3", e3},
                {"e1_name", e1_name},
                {"e2_name", e2_aliases.canonical},
                {"e2_aliases", e2_aliases.aliases},
                {"e3_name", e3_aliases.canonical},
                {"e3_aliases", e3_aliases.aliases},
                {"prompt", prompt},
                {"first_hop_prompt", first_hop_prompt},
                {"second_hop_prompt", second_hop_prompt},
                {"prompt_without_e1", prompt_without_e1},
                {"prompt_without_r1", prompt_without_r1},
                {"t1", t1},
                {"t2", t2},
                {"bridge_type", bridge_type}};
}

TwoHopQuery TwoHopQuery::from_json(const json& j) {
    TwoHopQuery q;
    try {
        q.id = j.at("id");
        q.e1 = j.at("e1");
        q.r1 = j.at("r1");
        q.e2 = j.at("e2");
        q.r2 = j.at("r2");
        q.e3 = j.at("e3");
        q.e1_name = j.at("e1_name");
        q.e2_aliases = EntityAliasSet::of(j.at("e2_name"), j.at("e2_aliases").get<std::vector<std::string>>());
        q.e3_aliases = EntityAliasSet::of(j.at("e3_name"), j.at("e3_aliases").get<std::vector<std::string>>());
        q.prompt = j.at("prompt");
        q.first_hop_prompt = j.at("first_hop_prompt");
        q.second_hop_prompt = j.at("second_hop_prompt");
        q.prompt_without_e1 = j.at("prompt_without_e1");
        q.prompt_without_r1 = j.at("prompt_without_r1");
        q.t1 = j.at("t1");
        q.t2 = j.at("t2");
        q.bridge_type = j.at("bridge_type");
    } catch (const json::exception& e) {
        throw FormatError(std::string("query record: ") + e.what());
    }
    if (!(q.t1 < q.t2)) throw FormatError("query " + q.id + ": t1 must precede t2");
    return q;
}

ComposeResult compose_two_hop(const KnowledgeBase& kb, const BpeTokenizer& tokenizer, const FactTriplet& a,
                              const FactTriplet& b) {
    if (a.object != b.subject) {
        throw ContractError("facts do not compose: '" + a.object + "' is not '" + b.subject + "'");
    }
    const auto& r1 = kb.relation(a.relation);
    const auto& r2 = kb.relation(b.relation);
    const auto& e1 = kb.entity(a.subject);
    const auto& e2 = kb.entity(a.object);
    const auto& e3 = kb.entity(b.object);

    TwoHopQuery q;
    q.e1 = e1.id;
    q.e2 = e2.id;
    q.e3 = e3.id;
    q.r1 = r1.id;
    q.r2 = r2.id;
    q.id = q.e1 + "|" + q.r1 + "|" + q.e2 + "|" + q.r2 + "|" + q.e3;
    q.e1_name = e1.name;
    q.e2_aliases = e2.aliases;
    q.e3_aliases = e3.aliases;
    q.bridge_type = e2.type;
    q.prompt = capitalize(r2.render(r1.render(e1.name))) + " is";
    q.first_hop_prompt = capitalize(r1.render(e1.name)) + " is";
    q.second_hop_prompt = capitalize(r2.render(e2.name)) + " is";
    q.prompt_without_e1 = capitalize(r2.render(r1.bare)) + " is";
    q.prompt_without_r1 = capitalize(r2.render(e1.name)) + " is";

    const size_t e1_begin = r2.slot() + r1.slot();
    const size_t e1_end = e1_begin + e1.name.size();
    const auto seq = tokenizer.encode(q.prompt);
    int t1 = -1;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (seq.offsets[i].begin < e1_end && seq.offsets[i].end > e1_end) return {std::nullopt, "t1_merges_with_following_text"};
        if (seq.offsets[i].end == e1_end) t1 = static_cast<int>(i);
    }
    if (t1 < 0) return {std::nullopt, "t1_undefined"};
    q.t1 = t1;
    q.t2 = static_cast<int>(seq.size()) - 1;
    if (q.t1 >= q.t2) return {std::nullopt, "t1_not_before_t2"};
    const std::string head = tokenizer.decode(std::span<const int32_t>(seq.ids).first(static_cast<size_t>(t1) + 1));
    if (head.size() < e1.name.size() || head.compare(head.size() - e1.name.size(), e1.name.size(), e1.name) != 0) {
        return {std::nullopt, "t1_span_mismatch"};
    }
    return {std::move(q), {}};
}

DatasetBuild build_dataset(const KnowledgeBase& kb, const BpeTokenizer& tokenizer, uint64_t seed) {
    const auto& triplets = kb.triplets();
    std::multimap<std::string, size_t> by_subject;
    for (size_t i = 0; i < triplets.size(); ++i) by_subject.emplace(triplets[i].subject, i);

    DatasetBuild out;
    json drops = json::array();
    std::map<std::string, int> drop_counts;
    std::set<std::string> seen;
    int compositions = 0;
    auto drop = [&](const std::string& id, const std::string& reason) {
        drops.push_back({{"id", id}, {"reason", reason}});
        ++drop_counts[reason];
    };
    for (const auto& a : triplets) {
        auto [lo, hi] = by_subject.equal_range(a.object);
        for (auto it = lo; it != hi; ++it) {
            const auto& b = triplets[it->second];
            ++compositions;
            const std::string id = a.subject + "|" + a.relation + "|" + a.object + "|" + b.relation + "|" + b.object;
            if (b.object == a.subject) {
                drop(id, "e3_equals_e1");
                continue;
            }
            if (!kb.is_bridge_type(kb.entity(a.object).type)) {
                drop(id, "bridge_type_not_registered");
                continue;
            }
            if (!seen.insert(id).second) {
                drop(id, "duplicate");
                continue;
            }
            try {
                auto r = compose_two_hop(kb, tokenizer, a, b);
                if (r.query) {
                    out.queries.push_back(std::move(*r.query));
                } else {
                    drop(id, r.drop_reason);
                }
            } catch (const TokenizeError& e) {
                drop(id, "untokenizable");
            }
        }
    }
    out.manifest = json{{"seed", seed},
                        {"n_entities", kb.entity_count()},
                        {"n_triplets", triplets.size()},
                        {"n_compositions", compositions},
                        {"n_queries", out.queries.size()},
                        {"drop_counts", drop_counts},
                        {"drops", drops}};
    return out;
}

AnswerOracle::AnswerOracle(const Model& model, const BpeTokenizer& tokenizer, int max_new_tokens)
    : model_(model), tokenizer_(tokenizer), max_new_tokens_(max_new_tokens) {}

std::string AnswerOracle::decode(const std::string& prompt) const {
    const auto ids = tokenizer_.encode(prompt).ids;
    const auto out = model_.generate_ids(ids, DecodeParams::greedy(max_new_tokens_));
    return tokenizer_.decode(out.front());
}

void AnswerOracle::prefetch(std::span<const std::string> prompts) {
    std::vector<std::string> missing;
    {
        std::lock_guard lock(mutex_);
        std::set<std::string> uniq;
        for (const auto& p : prompts) {
            if (!cache_.count(p) && uniq.insert(p).second) missing.push_back(p);
        }
    }
    std::vector<std::string> results(missing.size());
    const long n = static_cast<long>(missing.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) results[static_cast<size_t>(i)] = decode(missing[static_cast<size_t>(i)]);
    std::lock_guard lock(mutex_);
    for (size_t i = 0; i < missing.size(); ++i) cache_.emplace(missing[i], std::move(results[i]));
}

std::string AnswerOracle::greedy(const std::string& prompt) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(prompt); it != cache_.end()) return it->second;
    }
    std::string text = decode(prompt);
    std::lock_guard lock(mutex_);
    return cache_.emplace(prompt, std::move(text)).first->second;
}

bool AnswerOracle::answers(const std::string& prompt, const EntityAliasSet& aliases) {
    return entity_match(greedy(prompt), aliases);
}

FilterDecision shortcut_filter(AnswerOracle& oracle, const TwoHopQuery& query) {
    if (oracle.answers(query.prompt_without_e1, query.e3_aliases)) return {false, "answers_without_e1"};
    if (oracle.answers(query.prompt_without_r1, query.e3_aliases)) return {false, "answers_without_r1"};
    return {true, {}};
}

std::vector<TwoHopQuery> subset_correct(AnswerOracle& oracle, std::span<const TwoHopQuery> queries) {
    std::vector<std::string> prompts;
    for (const auto& q : queries) {
        prompts.push_back(q.prompt);
        prompts.push_back(q.first_hop_prompt);
    }
    oracle.prefetch(prompts);
    std::vector<TwoHopQuery> out;
    for (const auto& q : queries) {
        if (oracle.answers(q.prompt, q.e3_aliases) && oracle.answers(q.first_hop_prompt, q.e2_aliases)) out.push_back(q);
    }
    return out;
}

std::vector<TwoHopQuery> subset_incorrect(AnswerOracle& oracle, std::span<const TwoHopQuery> queries) {
    std::vector<std::string> prompts;
    for (const auto& q : queries) {
        prompts.push_back(q.prompt);
        prompts.push_back(q.first_hop_prompt);
        prompts.push_back(q.second_hop_prompt);
    }
    oracle.prefetch(prompts);
    std::vector<TwoHopQuery> out;
    for (const auto& q : queries) {
        if (oracle.answers(q.first_hop_prompt, q.e2_aliases) && oracle.answers(q.second_hop_prompt, q.e3_aliases) &&
            !oracle.answers(q.prompt, q.e3_aliases)) {
            out.push_back(q);
        }
    }
    return out;
}

std::vector<TwoHopQuery> balanced_sample(std::span<const TwoHopQuery> queries, int cap, uint64_t seed) {
    if (cap < 1) throw ContractError("per-type cap must be >= 1");
    std::map<std::string, std::vector<size_t>> by_type;
    for (size_t i = 0; i < queries.size(); ++i) by_type[queries[i].bridge_type].push_back(i);
    std::vector<size_t> keep;
    for (auto& [type, idx] : by_type) {
        if (static_cast<int>(idx.size()) > cap) {
            uint64_t h = 0;
            for (unsigned char c : type) h = h * 131 + c;
            std::mt19937_64 rng(mix_seed(seed, {h}));
            // Partial Fisher-Yates with explicit bounded draws.
            for (size_t i = 0; i < static_cast<size_t>(cap); ++i) {
                const uint64_t span = idx.size() - i;
                const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
                uint64_t r;
                do r = rng();
                while (r >= limit);
                std::swap(idx[i], idx[i + r % span]);
            }
            idx.resize(static_cast<size_t>(cap));
        }
        keep.insert(keep.end(), idx.begin(), idx.end());
    }
    std::sort(keep.begin(), keep.end());
    std::vector<TwoHopQuery> out;
    for (size_t i : keep) out.push_back(queries[i]);
    return out;
}

void write_queries(const fs::path& path, std::span<const TwoHopQuery> queries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    for (const auto& q : queries) out << q.to_json().dump() << '\n';
}

std::vector<TwoHopQuery> read_queries(const fs::path& path) {
    std::vector<TwoHopQuery> out;
    for_each_record(path, [&](const json& j, const std::string& where) {
        try {
            out.push_back(TwoHopQuery::from_json(j));
        } catch (const FormatError& e) {
            throw FormatError(where + ": " + e.what());
        }
    });
    return out;
}

}  // namespace latenthop
