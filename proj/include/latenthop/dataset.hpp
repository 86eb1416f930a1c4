#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "latenthop/model.hpp"
#include "latenthop/probes.hpp"
#include "latenthop/tokenizer.hpp"

namespace latenthop {

struct FactTriplet {
    std::string subject;
    std::string relation;
    std::string object;
};

struct EntityRecord {
    std::string id;
    std::string name;
    EntityAliasSet aliases;
    std::string type;
    std::string description;
};

/// "the performer of {}" plus the subject-less phrase "the performer".
struct RelationTemplate {
    std::string id;
    std::string phrase;
    std::string bare;

    std::string render(std::string_view subject) const;
    /// Byte offset of the subject slot in the rendered phrase.
    size_t slot() const { return phrase.find("{}"); }
    void validate() const;
};

/// Entities, relation templates, type registry and triplets of an offline dump.
class KnowledgeBase {
public:
    /// Reads entities.jsonl, triplets.jsonl, relations.json and types.json from `dir`.
    static KnowledgeBase load_dump(const std::filesystem::path& dir);

    void set_types(std::vector<std::string> types, std::vector<std::string> bridge_types);
    void add_relation(RelationTemplate relation);
    void add_entity(EntityRecord entity);
    void add_triplet(FactTriplet triplet);

    const EntityRecord& entity(const std::string& id) const;
    const RelationTemplate& relation(const std::string& id) const;
    bool is_bridge_type(const std::string& type) const;

    const std::vector<FactTriplet>& triplets() const { return triplets_; }
    size_t entity_count() const { return entities_.size(); }

private:
    std::vector<std::string> types_;
    std::vector<std::string> bridge_types_;
    std::map<std::string, RelationTemplate> relations_;
    std::map<std::string, EntityRecord> entities_;
    std::vector<FactTriplet> triplets_;
};

struct TwoHopQuery {
    std::string id;  // "e1|r1|e2|r2|e3"
    std::string e1, e2, e3;
    std::string r1, r2;
    std::string e1_name;
    EntityAliasSet e2_aliases;
    EntityAliasSet e3_aliases;
    std::string prompt;
    std::string first_hop_prompt;
    std::string second_hop_prompt;
    std::string prompt_without_e1;
    std::string prompt_without_r1;
    int t1 = 0;
    int t2 = 0;
    std::string bridge_type;

    nlohmann::json to_json() const;
    static TwoHopQuery from_json(const nlohmann::json& j);
};

struct ComposeResult {
    std::optional<TwoHopQuery> query;
    std::string drop_reason;
};

/// Renders the query for a.object == b.subject and locates t1 and t2.
/// Throws ContractError when the facts do not compose; tokenization problems
/// produce a drop reason instead.
ComposeResult compose_two_hop(const KnowledgeBase& kb, const BpeTokenizer& tokenizer, const FactTriplet& a,
                              const FactTriplet& b);

struct DatasetBuild {
    std::vector<TwoHopQuery> queries;
    nlohmann::json manifest;
};

/// Every composable pair of the dump, in triplet order.
DatasetBuild build_dataset(const KnowledgeBase& kb, const BpeTokenizer& tokenizer, uint64_t seed);

/// Memoized greedy continuations.
class AnswerOracle {
public:
    AnswerOracle(const Model& model, const BpeTokenizer& tokenizer, int max_new_tokens = 20);

    /// Decodes every prompt not yet cached, in parallel.
    void prefetch(std::span<const std::string> prompts);
    std::string greedy(const std::string& prompt);
    bool answers(const std::string& prompt, const EntityAliasSet& aliases);

private:
    std::string decode(const std::string& prompt) const;

    const Model& model_;
    const BpeTokenizer& tokenizer_;
    int max_new_tokens_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::string> cache_;
};

struct FilterDecision {
    bool keep = true;
    std::string reason;
};

/// Drops the query if greedy decoding answers e3 without e1 or without r1.
FilterDecision shortcut_filter(AnswerOracle& oracle, const TwoHopQuery& query);

std::vector<TwoHopQuery> subset_correct(AnswerOracle& oracle, std::span<const TwoHopQuery> queries);
std::vector<TwoHopQuery> subset_incorrect(AnswerOracle& oracle, std::span<const TwoHopQuery> queries);

/// At most `cap` queries per bridge type, chosen with `seed`; input order kept.
std::vector<TwoHopQuery> balanced_sample(std::span<const TwoHopQuery> queries, int cap, uint64_t seed);

void write_queries(const std::filesystem::path& path, std::span<const TwoHopQuery> queries);
std::vector<TwoHopQuery> read_queries(const std::filesystem::path& path);

std::string capitalize(std::string text);

}  // namespace latenthop
