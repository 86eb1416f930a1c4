#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "latenthop/interventions.hpp"
#include "latenthop/model.hpp"
#include "latenthop/tokenizer.hpp"

namespace latenthop {

/// Three-example identity-description prompt; the final " x" is the slot.
inline constexpr std::string_view kIdentityPrompt =
    "Syria: Syria is a country in the Middle East, Leonardo DiCaprio: Leonardo DiCaprio is an American actor, "
    "Samsung: Samsung is a South Korean multinational corporation, x";

inline constexpr std::string_view kMatchPolicy = "casefold-strip-punct-articles-words-v1";

/// Target side of a Patchscope. Keeps the decode state of every token before
/// the placeholder so probes only recompute the placeholder onwards.
class PatchscopeTask {
public:
    static PatchscopeTask create(const Model& model, const BpeTokenizer& tokenizer, DecodeParams params,
                                 std::string_view prompt = kIdentityPrompt, std::string_view placeholder = "x");

    const std::string& prompt() const { return prompt_; }
    std::span<const int32_t> prompt_ids() const { return ids_; }
    int placeholder() const { return placeholder_; }
    const DecodeParams& params() const { return params_; }
    const DecodeState& prefix() const { return prefix_; }

private:
    std::string prompt_;
    std::vector<int32_t> ids_;
    int placeholder_ = 0;
    DecodeParams params_;
    DecodeState prefix_;
};

struct EntityAliasSet {
    std::string canonical;
    std::vector<std::string> aliases;
    std::string policy{kMatchPolicy};

    static EntityAliasSet of(std::string canonical, std::vector<std::string> more = {});
    void validate() const;
};

struct ProbeResult {
    std::string prompt_id;
    int source_layer = 0;
    int source_position = 0;
    int target_layer = 0;
    std::vector<std::string> generations;
    bool matched = false;
    std::optional<int> rank;

    nlohmann::json to_json() const;
};

/// Case-fold, punctuation to spaces, drop articles, collapse whitespace.
std::string normalize_text(std::string_view text);

/// True iff a normalized alias occurs in a normalized generation on word boundaries.
bool entity_match(std::span<const std::string> generations, const EntityAliasSet& aliases);
bool entity_match(std::string_view generation, const EntityAliasSet& aliases);

/// Patches `vector` into the placeholder at target_layer and decodes with the
/// task params, seeded by `seed`. `aliases` may be null (matched stays false).
ProbeResult patchscope_decode(const Model& model, const BpeTokenizer& tokenizer, const PatchscopeTask& task,
                              const HiddenVector& vector, int target_layer, uint64_t seed,
                              const EntityAliasSet* aliases = nullptr);

ProbeResult patchscope_decode(const Model& model, const BpeTokenizer& tokenizer, const PatchscopeTask& task,
                              std::span<const int32_t> source_prompt, int source_position, int source_layer,
                              int target_layer, uint64_t seed, const EntityAliasSet* aliases = nullptr);

/// Token ids by descending projected logit, ties by ascending id.
std::vector<int32_t> vocab_project(const Model& model, std::span<const float> vector);
int32_t projected_top1(const Model& model, std::span<const float> vector);
int projected_rank(const Model& model, std::span<const float> vector, int32_t token);

struct PromotionLayers {
    std::optional<int> attention;
    std::optional<int> mlp;

    std::optional<int> of(SublayerKind kind) const { return kind == SublayerKind::Attention ? attention : mlp; }
};

/// Smallest index whose vector projects `token` to top-1.
std::optional<int> first_promoting_layer(const Model& model, std::span<const std::span<const float>> updates,
                                         int32_t token);

/// Smallest layer per sublayer kind whose update projects `token` to top-1.
PromotionLayers sublayer_promotion(const Model& model, const ForwardTrace& trace, int position, int32_t token);

/// Stateless 64-bit mix used to derive per-cell seeds.
uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> parts);

}  // namespace latenthop
