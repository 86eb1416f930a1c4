#include "latenthop/probes.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "latenthop/error.hpp"

namespace latenthop {

PatchscopeTask PatchscopeTask::create(const Model& model, const BpeTokenizer& tokenizer, DecodeParams params,
                                      std::string_view prompt, std::string_view placeholder) {
    params.validate();
    PatchscopeTask task;
    task.prompt_ = std::string(prompt);
    task.ids_ = tokenizer.encode(prompt).ids;
    task.params_ = params;
    int found = -1, count = 0;
    for (size_t i = 0; i < task.ids_.size(); ++i) {
        std::string text = tokenizer.token_text(task.ids_[i]);
        const auto b = text.find_first_not_of(' ');
        text = b == std::string::npos ? std::string() : text.substr(b);
        if (text == placeholder) {
            found = static_cast<int>(i);
            ++count;
        }
    }
    if (count != 1 || found != static_cast<int>(task.ids_.size()) - 1) {
        throw ContractError("placeholder '" + std::string(placeholder) +
                            "' is not a single final token of the target prompt (" + std::to_string(count) +
                            " occurrences)");
    }
    task.placeholder_ = found;
    const int need = static_cast<int>(task.ids_.size()) + params.max_new_tokens;
    if (need > model.config().max_context) {
        throw ContractError("target prompt plus generation needs " + std::to_string(need) +
                            " positions, model has " + std::to_string(model.config().max_context));
    }
    task.prefix_ = model.prefill(std::span<const int32_t>(task.ids_).first(found));
    return task;
}

EntityAliasSet EntityAliasSet::of(std::string canonical, std::vector<std::string> more) {
    EntityAliasSet s;
    s.aliases.push_back(canonical);
    for (auto& a : more) {
        if (std::find(s.aliases.begin(), s.aliases.end(), a) == s.aliases.end()) s.aliases.push_back(std::move(a));
    }
    s.canonical = std::move(canonical);
    return s;
}

void EntityAliasSet::validate() const {
    if (aliases.empty()) throw ContractError("alias set is empty");
    if (std::find(aliases.begin(), aliases.end(), canonical) == aliases.end()) {
        throw ContractError("canonical name '" + canonical + "' missing from its alias set");
    }
}

nlohmann::json ProbeResult::to_json() const {
    nlohmann::json j{{"prompt_id", prompt_id},
                     {"source_layer", source_layer},
                     {"source_position", source_position},
                     {"target_layer", target_layer},
                     {"generations", generations},
                     {"matched", matched}};
    j["rank"] = rank ? nlohmann::json(*rank) : nlohmann::json(nullptr);
    return j;
}

std::string normalize_text(std::string_view text) {
    std::string folded;
    folded.reserve(text.size());
    for (unsigned char c : text) {
        if (c < 0x80 && !std::isalnum(c)) {
            folded.push_back(' ');
        } else {
            folded.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        }
    }
    std::string out;
    size_t i = 0;
    while (i < folded.size()) {
        while (i < folded.size() && folded[i] == ' ') ++i;
        const size_t b = i;
        while (i < folded.size() && folded[i] != ' ') ++i;
        if (b == i) break;
        const std::string_view word(folded.data() + b, i - b);
        if (word == "a" || word == "an" || word == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out.append(word);
    }
    return out;
}

bool entity_match(std::string_view generation, const EntityAliasSet& aliases) {
    aliases.validate();
    const std::string hay = " " + normalize_text(generation) + " ";
    for (const auto& alias : aliases.aliases) {
        const std::string n = normalize_text(alias);
        if (n.empty()) continue;
        if (hay.find(" " + n + " ") != std::string::npos) return true;
    }
    return false;
}

bool entity_match(std::span<const std::string> generations, const EntityAliasSet& aliases) {
    aliases.validate();
    return std::any_of(generations.begin(), generations.end(),
                       [&](const std::string& g) { return entity_match(g, aliases); });
}

ProbeResult patchscope_decode(const Model& model, const BpeTokenizer& tokenizer, const PatchscopeTask& task,
                              const HiddenVector& vector, int target_layer, uint64_t seed,
                              const EntityAliasSet* aliases) {
    const auto& cfg = model.config();
    if (target_layer < 0 || target_layer > cfg.n_layers) {
        throw ContractError("target layer " + std::to_string(target_layer) + " outside [0, " +
                            std::to_string(cfg.n_layers) + "]");
    }
    PatchSpec spec{{vector.prompt_id, vector.layer, vector.position},
                   {"patchscope", target_layer, task.placeholder()},
                   vector};
    const auto plan = make_patch_plan(spec, cfg, static_cast<int>(task.prompt_ids().size()));
    DecodeParams params = task.params();
    params.seed = seed;
    const auto suffix = task.prompt_ids().subspan(task.placeholder());
    const auto samples = model.generate_ids(task.prefix(), suffix, params, plan);

    ProbeResult r;
    r.prompt_id = vector.prompt_id;
    r.source_layer = vector.layer;
    r.source_position = vector.position;
    r.target_layer = target_layer;
    for (const auto& ids : samples) r.generations.push_back(tokenizer.decode(ids));
    if (aliases) r.matched = entity_match(r.generations, *aliases);
    return r;
}

ProbeResult patchscope_decode(const Model& model, const BpeTokenizer& tokenizer, const PatchscopeTask& task,
                              std::span<const int32_t> source_prompt, int source_position, int source_layer,
                              int target_layer, uint64_t seed, const EntityAliasSet* aliases) {
    const auto v = record_hidden(model, source_prompt, source_layer, source_position);
    return patchscope_decode(model, tokenizer, task, v, target_layer, seed, aliases);
}

namespace {

std::vector<float> checked_projection(const Model& model, std::span<const float> vector) {
    if (static_cast<int>(vector.size()) != model.config().d_model) {
        throw ContractError("projected vector has width " + std::to_string(vector.size()) + ", expected " +
                            std::to_string(model.config().d_model));
    }
    for (float x : vector) {
        if (!std::isfinite(x)) throw ContractError("projected vector has non-finite entries");
    }
    return model.project(vector);
}

}  // namespace

std::vector<int32_t> vocab_project(const Model& model, std::span<const float> vector) {
    const auto logits = checked_projection(model, vector);
    std::vector<int32_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) { return logits[a] > logits[b]; });
    return order;
}

int32_t projected_top1(const Model& model, std::span<const float> vector) {
    const auto logits = checked_projection(model, vector);
    return static_cast<int32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

int projected_rank(const Model& model, std::span<const float> vector, int32_t token) {
    if (token < 0 || token >= model.config().vocab_size) {
        throw ContractError("token " + std::to_string(token) + " outside the vocabulary");
    }
    const auto logits = checked_projection(model, vector);
    const float t = logits[token];
    int rank = 0;
    for (int32_t i = 0; i < static_cast<int32_t>(logits.size()); ++i) {
        if (logits[i] > t || (logits[i] == t && i < token)) ++rank;
    }
    return rank;
}

std::optional<int> first_promoting_layer(const Model& model, std::span<const std::span<const float>> updates,
                                         int32_t token) {
    for (size_t l = 0; l < updates.size(); ++l) {
        if (projected_top1(model, updates[l]) == token) return static_cast<int>(l);
    }
    return std::nullopt;
}

PromotionLayers sublayer_promotion(const Model& model, const ForwardTrace& trace, int position, int32_t token) {
    if (!trace.has_sublayers()) throw ContractError("promotion needs a trace with sublayer updates captured");
    std::vector<std::span<const float>> attention, mlp;
    for (int l = 0; l < trace.n_layers(); ++l) {
        attention.push_back(trace.sublayer_update(SublayerKind::Attention, l, position));
        mlp.push_back(trace.sublayer_update(SublayerKind::Mlp, l, position));
    }
    return {first_promoting_layer(model, attention, token), first_promoting_layer(model, mlp, token)};
}

uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> parts) {
    auto splitmix = [](uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    uint64_t h = splitmix(seed);
    for (uint64_t p : parts) h = splitmix(h ^ p);
    return h;
}

}  // namespace latenthop
