#include "latenthop/interventions.hpp"

#include <algorithm>
#include <cmath>

#include "latenthop/error.hpp"

namespace latenthop {

HiddenVector record_hidden(const ForwardTrace& trace, int layer, int position, std::string prompt_id) {
    if (layer < 0 || layer > trace.n_layers() || position < 0 || position >= trace.seq_len()) {
        throw ContractError("cannot record hidden state at layer " + std::to_string(layer) + ", position " +
                            std::to_string(position));
    }
    const auto v = trace.residual_in(layer, position);
    return {{v.begin(), v.end()}, std::move(prompt_id), layer, position};
}

HiddenVector record_hidden(const Model& model, std::span<const int32_t> prompt, int layer, int position,
                           std::string prompt_id) {
    if (layer < 0 || layer > model.config().n_layers || position < 0 || position >= static_cast<int>(prompt.size())) {
        throw ContractError("cannot record hidden state at layer " + std::to_string(layer) + ", position " +
                            std::to_string(position));
    }
    CaptureSpec capture;
    capture.logits = CaptureSpec::Logits::None;
    return record_hidden(model.forward(prompt, {}, capture), layer, position, std::move(prompt_id));
}

InterventionPlan make_patch_plan(const PatchSpec& spec, const ModelConfig& config, int target_len) {
    if (static_cast<int>(spec.vector.values.size()) != config.d_model) {
        throw ContractError("patch vector has width " + std::to_string(spec.vector.values.size()) + ", expected " +
                            std::to_string(config.d_model));
    }
    if (spec.target.layer < 0 || spec.target.layer > config.n_layers) {
        throw ContractError("patch target layer " + std::to_string(spec.target.layer) + " out of range");
    }
    if (spec.target.position < 0 || spec.target.position >= target_len) {
        throw ContractError("patch target position " + std::to_string(spec.target.position) +
                            " outside target prompt of " + std::to_string(target_len) + " tokens");
    }
    InterventionPlan plan;
    plan.overwrite({spec.target.layer, spec.target.position, spec.vector.values});
    return plan;
}

InterventionPlan make_backpatch_plan(const BackPatchSpec& spec, const ForwardTrace& clean_trace) {
    if (spec.target_layer >= spec.source_layer) {
        throw ContractError("back-patching needs target layer < source layer, got target " +
                            std::to_string(spec.target_layer) + " and source " + std::to_string(spec.source_layer));
    }
    if (spec.target_layer < 0 || spec.source_layer > clean_trace.n_layers()) {
        throw ContractError("back-patch layers out of range");
    }
    const auto v = clean_trace.residual_in(spec.source_layer, spec.position);
    InterventionPlan plan;
    plan.overwrite({spec.target_layer, spec.position, {v.begin(), v.end()}});
    return plan;
}

InterventionPlan make_knockout_plan(const KnockoutSpec& spec, const ModelConfig& config) {
    InterventionPlan plan;
    if (spec.window.empty()) return plan;
    if (spec.window.first < 0 || spec.window.last >= config.n_layers) {
        throw ContractError("knockout window [" + std::to_string(spec.window.first) + ", " +
                            std::to_string(spec.window.last) + "] outside [0, " + std::to_string(config.n_layers - 1) +
                            "]");
    }
    if (spec.key > spec.query || spec.key < 0) {
        throw ContractError("knockout key " + std::to_string(spec.key) + " must not follow query " +
                            std::to_string(spec.query));
    }
    if (spec.head && (*spec.head < 0 || *spec.head >= config.n_heads)) {
        throw ContractError("knockout head " + std::to_string(*spec.head) + " out of range");
    }
    for (int l = spec.window.first; l <= spec.window.last; ++l) plan.block({l, spec.query, spec.key, spec.head});
    return plan;
}

std::vector<LayerWindow> sliding_windows(int n_layers, int length) {
    if (length < 1) throw ContractError("knockout window length must be >= 1");
    std::vector<LayerWindow> out;
    for (int first = 0; first < n_layers; ++first) out.push_back({first, std::min(n_layers - 1, first + length - 1)});
    return out;
}

std::vector<std::pair<int, int>> backpatch_pairs(int n_layers) {
    std::vector<std::pair<int, int>> out;
    for (int source = 1; source < n_layers; ++source) {
        for (int target = 0; target < source; ++target) out.emplace_back(source, target);
    }
    return out;
}

}  // namespace latenthop
