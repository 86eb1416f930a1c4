#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latenthop/model.hpp"
#include "latenthop/plan.hpp"

namespace latenthop {

/// A residual-stream vector together with where it was read.
struct HiddenVector {
    std::vector<float> values;
    std::string prompt_id;
    int layer = 0;
    int position = 0;
};

struct StreamCoordinate {
    std::string prompt_id;
    int layer = 0;
    int position = 0;
};

/// Cross-prompt patch: write `vector` into the target coordinate.
struct PatchSpec {
    StreamCoordinate source;
    StreamCoordinate target;
    HiddenVector vector;
};

/// Same prompt, same position: feed the stream from source_layer into the
/// strictly earlier target_layer.
struct BackPatchSpec {
    std::string prompt_id;
    int position = 0;
    int source_layer = 0;
    int target_layer = 0;
};

/// Inclusive layer range. first > last denotes an empty window.
struct LayerWindow {
    int first = 0;
    int last = -1;

    bool empty() const { return last < first; }
    int size() const { return empty() ? 0 : last - first + 1; }
    bool operator==(const LayerWindow&) const = default;
};

/// Block the attention edge query -> key (information flowing from key into
/// query) for every layer in the window.
struct KnockoutSpec {
    int query = 0;
    int key = 0;
    LayerWindow window;
    std::optional<int> head;  // empty: all heads
};

HiddenVector record_hidden(const ForwardTrace& trace, int layer, int position, std::string prompt_id = {});
HiddenVector record_hidden(const Model& model, std::span<const int32_t> prompt, int layer, int position,
                           std::string prompt_id = {});

/// target_len is the token count of the target prompt.
InterventionPlan make_patch_plan(const PatchSpec& spec, const ModelConfig& config, int target_len);
InterventionPlan make_backpatch_plan(const BackPatchSpec& spec, const ForwardTrace& clean_trace);
InterventionPlan make_knockout_plan(const KnockoutSpec& spec, const ModelConfig& config);

/// Windows of `length` layers starting at every layer, truncated at the top of the stack.
std::vector<LayerWindow> sliding_windows(int n_layers, int length);

/// Every (source, target) layer pair with target < source, both in [0, n_layers).
std::vector<std::pair<int, int>> backpatch_pairs(int n_layers);

}  // namespace latenthop
