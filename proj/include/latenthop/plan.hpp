#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latenthop/config.hpp"

namespace latenthop {

/// Replace residual_in[layer][position] with `values` before layer `layer`
/// runs. layer == n_layers addresses the stream after the last layer.
struct ResidualOverwrite {
    int layer = 0;
    int position = 0;
    std::vector<float> values;

    bool operator==(const ResidualOverwrite&) const = default;
};

/// Force the attention score from `query` to `key` to -inf at `layer`.
/// An empty head means every head.
struct AttentionBlock {
    int layer = 0;
    int query = 0;
    int key = 0;
    std::optional<int> head;

    bool operator==(const AttentionBlock&) const = default;
};

/// Declarative set of interventions applied during a forward pass.
/// Plans are plain values; merging never mutates its inputs.
class InterventionPlan {
public:
    InterventionPlan() = default;

    InterventionPlan& overwrite(ResidualOverwrite o);
    InterventionPlan& block(AttentionBlock b);

    const std::vector<ResidualOverwrite>& overwrites() const { return overwrites_; }
    const std::vector<AttentionBlock>& blocks() const { return blocks_; }
    bool empty() const { return overwrites_.empty() && blocks_.empty(); }

    /// Union of both plans. Two overwrites of the same coordinate are a
    /// ContractError since their order would matter.
    InterventionPlan merged(const InterventionPlan& other) const;

    /// Throws ContractError if any coordinate is outside the model or the
    /// sequence, or a vector has the wrong width.
    void validate(const ModelConfig& config, int seq_len) const;

    /// Smallest position the plan touches, if any.
    std::optional<int> min_position() const;

    /// One JSON record per line, in insertion order.
    std::string to_jsonl() const;
    static InterventionPlan from_jsonl(const std::string& text);

    bool operator==(const InterventionPlan&) const = default;

private:
    std::vector<ResidualOverwrite> overwrites_;
    std::vector<AttentionBlock> blocks_;
};

}  // namespace latenthop
