#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace latenthop {

/// The two supported decoder-only wirings.
enum class Architecture {
    /// Pre-layer-norm blocks, learned absolute positions, GELU MLP (GPT-2 class).
    PreLayerNormLearnedPositions,
    /// RMS norm, rotary positions, gated SiLU MLP (LLaMA class).
    RmsNormRotaryGatedMlp,
};

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct ModelConfig {
    Architecture architecture = Architecture::PreLayerNormLearnedPositions;
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int head_dim = 0;
    int vocab_size = 0;
    int max_context = 0;
    float norm_epsilon = 1e-5f;

    // Family-specific extras; defaults follow the reference checkpoints.
    int d_ff = 0;                  // 0 means 4 * d_model
    int n_kv_heads = 0;            // 0 means n_heads
    float rope_theta = 10000.0f;
    bool tie_embeddings = true;
    std::optional<int32_t> eos_token_id;

    int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    int kv_heads() const { return n_kv_heads > 0 ? n_kv_heads : n_heads; }

    /// Throws ContractError when an invariant does not hold.
    void validate() const;

    /// Stable hash of all fields, recorded in experiment metadata.
    std::string fingerprint() const;
};

ModelConfig load_config(const std::filesystem::path& path);
ModelConfig parse_config(std::string_view json_text);

}  // namespace latenthop
