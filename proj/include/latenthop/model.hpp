#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "latenthop/config.hpp"
#include "latenthop/kernels.hpp"
#include "latenthop/plan.hpp"
#include "latenthop/safetensors.hpp"

namespace latenthop {

enum class SublayerKind { Attention = 0, Mlp = 1 };

std::string_view to_string(SublayerKind kind);

/// What a forward pass records. Attention weights are opt-in.
struct CaptureSpec {
    enum class Logits { All, Last, None };

    bool residual = true;
    bool sublayers = false;
    bool attention = false;
    Logits logits = Logits::All;

    static CaptureSpec everything() { return {true, true, true, Logits::All}; }
};

/// Internal states from one forward pass.
///
/// residual_in(l, p) is the stream entering layer l at position p; l == n_layers
/// is the stream after the last layer, before the final normalization. With the
/// sequential residual wiring of both families,
///   residual_in(l+1, p) == residual_in(l, p) + update(Attention, l, p) + update(Mlp, l, p).
class ForwardTrace {
public:
    int n_layers() const { return n_layers_; }
    int seq_len() const { return seq_len_; }
    int d_model() const { return d_model_; }
    int vocab_size() const { return vocab_; }
    int n_heads() const { return n_heads_; }

    bool has_residual() const { return !residual_.empty(); }
    bool has_sublayers() const { return !updates_.empty(); }
    bool has_attention() const { return !attention_.empty(); }
    bool has_logits(int position) const;

    std::span<const float> logits(int position) const;
    std::span<const float> residual_in(int layer, int position) const;
    std::span<const float> sublayer_update(SublayerKind kind, int layer, int position) const;
    /// Weights of one query row over all seq_len keys (zero past the query).
    std::span<const float> attention_row(int layer, int head, int query) const;

private:
    friend class Model;

    int n_layers_ = 0;
    int seq_len_ = 0;
    int d_model_ = 0;
    int vocab_ = 0;
    int n_heads_ = 0;
    int logits_first_ = 0;  // first position that has logits
    std::vector<float> logits_;
    std::vector<float> residual_;    // [n_layers + 1][seq_len][d_model]
    std::vector<float> updates_;     // [2][n_layers][seq_len][d_model]
    std::vector<float> attention_;   // [n_layers][n_heads][seq_len][seq_len]
};

struct DecodeParams {
    enum class Mode { Greedy, Sampled };

    Mode mode = Mode::Greedy;
    int max_new_tokens = 20;
    int n_samples = 1;
    float temperature = 1.0f;
    uint64_t seed = 0;
    bool stop_at_eos = true;

    static DecodeParams greedy(int max_new_tokens = 20);
    static DecodeParams sampled(int n_samples, uint64_t seed, float temperature = 1.0f, int max_new_tokens = 20);

    void validate() const;
};

/// Key/value cache plus the logits of the last processed position. Copying a
/// state forks the decode.
struct DecodeState {
    int length = 0;
    std::vector<std::vector<float>> keys;    // per layer, [length][kv_dim]
    std::vector<std::vector<float>> values;  // per layer, [length][kv_dim]
    std::vector<float> last_logits;
};

/// Immutable decoder-only transformer. Safe to share across threads; every
/// call owns its own buffers.
class Model {
public:
    static Model load(const std::filesystem::path& weights_file, const ModelConfig& config);
    static Model from_tensors(const TensorFile& tensors, const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    /// Hash of the config and every float tensor of the checkpoint.
    const std::string& fingerprint() const { return fingerprint_; }

    /// Full pass over `tokens`. Throws ContractError before any compute if the
    /// plan addresses coordinates outside the model or the sequence.
    ForwardTrace forward(std::span<const int32_t> tokens, const InterventionPlan& plan = {},
                         const CaptureSpec& capture = {},
                         kernels::Backend backend = kernels::Backend::Parallel) const;

    /// Processes a prompt into a decode state, applying `plan`.
    DecodeState prefill(std::span<const int32_t> tokens, const InterventionPlan& plan = {}) const;

    /// Appends tokens to a state. Plan entries must address positions at or
    /// after state.length; entries in the appended range are applied.
    void extend(DecodeState& state, std::span<const int32_t> tokens, const InterventionPlan& plan = {}) const;

    /// Token ids of each sample. Interventions act on prompt positions only.
    std::vector<std::vector<int32_t>> generate_ids(std::span<const int32_t> prompt, const DecodeParams& params,
                                                   const InterventionPlan& plan = {}) const;

    /// Same, continuing from a prefilled prefix with the remaining prompt tokens.
    std::vector<std::vector<int32_t>> generate_ids(const DecodeState& prefix, std::span<const int32_t> suffix,
                                                   const DecodeParams& params,
                                                   const InterventionPlan& plan = {}) const;

    /// Final normalization followed by the unembedding.
    std::vector<float> project(std::span<const float> residual) const;

    std::span<const float> token_embedding(int32_t id) const;
    std::span<const float> unembedding_row(int32_t id) const;

    /// Final normalization weights (beta is empty for RMS norm).
    std::span<const float> final_norm_gamma() const { return final_norm_.gamma; }
    std::span<const float> final_norm_beta() const { return final_norm_.beta; }

private:
    struct Linear {
        std::vector<float> w;  // [out][in]
        std::vector<float> b;  // [out] or empty
        int in = 0;
        int out = 0;
    };
    struct Norm {
        std::vector<float> gamma;
        std::vector<float> beta;  // empty for RMS norm
    };
    struct Block {
        Norm norm1;
        Norm norm2;
        Linear qkv;
        Linear attn_out;
        Linear up;
        Linear gate;  // gated family only
        Linear down;
    };

    void run(DecodeState& state, std::span<const int32_t> tokens, const InterventionPlan& plan,
             const CaptureSpec* capture, ForwardTrace* trace, kernels::Backend backend) const;
    void normalize(const Norm& norm, std::span<const float> x, std::span<float> y, int rows,
                   kernels::Backend backend) const;
    DecodeState empty_state() const;

    ModelConfig config_;
    std::string fingerprint_;
    std::vector<float> embed_;      // [vocab][d_model]
    std::vector<float> positions_;  // [max_context][d_model], learned-position family
    std::vector<Block> blocks_;
    Norm final_norm_;
    std::vector<float> lm_head_;  // [vocab][d_model]; empty when tied to embed_
};

}  // namespace latenthop
