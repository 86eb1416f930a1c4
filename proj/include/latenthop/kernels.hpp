#pragma once

// Dense float32 kernels used by the forward pass. Every kernel has two
// implementations with the same signature: `kernels::parallel` (OpenMP,
// unrolled accumulation) drives the model, `kernels::reference` is a plain
// serial loop kept as the oracle for tests and the benchmark baseline.
//
// Layouts are row-major. Weight matrices are [out][in].

#include <cstdint>
#include <span>

namespace latenthop::kernels {

/// Which implementation the model dispatches to.
enum class Backend { Parallel, Reference };

/// Shapes for one attention call over a key/value cache.
struct AttentionShape {
    int n_new = 0;        // query rows in this call
    int n_total = 0;      // keys available (cache length, includes the new rows)
    int q_offset = 0;     // absolute position of the first new query
    int n_heads = 0;
    int n_kv_heads = 0;
    int head_dim = 0;
};

namespace parallel {
/// y[t][o] = sum_i x[t][i] * w[o][i] + bias[o]; bias may be empty.
void linear(std::span<const float> x, std::span<const float> w, std::span<const float> bias, std::span<float> y,
            int rows, int in, int out);
void layer_norm(std::span<const float> x, std::span<const float> gamma, std::span<const float> beta, float eps,
                std::span<float> y, int rows, int dim);
void rms_norm(std::span<const float> x, std::span<const float> gamma, float eps, std::span<float> y, int rows,
              int dim);
void gelu_tanh(std::span<float> x);
/// gate = silu(gate) * up
void silu_mul(std::span<float> gate, std::span<const float> up);
/// Rotates pairs (i, i + head_dim/2) of every head; rows are consecutive positions from first_pos.
void rope(std::span<float> x, int rows, int n_heads, int head_dim, int first_pos, float theta);
/// Softmax with blocked entries forced to weight 0. A row with every entry blocked yields all zeros.
void masked_softmax(std::span<const float> scores, std::span<const uint8_t> blocked, std::span<float> out);
/// Causal multi-head attention over a key/value cache.
/// q is [n_new][n_heads*head_dim]; k and v are [n_total][n_kv_heads*head_dim].
/// blocked and weights are [n_heads][n_new][n_total] or empty.
void attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
               const AttentionShape& shape, std::span<const uint8_t> blocked, std::span<float> weights,
               std::span<float> out);
}  // namespace parallel

// Same contracts, serial and unoptimized.
namespace reference {
void linear(std::span<const float> x, std::span<const float> w, std::span<const float> bias, std::span<float> y,
            int rows, int in, int out);
void layer_norm(std::span<const float> x, std::span<const float> gamma, std::span<const float> beta, float eps,
                std::span<float> y, int rows, int dim);
void rms_norm(std::span<const float> x, std::span<const float> gamma, float eps, std::span<float> y, int rows,
              int dim);
void gelu_tanh(std::span<float> x);
void silu_mul(std::span<float> gate, std::span<const float> up);
void rope(std::span<float> x, int rows, int n_heads, int head_dim, int first_pos, float theta);
void masked_softmax(std::span<const float> scores, std::span<const uint8_t> blocked, std::span<float> out);
void attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
               const AttentionShape& shape, std::span<const uint8_t> blocked, std::span<float> weights,
               std::span<float> out);
}  // namespace reference

}  // namespace latenthop::kernels
