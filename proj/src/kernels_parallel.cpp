#include <omp.h>

#include <cmath>
#include <limits>
#include <vector>

#include "latenthop/kernels.hpp"

namespace latenthop::kernels::parallel {

namespace {

// Below this many multiply-adds a region runs on the calling thread.
constexpr long kMinParallelWork = 1L << 15;

// Eight independent accumulators, reduced in a fixed order, so the result
// depends only on the operands and never on scheduling.
inline float dot(const float* a, const float* b, int n) {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    }
    for (; i < n; ++i) acc[0] += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

}  // namespace

void linear(std::span<const float> x, std::span<const float> w, std::span<const float> bias, std::span<float> y,
            int rows, int in, int out) {
    const float* xp = x.data();
    const float* wp = w.data();
    const bool has_bias = !bias.empty();
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long>(rows) * out * in > kMinParallelWork)
    for (int t = 0; t < rows; ++t) {
        for (int o = 0; o < out; ++o) {
            const float acc = dot(xp + static_cast<size_t>(t) * in, wp + static_cast<size_t>(o) * in, in);
            y[static_cast<size_t>(t) * out + o] = acc + (has_bias ? bias[o] : 0.0f);
        }
    }
}

void layer_norm(std::span<const float> x, std::span<const float> gamma, std::span<const float> beta, float eps,
                std::span<float> y, int rows, int dim) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * dim > kMinParallelWork)
    for (int t = 0; t < rows; ++t) {
        const float* row = x.data() + static_cast<size_t>(t) * dim;
        double mean = 0.0;
        for (int i = 0; i < dim; ++i) mean += row[i];
        mean /= dim;
        double var = 0.0;
        for (int i = 0; i < dim; ++i) var += (row[i] - mean) * (row[i] - mean);
        const float inv = static_cast<float>(1.0 / std::sqrt(var / dim + eps));
        const auto m = static_cast<float>(mean);
        float* dst = y.data() + static_cast<size_t>(t) * dim;
        for (int i = 0; i < dim; ++i) dst[i] = (row[i] - m) * inv * gamma[i] + beta[i];
    }
}

void rms_norm(std::span<const float> x, std::span<const float> gamma, float eps, std::span<float> y, int rows,
              int dim) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * dim > kMinParallelWork)
    for (int t = 0; t < rows; ++t) {
        const float* row = x.data() + static_cast<size_t>(t) * dim;
        double ss = 0.0;
        for (int i = 0; i < dim; ++i) ss += static_cast<double>(row[i]) * row[i];
        const float inv = static_cast<float>(1.0 / std::sqrt(ss / dim + eps));
        float* dst = y.data() + static_cast<size_t>(t) * dim;
        for (int i = 0; i < dim; ++i) dst[i] = gamma[i] * (row[i] * inv);
    }
}

void gelu_tanh(std::span<float> x) {
    constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
    const long n = static_cast<long>(x.size());
#pragma omp parallel for schedule(static) if (n > kMinParallelWork)
    for (long i = 0; i < n; ++i) {
        const float v = x[i];
        x[i] = 0.5f * v * (1.0f + std::tanh(k * (v + 0.044715f * v * v * v)));
    }
}

void silu_mul(std::span<float> gate, std::span<const float> up) {
    const long n = static_cast<long>(gate.size());
#pragma omp parallel for schedule(static) if (n > kMinParallelWork)
    for (long i = 0; i < n; ++i) {
        const float g = gate[i];
        gate[i] = g / (1.0f + std::exp(-g)) * up[i];
    }
}

void rope(std::span<float> x, int rows, int n_heads, int head_dim, int first_pos, float theta) {
    const int half = head_dim / 2;
    std::vector<float> inv_freq(half);
    for (int i = 0; i < half; ++i) {
        inv_freq[i] = 1.0f / std::pow(theta, static_cast<float>(2 * i) / static_cast<float>(head_dim));
    }
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * n_heads * head_dim > kMinParallelWork)
    for (int t = 0; t < rows; ++t) {
        const auto pos = static_cast<float>(first_pos + t);
        for (int i = 0; i < half; ++i) {
            const float angle = pos * inv_freq[i];
            const float c = std::cos(angle);
            const float s = std::sin(angle);
            for (int h = 0; h < n_heads; ++h) {
                float* v = x.data() + (static_cast<size_t>(t) * n_heads + h) * head_dim;
                const float a = v[i];
                const float b = v[i + half];
                v[i] = a * c - b * s;
                v[i + half] = b * c + a * s;
            }
        }
    }
}

void masked_softmax(std::span<const float> scores, std::span<const uint8_t> blocked, std::span<float> out) {
    float max = -std::numeric_limits<float>::infinity();
    for (size_t k = 0; k < scores.size(); ++k) {
        if (!blocked[k] && scores[k] > max) max = scores[k];
    }
    if (std::isinf(max)) {
        for (float& o : out) o = 0.0f;
        return;
    }
    float sum = 0.0f;
    for (size_t k = 0; k < scores.size(); ++k) {
        const float e = blocked[k] ? 0.0f : std::exp(scores[k] - max);
        out[k] = e;
        sum += e;
    }
    const float inv = 1.0f / sum;
    for (size_t k = 0; k < scores.size(); ++k) out[k] *= inv;
}

void attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
               const AttentionShape& s, std::span<const uint8_t> blocked, std::span<float> weights,
               std::span<float> out) {
    const int group = s.n_heads / s.n_kv_heads;
    const int q_stride = s.n_heads * s.head_dim;
    const int kv_stride = s.n_kv_heads * s.head_dim;
    const float scale = 1.0f / std::sqrt(static_cast<float>(s.head_dim));
    const long work = static_cast<long>(s.n_heads) * s.n_new * s.n_total * s.head_dim;
#pragma omp parallel if (work > kMinParallelWork)
    {
        std::vector<float> scores(s.n_total);
        std::vector<uint8_t> mask(s.n_total);
        std::vector<float> probs(s.n_total);
        std::vector<float> acc(s.head_dim);
#pragma omp for collapse(2) schedule(static)
        for (int h = 0; h < s.n_heads; ++h) {
            for (int i = 0; i < s.n_new; ++i) {
                const int kvh = h / group;
                const int qpos = s.q_offset + i;
                const size_t row = (static_cast<size_t>(h) * s.n_new + i) * s.n_total;
                const float* qv = q.data() + static_cast<size_t>(i) * q_stride + h * s.head_dim;
                for (int j = 0; j < s.n_total; ++j) {
                    mask[j] = (j > qpos) || (!blocked.empty() && blocked[row + j]);
                    scores[j] = mask[j] ? 0.0f
                                        : dot(qv, k.data() + static_cast<size_t>(j) * kv_stride + kvh * s.head_dim,
                                              s.head_dim) * scale;
                }
                masked_softmax(scores, mask, probs);
                if (!weights.empty()) {
                    for (int j = 0; j < s.n_total; ++j) weights[row + j] = probs[j];
                }
                std::fill(acc.begin(), acc.end(), 0.0f);
                for (int j = 0; j <= qpos && j < s.n_total; ++j) {
                    const float p = probs[j];
                    if (p == 0.0f) continue;
                    const float* vv = v.data() + static_cast<size_t>(j) * kv_stride + kvh * s.head_dim;
                    for (int d = 0; d < s.head_dim; ++d) acc[d] += p * vv[d];
                }
                float* dst = out.data() + static_cast<size_t>(i) * q_stride + h * s.head_dim;
                for (int d = 0; d < s.head_dim; ++d) dst[d] = acc[d];
            }
        }
    }
}

}  // namespace latenthop::kernels::parallel
