#include <cmath>
#include <limits>
#include <vector>

#include "latenthop/kernels.hpp"

namespace latenthop::kernels::reference {

void linear(std::span<const float> x, std::span<const float> w, std::span<const float> bias, std::span<float> y,
            int rows, int in, int out) {
    for (int t = 0; t < rows; ++t) {
        for (int o = 0; o < out; ++o) {
            float acc = 0.0f;
            for (int i = 0; i < in; ++i) acc += x[t * in + i] * w[static_cast<size_t>(o) * in + i];
            y[t * out + o] = acc + (bias.empty() ? 0.0f : bias[o]);
        }
    }
}

void layer_norm(std::span<const float> x, std::span<const float> gamma, std::span<const float> beta, float eps,
                std::span<float> y, int rows, int dim) {
    for (int t = 0; t < rows; ++t) {
        const float* row = x.data() + t * dim;
        double mean = 0.0;
        for (int i = 0; i < dim; ++i) mean += row[i];
        mean /= dim;
        double var = 0.0;
        for (int i = 0; i < dim; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= dim;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < dim; ++i) {
            y[t * dim + i] = static_cast<float>((row[i] - mean) * inv) * gamma[i] + beta[i];
        }
    }
}

void rms_norm(std::span<const float> x, std::span<const float> gamma, float eps, std::span<float> y, int rows,
              int dim) {
    for (int t = 0; t < rows; ++t) {
        const float* row = x.data() + t * dim;
        double ss = 0.0;
        for (int i = 0; i < dim; ++i) ss += static_cast<double>(row[i]) * row[i];
        const double inv = 1.0 / std::sqrt(ss / dim + eps);
        for (int i = 0; i < dim; ++i) y[t * dim + i] = gamma[i] * static_cast<float>(row[i] * inv);
    }
}

void gelu_tanh(std::span<float> x) {
    const double k = std::sqrt(2.0 / M_PI);
    for (float& v : x) {
        const double d = v;
        v = static_cast<float>(0.5 * d * (1.0 + std::tanh(k * (d + 0.044715 * d * d * d))));
    }
}

void silu_mul(std::span<float> gate, std::span<const float> up) {
    for (size_t i = 0; i < gate.size(); ++i) {
        const double g = gate[i];
        gate[i] = static_cast<float>(g / (1.0 + std::exp(-g)) * up[i]);
    }
}

void rope(std::span<float> x, int rows, int n_heads, int head_dim, int first_pos, float theta) {
    const int half = head_dim / 2;
    for (int t = 0; t < rows; ++t) {
        const double pos = first_pos + t;
        for (int h = 0; h < n_heads; ++h) {
            float* v = x.data() + (static_cast<size_t>(t) * n_heads + h) * head_dim;
            for (int i = 0; i < half; ++i) {
                const double freq = std::pow(static_cast<double>(theta), -2.0 * i / head_dim);
                const double c = std::cos(pos * freq);
                const double s = std::sin(pos * freq);
                const double a = v[i];
                const double b = v[i + half];
                v[i] = static_cast<float>(a * c - b * s);
                v[i + half] = static_cast<float>(b * c + a * s);
            }
        }
    }
}

void masked_softmax(std::span<const float> scores, std::span<const uint8_t> blocked, std::span<float> out) {
    double max = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < scores.size(); ++k) {
        if (!blocked[k]) max = std::max(max, static_cast<double>(scores[k]));
    }
    if (std::isinf(max)) {
        for (float& o : out) o = 0.0f;
        return;
    }
    double sum = 0.0;
    for (size_t k = 0; k < scores.size(); ++k) {
        if (!blocked[k]) sum += std::exp(scores[k] - max);
    }
    for (size_t k = 0; k < scores.size(); ++k) {
        out[k] = blocked[k] ? 0.0f : static_cast<float>(std::exp(scores[k] - max) / sum);
    }
}

void attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
               const AttentionShape& s, std::span<const uint8_t> blocked, std::span<float> weights,
               std::span<float> out) {
    const int group = s.n_heads / s.n_kv_heads;
    const int q_stride = s.n_heads * s.head_dim;
    const int kv_stride = s.n_kv_heads * s.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
    std::vector<float> scores(s.n_total);
    std::vector<uint8_t> mask(s.n_total);
    std::vector<float> probs(s.n_total);
    for (int h = 0; h < s.n_heads; ++h) {
        const int kvh = h / group;
        for (int i = 0; i < s.n_new; ++i) {
            const int qpos = s.q_offset + i;
            const size_t row = (static_cast<size_t>(h) * s.n_new + i) * s.n_total;
            for (int j = 0; j < s.n_total; ++j) {
                double dot = 0.0;
                for (int d = 0; d < s.head_dim; ++d) {
                    dot += static_cast<double>(q[i * q_stride + h * s.head_dim + d]) *
                           k[static_cast<size_t>(j) * kv_stride + kvh * s.head_dim + d];
                }
                scores[j] = static_cast<float>(dot * scale);
                mask[j] = (j > qpos) || (!blocked.empty() && blocked[row + j]);
            }
            masked_softmax(scores, mask, probs);
            if (!weights.empty()) {
                for (int j = 0; j < s.n_total; ++j) weights[row + j] = probs[j];
            }
            for (int d = 0; d < s.head_dim; ++d) {
                double acc = 0.0;
                for (int j = 0; j < s.n_total; ++j) {
                    acc += static_cast<double>(probs[j]) * v[static_cast<size_t>(j) * kv_stride + kvh * s.head_dim + d];
                }
                out[i * q_stride + h * s.head_dim + d] = static_cast<float>(acc);
            }
        }
    }
}

}  // namespace latenthop::kernels::reference
