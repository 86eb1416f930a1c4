#include "latenthop/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "latenthop/error.hpp"

namespace latenthop {

namespace kp = kernels::parallel;
namespace kr = kernels::reference;
using kernels::Backend;

std::string_view to_string(SublayerKind kind) { return kind == SublayerKind::Attention ? "attention" : "mlp"; }

// ---------------------------------------------------------------- trace

bool ForwardTrace::has_logits(int position) const {
    if (logits_.empty() || vocab_ == 0) return false;
    const int rows = static_cast<int>(logits_.size() / vocab_);
    return position >= logits_first_ && position < logits_first_ + rows;
}

std::span<const float> ForwardTrace::logits(int position) const {
    if (!has_logits(position)) throw ContractError("logits for position " + std::to_string(position) + " were not captured");
    return {logits_.data() + static_cast<size_t>(position - logits_first_) * vocab_, static_cast<size_t>(vocab_)};
}

std::span<const float> ForwardTrace::residual_in(int layer, int position) const {
    if (residual_.empty()) throw ContractError("residual stream was not captured");
    if (layer < 0 || layer > n_layers_ || position < 0 || position >= seq_len_) {
        throw ContractError("residual coordinate (" + std::to_string(layer) + ", " + std::to_string(position) +
                            ") out of range");
    }
    return {residual_.data() + (static_cast<size_t>(layer) * seq_len_ + position) * d_model_,
            static_cast<size_t>(d_model_)};
}

std::span<const float> ForwardTrace::sublayer_update(SublayerKind kind, int layer, int position) const {
    if (updates_.empty()) throw ContractError("sublayer updates were not captured");
    if (layer < 0 || layer >= n_layers_ || position < 0 || position >= seq_len_) {
        throw ContractError("sublayer coordinate (" + std::to_string(layer) + ", " + std::to_string(position) +
                            ") out of range");
    }
    const size_t k = static_cast<size_t>(kind);
    return {updates_.data() + ((k * n_layers_ + layer) * seq_len_ + position) * d_model_,
            static_cast<size_t>(d_model_)};
}

std::span<const float> ForwardTrace::attention_row(int layer, int head, int query) const {
    if (attention_.empty()) throw ContractError("attention weights were not captured");
    if (layer < 0 || layer >= n_layers_ || head < 0 || head >= n_heads_ || query < 0 || query >= seq_len_) {
        throw ContractError("attention coordinate out of range");
    }
    return {attention_.data() + ((static_cast<size_t>(layer) * n_heads_ + head) * seq_len_ + query) * seq_len_,
            static_cast<size_t>(seq_len_)};
}

// ---------------------------------------------------------------- decode params

DecodeParams DecodeParams::greedy(int max_new_tokens) {
    DecodeParams p;
    p.max_new_tokens = max_new_tokens;
    return p;
}

DecodeParams DecodeParams::sampled(int n_samples, uint64_t seed, float temperature, int max_new_tokens) {
    DecodeParams p;
    p.mode = Mode::Sampled;
    p.n_samples = n_samples;
    p.seed = seed;
    p.temperature = temperature;
    p.max_new_tokens = max_new_tokens;
    return p;
}

void DecodeParams::validate() const {
    if (max_new_tokens < 0) throw ContractError("max_new_tokens must be >= 0");
    if (n_samples < 1) throw ContractError("n_samples must be >= 1");
    if (mode == Mode::Greedy && n_samples != 1) throw ContractError("greedy decoding takes exactly one sample");
    if (mode == Mode::Sampled && !(temperature > 0.0f)) throw ContractError("sampling temperature must be > 0");
}

// ---------------------------------------------------------------- loading

namespace {

struct Loader {
    const TensorFile& file;
    std::string prefix;

    std::vector<float> get(const std::string& name, std::vector<int64_t> shape) const {
        const std::string full = prefix + name;
        if (!file.contains(full)) throw LoadError(file.origin() + ": missing tensor '" + full + "'");
        const TensorInfo& info = file.info(full);
        if (info.shape != shape) {
            std::string want, got;
            for (auto d : shape) want += (want.empty() ? "" : "x") + std::to_string(d);
            for (auto d : info.shape) got += (got.empty() ? "" : "x") + std::to_string(d);
            throw LoadError(file.origin() + ": tensor '" + full + "' has shape [" + got + "], expected [" + want + "]");
        }
        return file.read_f32(full);
    }
};

// [rows][cols] -> [cols][rows]
std::vector<float> transpose(const std::vector<float>& m, int rows, int cols) {
    std::vector<float> t(m.size());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) t[static_cast<size_t>(c) * rows + r] = m[static_cast<size_t>(r) * cols + c];
    }
    return t;
}

std::string detect_prefix(const TensorFile& f, const std::vector<std::string>& candidates, const std::string& probe) {
    for (const auto& c : candidates) {
        if (f.contains(c + probe)) return c;
    }
    return candidates.front();
}

}  // namespace

Model Model::load(const std::filesystem::path& weights_file, const ModelConfig& config) {
    return from_tensors(TensorFile::open(weights_file), config);
}

Model Model::from_tensors(const TensorFile& f, const ModelConfig& config) {
    config.validate();
    Model m;
    m.config_ = config;
    const int d = config.d_model;
    const int V = config.vocab_size;
    const int ff = config.ff_dim();
    const int qdim = config.n_heads * config.head_dim;
    const int kvdim = config.kv_heads() * config.head_dim;
    m.blocks_.resize(static_cast<size_t>(config.n_layers));

    if (config.architecture == Architecture::PreLayerNormLearnedPositions) {
        const Loader L{f, detect_prefix(f, {"transformer.", ""}, "wte.weight")};
        m.embed_ = L.get("wte.weight", {V, d});
        const auto wpe_info_name = L.prefix + "wpe.weight";
        if (!f.contains(wpe_info_name)) throw LoadError(f.origin() + ": missing tensor '" + wpe_info_name + "'");
        const auto n_pos = f.info(wpe_info_name).shape.empty() ? 0 : f.info(wpe_info_name).shape[0];
        if (n_pos < config.max_context) {
            throw LoadError(f.origin() + ": tensor '" + wpe_info_name + "' covers " + std::to_string(n_pos) +
                            " positions, config declares max_context " + std::to_string(config.max_context));
        }
        m.positions_ = L.get("wpe.weight", {n_pos, d});
        for (int l = 0; l < config.n_layers; ++l) {
            const std::string p = "h." + std::to_string(l) + ".";
            Block& b = m.blocks_[static_cast<size_t>(l)];
            b.norm1 = {L.get(p + "ln_1.weight", {d}), L.get(p + "ln_1.bias", {d})};
            b.norm2 = {L.get(p + "ln_2.weight", {d}), L.get(p + "ln_2.bias", {d})};
            // Conv1D weights are stored [in][out].
            b.qkv = {transpose(L.get(p + "attn.c_attn.weight", {d, 3 * d}), d, 3 * d),
                     L.get(p + "attn.c_attn.bias", {3 * d}), d, 3 * d};
            b.attn_out = {transpose(L.get(p + "attn.c_proj.weight", {d, d}), d, d), L.get(p + "attn.c_proj.bias", {d}),
                          d, d};
            b.up = {transpose(L.get(p + "mlp.c_fc.weight", {d, ff}), d, ff), L.get(p + "mlp.c_fc.bias", {ff}), d, ff};
            b.down = {transpose(L.get(p + "mlp.c_proj.weight", {ff, d}), ff, d), L.get(p + "mlp.c_proj.bias", {d}), ff,
                      d};
        }
        m.final_norm_ = {L.get("ln_f.weight", {d}), L.get("ln_f.bias", {d})};
        if (!config.tie_embeddings) m.lm_head_ = Loader{f, ""}.get("lm_head.weight", {V, d});
    } else {
        const Loader L{f, detect_prefix(f, {"model.", ""}, "embed_tokens.weight")};
        m.embed_ = L.get("embed_tokens.weight", {V, d});
        for (int l = 0; l < config.n_layers; ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            Block& b = m.blocks_[static_cast<size_t>(l)];
            b.norm1 = {L.get(p + "input_layernorm.weight", {d}), {}};
            b.norm2 = {L.get(p + "post_attention_layernorm.weight", {d}), {}};
            auto wq = L.get(p + "self_attn.q_proj.weight", {qdim, d});
            auto wk = L.get(p + "self_attn.k_proj.weight", {kvdim, d});
            auto wv = L.get(p + "self_attn.v_proj.weight", {kvdim, d});
            std::vector<float> fused;
            fused.reserve(wq.size() + wk.size() + wv.size());
            fused.insert(fused.end(), wq.begin(), wq.end());
            fused.insert(fused.end(), wk.begin(), wk.end());
            fused.insert(fused.end(), wv.begin(), wv.end());
            b.qkv = {std::move(fused), {}, d, qdim + 2 * kvdim};
            b.attn_out = {L.get(p + "self_attn.o_proj.weight", {d, qdim}), {}, qdim, d};
            b.gate = {L.get(p + "mlp.gate_proj.weight", {ff, d}), {}, d, ff};
            b.up = {L.get(p + "mlp.up_proj.weight", {ff, d}), {}, d, ff};
            b.down = {L.get(p + "mlp.down_proj.weight", {d, ff}), {}, ff, d};
        }
        m.final_norm_ = {L.get("norm.weight", {d}), {}};
        if (!config.tie_embeddings || f.contains("lm_head.weight")) {
            m.lm_head_ = Loader{f, ""}.get("lm_head.weight", {V, d});
        }
    }
    // FNV-1a over the config hash and the loaded parameters.
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    auto mix_vec = [&](const std::vector<float>& v) { mix(v.data(), v.size() * sizeof(float)); };
    const std::string cfg = config.fingerprint();
    mix(cfg.data(), cfg.size());
    mix_vec(m.embed_);
    mix_vec(m.positions_);
    for (const auto& b : m.blocks_) {
        for (const auto* n : {&b.norm1, &b.norm2}) {
            mix_vec(n->gamma);
            mix_vec(n->beta);
        }
        for (const auto* l : {&b.qkv, &b.attn_out, &b.up, &b.gate, &b.down}) {
            mix_vec(l->w);
            mix_vec(l->b);
        }
    }
    mix_vec(m.final_norm_.gamma);
    mix_vec(m.final_norm_.beta);
    mix_vec(m.lm_head_);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    m.fingerprint_ = hex;
    return m;
}

// ---------------------------------------------------------------- forward

void Model::normalize(const Norm& norm, std::span<const float> x, std::span<float> y, int rows,
                      Backend backend) const {
    const int d = config_.d_model;
    const float eps = config_.norm_epsilon;
    if (norm.beta.empty()) {
        backend == Backend::Parallel ? kp::rms_norm(x, norm.gamma, eps, y, rows, d)
                                     : kr::rms_norm(x, norm.gamma, eps, y, rows, d);
    } else {
        backend == Backend::Parallel ? kp::layer_norm(x, norm.gamma, norm.beta, eps, y, rows, d)
                                     : kr::layer_norm(x, norm.gamma, norm.beta, eps, y, rows, d);
    }
}

DecodeState Model::empty_state() const {
    DecodeState s;
    s.keys.resize(static_cast<size_t>(config_.n_layers));
    s.values.resize(static_cast<size_t>(config_.n_layers));
    return s;
}

void Model::run(DecodeState& state, std::span<const int32_t> tokens, const InterventionPlan& plan,
                const CaptureSpec* capture, ForwardTrace* trace, Backend backend) const {
    const ModelConfig& c = config_;
    const int d = c.d_model;
    const int n = static_cast<int>(tokens.size());
    const int first = state.length;
    const int total = first + n;
    const int qdim = c.n_heads * c.head_dim;
    const int kvdim = c.kv_heads() * c.head_dim;
    const int ff = c.ff_dim();
    const bool gated = c.architecture == Architecture::RmsNormRotaryGatedMlp;
    if (n == 0) return;
    if (total > c.max_context) {
        throw ContractError("sequence of " + std::to_string(total) + " tokens exceeds max_context " +
                            std::to_string(c.max_context));
    }

    auto linear = [&](const Linear& lin, std::span<const float> x, std::span<float> y, int rows) {
        backend == Backend::Parallel ? kp::linear(x, lin.w, lin.b, y, rows, lin.in, lin.out)
                                     : kr::linear(x, lin.w, lin.b, y, rows, lin.in, lin.out);
    };
    auto apply_overwrites = [&](int layer, std::vector<float>& x) {
        for (const auto& o : plan.overwrites()) {
            if (o.layer == layer && o.position >= first && o.position < total) {
                std::copy(o.values.begin(), o.values.end(), x.begin() + static_cast<ptrdiff_t>(o.position - first) * d);
            }
        }
    };
    auto record = [&](std::vector<float>& dst, size_t base, const std::vector<float>& src) {
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<ptrdiff_t>(base + static_cast<size_t>(first) * d));
    };

    std::vector<float> x(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        const int32_t id = tokens[i];
        if (id < 0 || id >= c.vocab_size) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
        const float* e = embed_.data() + static_cast<size_t>(id) * d;
        float* dst = x.data() + static_cast<size_t>(i) * d;
        if (positions_.empty()) {
            std::copy(e, e + d, dst);
        } else {
            const float* p = positions_.data() + static_cast<size_t>(first + i) * d;
            for (int k = 0; k < d; ++k) dst[k] = e[k] + p[k];
        }
    }

    std::vector<float> h(x.size());
    std::vector<float> qkv(static_cast<size_t>(n) * (qdim + 2 * kvdim));
    std::vector<float> q(static_cast<size_t>(n) * qdim);
    std::vector<float> ctx(static_cast<size_t>(n) * qdim);
    std::vector<float> upd(x.size());
    std::vector<float> hidden(static_cast<size_t>(n) * ff);
    std::vector<float> gate_buf(gated ? hidden.size() : 0);
    std::vector<uint8_t> mask;
    std::vector<float> weights;
    const bool want_res = trace && capture->residual;
    const bool want_upd = trace && capture->sublayers;
    const bool want_att = trace && capture->attention;
    const size_t seq = trace ? static_cast<size_t>(trace->seq_len_) : 0;

    for (int l = 0; l < c.n_layers; ++l) {
        const Block& blk = blocks_[static_cast<size_t>(l)];
        apply_overwrites(l, x);
        if (want_res) record(trace->residual_, static_cast<size_t>(l) * seq * d, x);

        // attention sublayer
        normalize(blk.norm1, x, h, n, backend);
        linear(blk.qkv, h, qkv, n);
        auto& keys = state.keys[static_cast<size_t>(l)];
        auto& vals = state.values[static_cast<size_t>(l)];
        keys.resize(static_cast<size_t>(total) * kvdim);
        vals.resize(static_cast<size_t>(total) * kvdim);
        const int row = qdim + 2 * kvdim;
        for (int i = 0; i < n; ++i) {
            const float* src = qkv.data() + static_cast<size_t>(i) * row;
            std::copy(src, src + qdim, q.begin() + static_cast<ptrdiff_t>(i) * qdim);
            std::copy(src + qdim, src + qdim + kvdim, keys.begin() + static_cast<ptrdiff_t>(first + i) * kvdim);
            std::copy(src + qdim + kvdim, src + row, vals.begin() + static_cast<ptrdiff_t>(first + i) * kvdim);
        }
        if (gated) {
            std::span<float> new_keys(keys.data() + static_cast<size_t>(first) * kvdim, static_cast<size_t>(n) * kvdim);
            if (backend == Backend::Parallel) {
                kp::rope(q, n, c.n_heads, c.head_dim, first, c.rope_theta);
                kp::rope(new_keys, n, c.kv_heads(), c.head_dim, first, c.rope_theta);
            } else {
                kr::rope(q, n, c.n_heads, c.head_dim, first, c.rope_theta);
                kr::rope(new_keys, n, c.kv_heads(), c.head_dim, first, c.rope_theta);
            }
        }

        mask.clear();
        for (const auto& b : plan.blocks()) {
            if (b.layer != l || b.query < first || b.query >= total) continue;
            if (mask.empty()) mask.assign(static_cast<size_t>(c.n_heads) * n * total, 0);
            for (int head = 0; head < c.n_heads; ++head) {
                if (b.head && *b.head != head) continue;
                mask[(static_cast<size_t>(head) * n + (b.query - first)) * total + b.key] = 1;
            }
        }
        if (want_att) weights.assign(static_cast<size_t>(c.n_heads) * n * total, 0.0f);
        const kernels::AttentionShape shape{n, total, first, c.n_heads, c.kv_heads(), c.head_dim};
        backend == Backend::Parallel ? kp::attention(q, keys, vals, shape, mask, weights, ctx)
                                     : kr::attention(q, keys, vals, shape, mask, weights, ctx);
        if (want_att) {
            for (int head = 0; head < c.n_heads; ++head) {
                for (int i = 0; i < n; ++i) {
                    const float* src = weights.data() + (static_cast<size_t>(head) * n + i) * total;
                    float* dst = trace->attention_.data() +
                                 ((static_cast<size_t>(l) * c.n_heads + head) * seq + first + i) * seq;
                    std::copy(src, src + total, dst);
                }
            }
        }
        linear(blk.attn_out, ctx, upd, n);
        if (want_upd) record(trace->updates_, (static_cast<size_t>(SublayerKind::Attention) * c.n_layers + l) * seq * d, upd);
        for (size_t i = 0; i < x.size(); ++i) x[i] += upd[i];

        // MLP sublayer
        normalize(blk.norm2, x, h, n, backend);
        if (gated) {
            linear(blk.gate, h, gate_buf, n);
            linear(blk.up, h, hidden, n);
            backend == Backend::Parallel ? kp::silu_mul(gate_buf, hidden) : kr::silu_mul(gate_buf, hidden);
            linear(blk.down, gate_buf, upd, n);
        } else {
            linear(blk.up, h, hidden, n);
            backend == Backend::Parallel ? kp::gelu_tanh(hidden) : kr::gelu_tanh(hidden);
            linear(blk.down, hidden, upd, n);
        }
        if (want_upd) record(trace->updates_, (static_cast<size_t>(SublayerKind::Mlp) * c.n_layers + l) * seq * d, upd);
        for (size_t i = 0; i < x.size(); ++i) x[i] += upd[i];
    }
    apply_overwrites(c.n_layers, x);
    if (want_res) record(trace->residual_, static_cast<size_t>(c.n_layers) * seq * d, x);
    state.length = total;

    // Logits: every row for a full trace, otherwise just the last one.
    const std::vector<float>& head = lm_head_.empty() ? embed_ : lm_head_;
    int from = n - 1;
    if (trace && capture->logits == CaptureSpec::Logits::All) from = 0;
    const int rows = n - from;
    std::vector<float> normed(static_cast<size_t>(rows) * d);
    normalize(final_norm_, std::span<const float>(x).subspan(static_cast<size_t>(from) * d), normed, rows, backend);
    std::vector<float> logits(static_cast<size_t>(rows) * c.vocab_size);
    backend == Backend::Parallel ? kp::linear(normed, head, {}, logits, rows, d, c.vocab_size)
                                 : kr::linear(normed, head, {}, logits, rows, d, c.vocab_size);
    state.last_logits.assign(logits.end() - c.vocab_size, logits.end());
    if (trace && capture->logits != CaptureSpec::Logits::None) {
        trace->logits_ = std::move(logits);
        trace->logits_first_ = first + from;
    }
}

ForwardTrace Model::forward(std::span<const int32_t> tokens, const InterventionPlan& plan, const CaptureSpec& capture,
                            Backend backend) const {
    const int n = static_cast<int>(tokens.size());
    if (n > config_.max_context) {
        throw ContractError("sequence of " + std::to_string(n) + " tokens exceeds max_context " +
                            std::to_string(config_.max_context));
    }
    plan.validate(config_, n);
    ForwardTrace t;
    t.n_layers_ = config_.n_layers;
    t.seq_len_ = n;
    t.d_model_ = config_.d_model;
    t.vocab_ = config_.vocab_size;
    t.n_heads_ = config_.n_heads;
    const size_t d = static_cast<size_t>(config_.d_model);
    const size_t L = static_cast<size_t>(config_.n_layers);
    if (capture.residual) t.residual_.assign((L + 1) * n * d, 0.0f);
    if (capture.sublayers) t.updates_.assign(2 * L * n * d, 0.0f);
    if (capture.attention) t.attention_.assign(L * config_.n_heads * static_cast<size_t>(n) * n, 0.0f);
    DecodeState state = empty_state();
    run(state, tokens, plan, &capture, &t, backend);
    return t;
}

DecodeState Model::prefill(std::span<const int32_t> tokens, const InterventionPlan& plan) const {
    plan.validate(config_, static_cast<int>(tokens.size()));
    DecodeState state = empty_state();
    run(state, tokens, plan, nullptr, nullptr, Backend::Parallel);
    return state;
}

void Model::extend(DecodeState& state, std::span<const int32_t> tokens, const InterventionPlan& plan) const {
    if (state.keys.size() != static_cast<size_t>(config_.n_layers)) state = empty_state();
    const int total = state.length + static_cast<int>(tokens.size());
    plan.validate(config_, total);
    if (auto mp = plan.min_position(); mp && *mp < state.length) {
        throw ContractError("plan addresses position " + std::to_string(*mp) + " inside an already processed prefix of " +
                            std::to_string(state.length) + " tokens");
    }
    run(state, tokens, plan, nullptr, nullptr, Backend::Parallel);
}

namespace {

int32_t argmax(std::span<const float> logits) {
    int32_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[static_cast<size_t>(best)]) best = static_cast<int32_t>(i);
    }
    return best;
}

int32_t sample(std::span<const float> logits, float temperature, std::mt19937_64& rng) {
    double max = -INFINITY;
    for (float v : logits) max = std::max(max, static_cast<double>(v));
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - max) / temperature);
        sum += p[i];
    }
    // 53 random bits -> [0, 1); avoids implementation-defined distributions.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * sum;
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return static_cast<int32_t>(i);
    }
    return static_cast<int32_t>(p.size() - 1);
}

}  // namespace

std::vector<std::vector<int32_t>> Model::generate_ids(std::span<const int32_t> prompt, const DecodeParams& params,
                                                      const InterventionPlan& plan) const {
    return generate_ids(empty_state(), prompt, params, plan);
}

std::vector<std::vector<int32_t>> Model::generate_ids(const DecodeState& prefix, std::span<const int32_t> suffix,
                                                      const DecodeParams& params, const InterventionPlan& plan) const {
    params.validate();
    const int prompt_len = prefix.length + static_cast<int>(suffix.size());
    if (prompt_len + params.max_new_tokens > config_.max_context) {
        throw ContractError("prompt of " + std::to_string(prompt_len) + " tokens plus " +
                            std::to_string(params.max_new_tokens) + " new tokens overflows max_context " +
                            std::to_string(config_.max_context));
    }
    DecodeState base = prefix;
    if (!suffix.empty()) {
        extend(base, suffix, plan);
    } else {
        plan.validate(config_, prompt_len);
        if (!plan.empty()) throw ContractError("plan cannot act on a prompt that is already fully processed");
    }
    if (base.length == 0) throw ContractError("cannot generate from an empty prompt");

    std::mt19937_64 rng(params.seed);
    std::vector<std::vector<int32_t>> out;
    out.reserve(static_cast<size_t>(params.n_samples));
    for (int s = 0; s < params.n_samples; ++s) {
        DecodeState state = base;
        std::vector<int32_t> ids;
        for (int step = 0; step < params.max_new_tokens; ++step) {
            const int32_t next = params.mode == DecodeParams::Mode::Greedy
                                     ? argmax(state.last_logits)
                                     : sample(state.last_logits, params.temperature, rng);
            if (params.stop_at_eos && config_.eos_token_id && next == *config_.eos_token_id) break;
            ids.push_back(next);
            if (step + 1 < params.max_new_tokens) {
                const int32_t tok[1] = {next};
                run(state, tok, {}, nullptr, nullptr, Backend::Parallel);
            }
        }
        out.push_back(std::move(ids));
    }
    return out;
}

std::vector<float> Model::project(std::span<const float> residual) const {
    const int d = config_.d_model;
    if (static_cast<int>(residual.size()) != d) {
        throw ContractError("projected vector has width " + std::to_string(residual.size()) + ", expected " +
                            std::to_string(d));
    }
    std::vector<float> normed(static_cast<size_t>(d));
    normalize(final_norm_, residual, normed, 1, Backend::Parallel);
    const std::vector<float>& head = lm_head_.empty() ? embed_ : lm_head_;
    std::vector<float> logits(static_cast<size_t>(config_.vocab_size));
    kp::linear(normed, head, {}, logits, 1, d, config_.vocab_size);
    return logits;
}

std::span<const float> Model::token_embedding(int32_t id) const {
    if (id < 0 || id >= config_.vocab_size) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    return {embed_.data() + static_cast<size_t>(id) * config_.d_model, static_cast<size_t>(config_.d_model)};
}

std::span<const float> Model::unembedding_row(int32_t id) const {
    if (id < 0 || id >= config_.vocab_size) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    const std::vector<float>& head = lm_head_.empty() ? embed_ : lm_head_;
    return {head.data() + static_cast<size_t>(id) * config_.d_model, static_cast<size_t>(config_.d_model)};
}

}  // namespace latenthop
