#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "latenthop/bundle.hpp"
#include "latenthop/model.hpp"
#include "latenthop/safetensors.hpp"

namespace test_support {

inline std::filesystem::path fixtures() { return LATENTHOP_FIXTURES; }

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("latenthop_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline const latenthop::ModelBundle& gpt2() {
    static const auto b = latenthop::ModelBundle::load(fixtures() / "models" / "gpt2-tiny");
    return b;
}

inline const latenthop::ModelBundle& llama() {
    static const auto b = latenthop::ModelBundle::load(fixtures() / "models" / "llama-tiny");
    return b;
}

/// Random learned-position model written through the safetensors path.
inline latenthop::Model random_gpt2(int n_layers, int d = 16, int heads = 2, int vocab = 40, int ctx = 48,
                                    unsigned seed = 7) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> nd(0.0f, 0.2f);
    std::map<std::string, std::pair<std::vector<int64_t>, std::vector<float>>> t;
    auto add = [&](const std::string& name, std::vector<int64_t> shape, float fill = NAN) {
        int64_t n = 1;
        for (auto s : shape) n *= s;
        std::vector<float> v(static_cast<size_t>(n));
        for (auto& x : v) x = std::isnan(fill) ? nd(rng) : fill;
        t[name] = {shape, v};
    };
    add("wte.weight", {vocab, d});
    add("wpe.weight", {ctx, d});
    for (int l = 0; l < n_layers; ++l) {
        const std::string p = "h." + std::to_string(l) + ".";
        add(p + "ln_1.weight", {d}, 1.0f);
        add(p + "ln_1.bias", {d}, 0.0f);
        add(p + "ln_2.weight", {d}, 1.0f);
        add(p + "ln_2.bias", {d}, 0.0f);
        add(p + "attn.c_attn.weight", {d, 3 * d});
        add(p + "attn.c_attn.bias", {3 * d});
        add(p + "attn.c_proj.weight", {d, d});
        add(p + "attn.c_proj.bias", {d});
        add(p + "mlp.c_fc.weight", {d, 4 * d});
        add(p + "mlp.c_fc.bias", {4 * d});
        add(p + "mlp.c_proj.weight", {4 * d, d});
        add(p + "mlp.c_proj.bias", {d});
    }
    add("ln_f.weight", {d}, 1.0f);
    add("ln_f.bias", {d}, 0.0f);
    const auto path = std::filesystem::temp_directory_path() /
                      ("latenthop_random_" + std::to_string(n_layers) + "_" + std::to_string(seed) + ".safetensors");
    latenthop::write_tensor_file(path, t);
    latenthop::ModelConfig cfg;
    cfg.architecture = latenthop::Architecture::PreLayerNormLearnedPositions;
    cfg.n_layers = n_layers;
    cfg.d_model = d;
    cfg.n_heads = heads;
    cfg.head_dim = d / heads;
    cfg.vocab_size = vocab;
    cfg.max_context = ctx;
    return latenthop::Model::load(path, cfg);
}

inline double max_rel_diff(std::span<const float> a, std::span<const float> b) {
    double worst = 0.0, scale = 0.0;
    for (float x : b) scale = std::max(scale, static_cast<double>(std::abs(x)));
    for (size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]) / std::max(scale, 1e-12));
    }
    return worst;
}

}  // namespace test_support
