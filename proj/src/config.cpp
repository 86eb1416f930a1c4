#include "latenthop/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latenthop/error.hpp"

namespace latenthop {

using json = nlohmann::json;

std::string_view to_string(Architecture arch) {
    switch (arch) {
        case Architecture::PreLayerNormLearnedPositions:
            return "pre-layer-norm-learned-positions";
        case Architecture::RmsNormRotaryGatedMlp:
            return "rms-norm-rotary-gated-mlp";
    }
    return "unknown";
}

Architecture parse_architecture(std::string_view name) {
    if (name == "gpt2" || name == "pre-layer-norm-learned-positions") {
        return Architecture::PreLayerNormLearnedPositions;
    }
    if (name == "llama" || name == "rms-norm-rotary-gated-mlp") {
        return Architecture::RmsNormRotaryGatedMlp;
    }
    throw LoadError("unknown architecture family '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw ContractError("invalid model config: " + what); };
    if (n_layers < 1) fail("n_layers must be >= 1");
    if (vocab_size < 1) fail("vocab_size must be >= 1");
    if (n_heads < 1 || head_dim < 1) fail("n_heads and head_dim must be positive");
    if (n_heads * head_dim != d_model) {
        fail("n_heads * head_dim (" + std::to_string(n_heads * head_dim) + ") != d_model (" +
             std::to_string(d_model) + ")");
    }
    if (max_context < 1) fail("max_context must be >= 1");
    if (!(norm_epsilon > 0.0f)) fail("norm_epsilon must be positive");
    if (kv_heads() < 1 || n_heads % kv_heads() != 0) fail("n_heads must be a multiple of n_kv_heads");
    if (architecture == Architecture::RmsNormRotaryGatedMlp && head_dim % 2 != 0) {
        fail("rotary positions need an even head_dim");
    }
    if (eos_token_id && (*eos_token_id < 0 || *eos_token_id >= vocab_size)) fail("eos_token_id out of range");
}

std::string ModelConfig::fingerprint() const {
    std::ostringstream os;
    os << to_string(architecture) << ';' << n_layers << ';' << d_model << ';' << n_heads << ';' << head_dim
       << ';' << vocab_size << ';' << max_context << ';' << norm_epsilon << ';' << ff_dim() << ';'
       << kv_heads() << ';' << rope_theta << ';' << tie_embeddings;
    // FNV-1a, printed as hex.
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : os.str()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream hex;
    hex << std::hex << h;
    return hex.str();
}

ModelConfig parse_config(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw LoadError(std::string("config is not valid JSON: ") + e.what());
    }
    auto required = [&](const char* key) -> const json& {
        if (!j.contains(key)) throw LoadError(std::string("config is missing field '") + key + "'");
        return j.at(key);
    };
    ModelConfig c;
    try {
        c.architecture = parse_architecture(required("architecture").get<std::string>());
        c.n_layers = required("n_layers").get<int>();
        c.d_model = required("d_model").get<int>();
        c.n_heads = required("n_heads").get<int>();
        c.head_dim = j.value("head_dim", c.n_heads > 0 ? c.d_model / c.n_heads : 0);
        c.vocab_size = required("vocab_size").get<int>();
        c.max_context = required("max_context").get<int>();
        c.norm_epsilon = j.value("norm_epsilon", 1e-5f);
        c.d_ff = j.value("d_ff", 0);
        c.n_kv_heads = j.value("n_kv_heads", 0);
        c.rope_theta = j.value("rope_theta", 10000.0f);
        c.tie_embeddings = j.value("tie_embeddings", true);
        if (j.contains("eos_token_id") && !j["eos_token_id"].is_null()) {
            c.eos_token_id = j["eos_token_id"].get<int32_t>();
        }
    } catch (const json::type_error& e) {
        throw LoadError(std::string("config field has the wrong type: ") + e.what());
    }
    c.validate();
    return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace latenthop
