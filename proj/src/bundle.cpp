#include "latenthop/bundle.hpp"

#include "latenthop/error.hpp"

namespace latenthop {

ModelBundle ModelBundle::load(const std::filesystem::path& dir) {
    for (const char* f : {"model_config.json", "model.safetensors", "vocab.json", "merges.txt"}) {
        if (!std::filesystem::exists(dir / f)) throw LoadError("model directory " + dir.string() + " lacks " + f);
    }
    const auto config = load_config(dir / "model_config.json");
    auto tokenizer = BpeTokenizer::load(dir / "vocab.json", dir / "merges.txt");
    if (tokenizer.vocab_size() > config.vocab_size) {
        throw LoadError("tokenizer has " + std::to_string(tokenizer.vocab_size()) + " tokens, model only " +
                        std::to_string(config.vocab_size));
    }
    return {Model::load(dir / "model.safetensors", config), std::move(tokenizer)};
}

}  // namespace latenthop
