#pragma once

#include <filesystem>

#include "latenthop/config.hpp"
#include "latenthop/model.hpp"
#include "latenthop/tokenizer.hpp"

namespace latenthop {

/// A model directory: model_config.json, model.safetensors, vocab.json, merges.txt.
struct ModelBundle {
    Model model;
    BpeTokenizer tokenizer;

    static ModelBundle load(const std::filesystem::path& dir);
};

}  // namespace latenthop
