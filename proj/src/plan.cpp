#include "latenthop/plan.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latenthop/error.hpp"

namespace latenthop {

using json = nlohmann::json;

InterventionPlan& InterventionPlan::overwrite(ResidualOverwrite o) {
    overwrites_.push_back(std::move(o));
    return *this;
}

InterventionPlan& InterventionPlan::block(AttentionBlock b) {
    blocks_.push_back(b);
    return *this;
}

InterventionPlan InterventionPlan::merged(const InterventionPlan& other) const {
    InterventionPlan out = *this;
    for (const auto& o : other.overwrites_) {
        const bool clash = std::any_of(overwrites_.begin(), overwrites_.end(), [&](const ResidualOverwrite& mine) {
            return mine.layer == o.layer && mine.position == o.position;
        });
        if (clash) {
            throw ContractError("plans overwrite the same coordinate (layer " + std::to_string(o.layer) +
                                ", position " + std::to_string(o.position) + ")");
        }
        out.overwrites_.push_back(o);
    }
    for (const auto& b : other.blocks_) {
        if (std::find(out.blocks_.begin(), out.blocks_.end(), b) == out.blocks_.end()) out.blocks_.push_back(b);
    }
    return out;
}

void InterventionPlan::validate(const ModelConfig& config, int seq_len) const {
    for (const auto& o : overwrites_) {
        if (o.layer < 0 || o.layer > config.n_layers) {
            throw ContractError("overwrite layer " + std::to_string(o.layer) + " outside [0, " +
                                std::to_string(config.n_layers) + "]");
        }
        if (o.position < 0 || o.position >= seq_len) {
            throw ContractError("overwrite position " + std::to_string(o.position) + " outside sequence of length " +
                                std::to_string(seq_len));
        }
        if (static_cast<int>(o.values.size()) != config.d_model) {
            throw ContractError("overwrite vector has width " + std::to_string(o.values.size()) + ", expected " +
                                std::to_string(config.d_model));
        }
    }
    for (const auto& b : blocks_) {
        if (b.layer < 0 || b.layer >= config.n_layers) {
            throw ContractError("attention block layer " + std::to_string(b.layer) + " outside [0, " +
                                std::to_string(config.n_layers - 1) + "]");
        }
        if (b.query < 0 || b.query >= seq_len || b.key < 0 || b.key > b.query) {
            throw ContractError("attention block edge " + std::to_string(b.query) + " -> " + std::to_string(b.key) +
                                " is not a causal edge inside a sequence of length " + std::to_string(seq_len));
        }
        if (b.head && (*b.head < 0 || *b.head >= config.n_heads)) {
            throw ContractError("attention block head " + std::to_string(*b.head) + " out of range");
        }
    }
}

std::optional<int> InterventionPlan::min_position() const {
    std::optional<int> m;
    for (const auto& o : overwrites_) m = m ? std::min(*m, o.position) : o.position;
    for (const auto& b : blocks_) m = m ? std::min(*m, b.query) : b.query;
    return m;
}

std::string InterventionPlan::to_jsonl() const {
    std::string out;
    for (const auto& o : overwrites_) {
        json j = {{"op", "overwrite"}, {"layer", o.layer}, {"position", o.position}, {"values", o.values}};
        out += j.dump() + "\n";
    }
    for (const auto& b : blocks_) {
        json j = {{"op", "block"}, {"layer", b.layer}, {"query", b.query}, {"key", b.key}};
        j["head"] = b.head ? json(*b.head) : json(nullptr);
        out += j.dump() + "\n";
    }
    return out;
}

InterventionPlan InterventionPlan::from_jsonl(const std::string& text) {
    InterventionPlan plan;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const auto op = j.at("op").get<std::string>();
            if (op == "overwrite") {
                plan.overwrite({j.at("layer").get<int>(), j.at("position").get<int>(),
                                j.at("values").get<std::vector<float>>()});
            } else if (op == "block") {
                AttentionBlock b{j.at("layer").get<int>(), j.at("query").get<int>(), j.at("key").get<int>(), {}};
                if (!j.at("head").is_null()) b.head = j.at("head").get<int>();
                plan.block(b);
            } else {
                throw FormatError("line " + std::to_string(line_no) + ": unknown plan op '" + op + "'");
            }
        } catch (const json::exception& e) {
            throw FormatError("line " + std::to_string(line_no) + ": malformed plan record: " + e.what());
        }
    }
    return plan;
}

}  // namespace latenthop
