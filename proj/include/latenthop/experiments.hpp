#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latenthop/dataset.hpp"
#include "latenthop/model.hpp"
#include "latenthop/probes.hpp"
#include "latenthop/records.hpp"
#include "latenthop/tokenizer.hpp"

namespace latenthop {

enum class Experiment { FirstHop, SecondHop, Propagation, Backpatch };

std::string_view to_string(Experiment experiment);
/// "first-hop", "second-hop", "propagation", "backpatch"; "all" expands to every one.
std::vector<Experiment> parse_experiments(std::string_view text);

struct ExperimentConfig {
    uint64_t seed = 0;
    int window_len = 7;
    DecodeParams probe_params = DecodeParams::sampled(3, 0, 1.0f, 20);
    int answer_tokens = 20;
    /// Back-patch grids stop at a query's first success. Heat-maps are then partial.
    bool early_exit = false;

    void validate() const;
    nlohmann::json to_json() const;
};

/// Runs the analyses over query subsets and returns raw records. Work units
/// are independent and run on an OpenMP pool; records come back in a fixed
/// order regardless of scheduling.
class ExperimentRunner {
public:
    ExperimentRunner(const Model& model, const BpeTokenizer& tokenizer, ExperimentConfig config);

    const ExperimentConfig& config() const { return config_; }
    const PatchscopeTask& task() const { return task_; }

    /// Patchscope grid over every (source, target) pair in [0, n_layers]^2.
    std::vector<PatchscopeRecord> patchscope_grid(std::span<const TwoHopQuery> queries, const std::string& subset,
                                                  Probe probe) const;

    RunRecords run_first_hop_analysis(std::span<const TwoHopQuery> queries, const std::string& subset) const;
    RunRecords run_second_hop_analysis(std::span<const TwoHopQuery> queries, const std::string& subset) const;
    RunRecords run_propagation_analysis(std::span<const TwoHopQuery> queries, const std::string& subset) const;
    RunRecords run_backpatch_analysis(std::span<const TwoHopQuery> queries, const std::string& subset,
                                      Anchor anchor) const;

    /// Runs `experiments` on both subsets and fills the run metadata.
    RunRecords run(std::span<const Experiment> experiments, std::span<const TwoHopQuery> correct,
                   std::span<const TwoHopQuery> incorrect) const;

    nlohmann::json metadata() const;

private:
    std::string greedy_text(std::span<const int32_t> prompt) const;

    const Model& model_;
    const BpeTokenizer& tokenizer_;
    ExperimentConfig config_;
    PatchscopeTask task_;
};

}  // namespace latenthop
