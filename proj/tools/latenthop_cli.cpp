#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "latenthop/bundle.hpp"
#include "latenthop/dataset.hpp"
#include "latenthop/error.hpp"
#include "latenthop/experiments.hpp"
#include "latenthop/records.hpp"
#include "latenthop/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latenthop;

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct ConfigFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config_file;
    std::string model;
    std::string dump;
    std::string queries;
    std::string records;
    std::string out;
    std::string experiment = "all";
    std::string subset = "both";
    uint64_t seed = 0;
    int window = 7;
    int samples = 3;
    float temperature = 1.0f;
    int max_new = 20;
    int correct_cap = 100;
    int incorrect_cap = 50;
    int limit = 0;
    bool early_exit = false;
    bool per_attempt = false;
    bool no_images = false;
};

void require_path(const std::string& value, const char* flag) {
    if (value.empty()) throw ConfigFailure(std::string("missing required ") + flag);
    if (!fs::exists(value)) throw ConfigFailure(std::string(flag) + " path does not exist: " + value);
}

// Values from --config fill in anything the command line left unset.
void apply_config_file(Options& o, const CLI::App& app) {
    if (o.config_file.empty()) return;
    std::ifstream in(o.config_file);
    if (!in) throw ConfigFailure("cannot open config file " + o.config_file);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigFailure("config file: " + std::string(e.what()));
    }
    auto set = [&](const char* key, const char* flag, auto& field) {
        if (j.contains(key) && app.count(flag) == 0) j[key].get_to(field);
    };
    try {
        set("model", "--model", o.model);
        set("dump", "--dump", o.dump);
        set("queries", "--queries", o.queries);
        set("records", "--records", o.records);
        set("out", "--out", o.out);
        set("experiment", "--experiment", o.experiment);
        set("subset", "--subset", o.subset);
        set("seed", "--seed", o.seed);
        set("window", "--window", o.window);
        set("samples", "--samples", o.samples);
        set("temperature", "--temperature", o.temperature);
        set("max_new_tokens", "--max-new", o.max_new);
        set("correct_cap", "--correct-cap", o.correct_cap);
        set("incorrect_cap", "--incorrect-cap", o.incorrect_cap);
        set("limit", "--limit", o.limit);
        set("early_exit", "--early-exit", o.early_exit);
    } catch (const json::exception& e) {
        throw ConfigFailure("config file: " + std::string(e.what()));
    }
}

fs::path output_dir(const Options& o) {
    if (const char* env = std::getenv("LATENTHOP_OUT_DIR"); env && *env) return env;
    if (o.out.empty()) throw ConfigFailure("missing required --out (or LATENTHOP_OUT_DIR)");
    return o.out;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

int build_dataset_cmd(const Options& o) {
    require_path(o.dump, "--dump");
    require_path(o.model, "--model");
    const auto out = output_dir(o);
    const auto kb = KnowledgeBase::load_dump(o.dump);
    const auto tokenizer = BpeTokenizer::load(fs::path(o.model) / "vocab.json", fs::path(o.model) / "merges.txt");
    const auto build = build_dataset(kb, tokenizer, o.seed);
    fs::create_directories(out);
    write_queries(out / "queries.jsonl", build.queries);
    write_json(out / "manifest.json", build.manifest);
    std::cout << "wrote " << build.queries.size() << " queries to " << (out / "queries.jsonl").string() << "\n";
    return 0;
}

int filter_cmd(const Options& o) {
    require_path(o.model, "--model");
    require_path(o.queries, "--queries");
    const auto out = output_dir(o);
    const auto bundle = ModelBundle::load(o.model);
    const auto queries = read_queries(o.queries);
    AnswerOracle oracle(bundle.model, bundle.tokenizer, o.max_new);

    std::vector<std::string> prompts;
    for (const auto& q : queries) {
        prompts.push_back(q.prompt_without_e1);
        prompts.push_back(q.prompt_without_r1);
    }
    oracle.prefetch(prompts);
    std::vector<TwoHopQuery> kept;
    json decisions = json::array();
    for (const auto& q : queries) {
        const auto d = shortcut_filter(oracle, q);
        decisions.push_back({{"id", q.id}, {"keep", d.keep}, {"reason", d.reason}});
        if (d.keep) kept.push_back(q);
    }
    const auto correct = subset_correct(oracle, kept);
    const auto incorrect = subset_incorrect(oracle, kept);
    const auto correct_sample = balanced_sample(correct, o.correct_cap, o.seed);
    const auto incorrect_sample = balanced_sample(incorrect, o.incorrect_cap, o.seed);

    fs::create_directories(out);
    write_queries(out / "filtered.jsonl", kept);
    write_queries(out / "correct.jsonl", correct_sample);
    write_queries(out / "incorrect.jsonl", incorrect_sample);
    write_json(out / "filter_manifest.json", {{"seed", o.seed},
                                              {"model_fingerprint", bundle.model.fingerprint()},
                                              {"n_queries", queries.size()},
                                              {"post_filtering", kept.size()},
                                              {"n_correct", correct.size()},
                                              {"n_incorrect", incorrect.size()},
                                              {"correct_cap", o.correct_cap},
                                              {"incorrect_cap", o.incorrect_cap},
                                              {"n_correct_sampled", correct_sample.size()},
                                              {"n_incorrect_sampled", incorrect_sample.size()},
                                              {"decisions", decisions}});
    std::cout << kept.size() << " of " << queries.size() << " queries kept; " << correct_sample.size() << " correct, "
              << incorrect_sample.size() << " incorrect\n";
    return 0;
}

std::vector<TwoHopQuery> load_subset(const fs::path& dir, const std::string& name, int limit) {
    auto q = read_queries(dir / (name + ".jsonl"));
    if (limit > 0 && static_cast<int>(q.size()) > limit) q.resize(static_cast<size_t>(limit));
    return q;
}

int run_cmd(const Options& o) {
    require_path(o.model, "--model");
    require_path(o.queries, "--queries");
    std::vector<Experiment> experiments;
    try {
        experiments = parse_experiments(o.experiment);
    } catch (const ContractError& e) {
        throw ConfigFailure(e.what());
    }
    if (o.subset != "both" && o.subset != "correct" && o.subset != "incorrect") {
        throw ConfigFailure("--subset must be correct, incorrect or both");
    }
    const fs::path qdir = o.queries;
    for (const char* s : {"correct", "incorrect"}) {
        if ((o.subset == "both" || o.subset == s) && !fs::exists(qdir / (std::string(s) + ".jsonl"))) {
            throw ConfigFailure("query directory lacks " + std::string(s) + ".jsonl");
        }
    }
    const auto out = output_dir(o);
    ExperimentConfig cfg;
    cfg.seed = o.seed;
    cfg.window_len = o.window;
    cfg.probe_params = DecodeParams::sampled(o.samples, o.seed, o.temperature, o.max_new);
    cfg.answer_tokens = o.max_new;
    cfg.early_exit = o.early_exit;
    try {
        cfg.validate();
    } catch (const ContractError& e) {
        throw ConfigFailure(e.what());
    }

    const auto bundle = ModelBundle::load(o.model);
    const auto correct = o.subset == "incorrect" ? std::vector<TwoHopQuery>{} : load_subset(qdir, "correct", o.limit);
    const auto incorrect = o.subset == "correct" ? std::vector<TwoHopQuery>{} : load_subset(qdir, "incorrect", o.limit);
    ExperimentRunner runner(bundle.model, bundle.tokenizer, cfg);
    auto records = runner.run(experiments, correct, incorrect);
    if (fs::exists(qdir / "filter_manifest.json")) {
        std::ifstream in(qdir / "filter_manifest.json");
        const json m = json::parse(in);
        if (m.contains("post_filtering")) records.meta["post_filtering"] = m["post_filtering"];
    }
    write_records(out / "records", records);
    const auto rendered = render_report(records, out / "report", {o.per_attempt, !o.no_images});
    for (const auto& n : rendered.notices) std::cerr << "notice: " << n << "\n";
    std::cout << "records in " << (out / "records").string() << ", report in " << (out / "report").string() << "\n";
    return 0;
}

int render_cmd(const Options& o) {
    require_path(o.records, "--records");
    const auto out = output_dir(o);
    const auto records = read_records(o.records);
    const auto rendered = render_report(records, out, {o.per_attempt, !o.no_images});
    for (const auto& n : rendered.notices) std::cerr << "notice: " << n << "\n";
    std::cout << "rendered " << rendered.files.size() << " files into " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent two-hop reasoning analyses on decoder-only transformers"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* c) {
        c->add_option("--config", o.config_file, "JSON file with default option values");
        c->add_option("--out", o.out, "output directory (LATENTHOP_OUT_DIR overrides)");
        c->add_option("--seed", o.seed, "seed for sampling and subset selection");
    };

    auto* build = app.add_subcommand("build-dataset", "compose two-hop queries from a triplet dump");
    common(build);
    build->add_option("--dump", o.dump, "directory with entities.jsonl, triplets.jsonl, relations.json, types.json");
    build->add_option("--model", o.model, "model directory (its tokenizer locates t1 and t2)");

    auto* filter = app.add_subcommand("filter", "shortcut filter and correct/incorrect subsets");
    common(filter);
    filter->add_option("--model", o.model, "model directory");
    filter->add_option("--queries", o.queries, "query file from build-dataset");
    filter->add_option("--correct-cap", o.correct_cap, "per bridge type cap for the correct subset");
    filter->add_option("--incorrect-cap", o.incorrect_cap, "per bridge type cap for the incorrect subset");
    filter->add_option("--max-new", o.max_new, "greedy tokens checked for an answer");

    auto* run = app.add_subcommand("run", "run experiments and render the report");
    common(run);
    run->add_option("--model", o.model, "model directory");
    run->add_option("--queries", o.queries, "directory with correct.jsonl and incorrect.jsonl");
    run->add_option("--experiment", o.experiment, "first-hop, second-hop, propagation, backpatch or all");
    run->add_option("--subset", o.subset, "correct, incorrect or both");
    run->add_option("--window", o.window, "knockout window length");
    run->add_option("--samples", o.samples, "Patchscope generations per cell");
    run->add_option("--temperature", o.temperature, "Patchscope sampling temperature");
    run->add_option("--max-new", o.max_new, "tokens per generation");
    run->add_option("--limit", o.limit, "use at most this many queries per subset");
    run->add_flag("--early-exit", o.early_exit, "stop back-patch grids at the first success");
    run->add_flag("--per-attempt", o.per_attempt, "normalize heat-maps per attempt");
    run->add_flag("--no-images", o.no_images, "skip PNG output");

    auto* render = app.add_subcommand("render", "render tables and figures from raw records");
    render->add_option("--config", o.config_file, "JSON file with default option values");
    render->add_option("--records", o.records, "records directory");
    render->add_option("--out", o.out, "output directory (LATENTHOP_OUT_DIR overrides)");
    render->add_flag("--per-attempt", o.per_attempt, "normalize heat-maps per attempt");
    render->add_flag("--no-images", o.no_images, "skip PNG output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }
    try {
        CLI::App* sub = app.get_subcommands().front();
        apply_config_file(o, *sub);
        if (sub == build) return build_dataset_cmd(o);
        if (sub == filter) return filter_cmd(o);
        if (sub == run) return run_cmd(o);
        return render_cmd(o);
    } catch (const ConfigFailure& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const LoadError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}
