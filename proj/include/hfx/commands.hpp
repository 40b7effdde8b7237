#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hfx/data.hpp"
#include "hfx/eval.hpp"
#include "hfx/loss.hpp"
#include "hfx/model.hpp"
#include "hfx/peft.hpp"

namespace hfx {

// ---------------------------------------------------------------------------
// Corpus on disk: pairs.jsonl + neutral.txt + split.json + vocab.json
// ---------------------------------------------------------------------------

struct CorpusBundle {
    std::vector<CodePair> pairs;
    std::vector<std::string> neutral;
    SplitIds split;
    Tokenizer tok;

    std::vector<CodePair> pairs_for(const std::vector<std::string>& ids) const;
    const std::vector<std::string>& split_ids(const std::string& name) const;

    // Neutral text is partitioned 80/20 into training text and held-out text
    // for perplexity and the synthetic task suite.
    std::vector<std::string> neutral_train() const;
    std::vector<std::string> neutral_heldout() const;
};

CorpusBundle load_corpus(const std::string& dir);

struct GenCorpusArgs {
    uint64_t seed = 1;
    size_t n_pairs = 200;
    size_t n_neutral = 200;
    std::string out_dir;
};

void cmd_gen_corpus(const GenCorpusArgs& args);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingConfig {
    size_t epochs = 20;
    size_t batch_size = 8;
    double learning_rate = 3e-4;
    uint64_t seed = 7;
    size_t neutral_per_step = 2;  // neutral sequences added to each KL step
    bool early_stop = true;
    size_t patience = 3;
};

struct TrainBaseArgs {
    ModelConfig model;
    TrainingConfig training;
    std::string corpus_dir;
    std::string out_checkpoint;
};

struct TrainBaseResult {
    std::vector<double> loss_trace;
    uint64_t fingerprint = 0;
};

TrainBaseResult cmd_train_base(const TrainBaseArgs& args);

struct StepLog {
    size_t step = 0;
    LossBreakdown breakdown;
};

struct HotfixResult {
    AdapterState adapter;
    std::vector<StepLog> log;
    size_t epochs_run = 0;
    double seconds_per_epoch = 0.0;
};

// Core adapter training loop, shared by cmd_hotfix, cmd_sweep, and the
// acceptance suite. The base stays frozen; for qlora the adapter trains on
// (and retention is measured against) the quantized base.
HotfixResult train_hotfix(const TransformerLM& base, const CorpusBundle& corpus,
                          const AdapterSpec& spec, Objective objective,
                          const TrainingConfig& training);

struct HotfixArgs {
    std::string corpus_dir;
    std::string base_checkpoint;
    std::string out_adapter;
    AdapterSpec adapter;
    Objective objective = Objective::kDualKl;
    TrainingConfig training;
};

HotfixResult cmd_hotfix(const HotfixArgs& args);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string corpus_dir;
    std::string base_checkpoint;
    std::optional<std::string> adapter_checkpoint;
    std::string split = "test";
    SamplerConfig sampler;
    std::string report_path;  // writes <report_path>.json and <report_path>.txt
    size_t n_tasks = 40;
    size_t continuation_len = 4;
    size_t wilcoxon_k = 5;
    std::vector<size_t> pass_ks = {1, 5, 10};
};

EvalReport cmd_evaluate(const EvaluateArgs& args);

std::string render_report(const EvalReport& report);
std::string report_to_json(const EvalReport& report);

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepArgs {
    std::string corpus_dir;
    std::string base_checkpoint;
    std::vector<AdapterSpec> adapters;
    std::vector<Objective> objectives;
    TrainingConfig training;
    SamplerConfig sampler;
    std::string out_dir;
};

struct SweepCell {
    std::string adapter;
    std::string objective;
    bool failed = false;
    std::string error;
    OutcomeCounts counts;
    double pct_bugs_vs_base = 0.0;
    double pct_fixes_vs_base = 0.0;
    // Set for +KL cells: change relative to the matching plain objective.
    std::optional<double> kl_delta_bugs;
    std::optional<double> kl_delta_fixes;
};

struct SweepReport {
    OutcomeCounts base_counts;
    std::vector<SweepCell> cells;
    // Signed mean of the per-cell KL deltas per adapter row.
    struct KlSummary {
        std::string adapter;
        double mean_delta_bugs = 0.0;
        double mean_delta_fixes = 0.0;
    };
    std::vector<KlSummary> kl_summaries;
};

SweepReport cmd_sweep(const SweepArgs& args);

std::string render_sweep(const SweepReport& report);
std::string sweep_to_json(const SweepReport& report);

// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::string& path, const std::string& text);

// ---------------------------------------------------------------------------
// Structured run configuration (JSON file + flag overrides in the CLI)
// ---------------------------------------------------------------------------

struct RunConfig {
    ModelConfig model;
    AdapterSpec adapter;
    Objective objective = Objective::kDualKl;
    TrainingConfig training;
    SamplerConfig sampler;

    std::string corpus_dir;
    std::string base_checkpoint;
    std::string adapter_path;
    std::string report_path;
    std::string sweep_dir;
    std::vector<std::string> sweep_adapters = {"lora", "ia3", "prefix", "qlora"};
    std::vector<std::string> sweep_objectives = {"Vanilla",    "Guided",    "Dual",
                                                 "Vanilla+KL", "Guided+KL", "Dual+KL"};

    RunConfig() { sampler.stop_token = 1; }
};

RunConfig parse_run_config_text(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace hfx
