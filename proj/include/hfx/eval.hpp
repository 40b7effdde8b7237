#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hfx/data.hpp"
#include "hfx/model.hpp"
#include "hfx/peft.hpp"

namespace hfx {

enum class OutcomeClass { kBuggy, kFixed, kNeither };

// Containment test on token-normalized text. A sample containing both
// statements counts as fixed (checked first).
OutcomeClass classify_output(const std::string& generated, const std::string& buggy_stmt,
                             const std::string& fixed_stmt, const Tokenizer& tok);

struct OutcomeCounts {
    size_t n_prompts = 0;
    size_t samples_per_prompt = 10;
    size_t n_buggy = 0;
    size_t n_fixed = 0;
    size_t n_neither = 0;

    size_t total() const { return n_buggy + n_fixed + n_neither; }
};

// Prompts each test pair with its context, draws sampler.num_samples
// completions, and buckets every sample into exactly one outcome. Per-prompt
// RNG streams derive from (rng_seed, pair_id), so ordering never changes the
// counts.
OutcomeCounts count_outcomes(const TransformerLM& model, const AdapterState* adapters,
                             const std::vector<CodePair>& test_pairs, const Tokenizer& tok,
                             const SamplerConfig& sampler);

// exp of the corpus-level mean NLL, pooled over all predicted tokens.
double perplexity(const TransformerLM& model, const AdapterState* adapters,
                  const std::vector<std::vector<int>>& corpus);

// Unbiased estimator 1 - C(n-c,k)/C(n,k) in stable product form.
double pass_at_k(size_t n, size_t c, size_t k);

struct WilcoxonResult {
    double statistic = 0.0;  // min(W+, W-)
    double p_value = 1.0;    // two-sided
    size_t n_effective = 0;  // pairs left after dropping zero differences
};

// Paired two-sided test. Exact enumeration of sign assignments when
// n_effective <= 12, normal approximation with tie correction beyond.
// Throws InsufficientDataError with fewer than 5 nonzero differences.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x,
                                    const std::vector<double>& y);

// (after - before)/before * 100. Throws DataError when before == 0.
double percent_change(double before, double after);

// Two decimals plus a direction marker, e.g. "44.31% ↓", "0.00%".
std::string format_percent_change(double pct);

// Synthetic continuation tasks: prompt is the first half of a held-out
// sequence, correctness is an exact match of the next `continuation_len`
// tokens.
struct TaskSpec {
    std::string task_id;
    std::vector<int> prompt;
    std::vector<int> reference;
};

std::vector<TaskSpec> make_continuation_tasks(const std::vector<std::vector<int>>& heldout,
                                              size_t max_tasks, size_t continuation_len);

// Per-task pass@k estimates from sampler.num_samples draws per task.
std::vector<double> task_pass_estimates(const TransformerLM& model,
                                        const AdapterState* adapters,
                                        const std::vector<TaskSpec>& tasks,
                                        const SamplerConfig& sampler, size_t k);

struct PassAtKRow {
    size_t k = 0;
    double before = 0.0;
    double after = 0.0;
};

struct EvalReport {
    OutcomeCounts before;
    OutcomeCounts after;
    double pct_change_bugs = 0.0;
    double pct_change_fixes = 0.0;
    double ppl_before = 0.0;
    double ppl_after = 0.0;
    std::vector<PassAtKRow> pass_at_k_rows;
    std::optional<WilcoxonResult> wilcoxon;
    std::string wilcoxon_note;  // set when the test is degenerate
    size_t n_tasks = 0;
};

}  // namespace hfx
