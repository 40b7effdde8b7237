#include "hfx/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hfx/error.hpp"
#include "hfx/tensor.hpp"

namespace hfx {

// ---------------------------------------------------------------------------
// Outcome classification
// ---------------------------------------------------------------------------

namespace {

bool contains_subsequence(const std::vector<int>& haystack, const std::vector<int>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        bool hit = true;
        for (size_t j = 0; j < needle.size(); ++j) {
            if (haystack[i + j] != needle[j]) {
                hit = false;
                break;
            }
        }
        if (hit) return true;
    }
    return false;
}

}  // namespace

OutcomeClass classify_output(const std::string& generated, const std::string& buggy_stmt,
                             const std::string& fixed_stmt, const Tokenizer& tok) {
    if (buggy_stmt.empty() || fixed_stmt.empty() || buggy_stmt == fixed_stmt) {
        throw DataError("classify_output: statements must be non-empty and distinct");
    }
    const std::vector<int> gen = tok.encode(generated);
    if (contains_subsequence(gen, tok.encode(fixed_stmt))) {
        return OutcomeClass::kFixed;  // generous-to-fix precedence
    }
    if (contains_subsequence(gen, tok.encode(buggy_stmt))) {
        return OutcomeClass::kBuggy;
    }
    return OutcomeClass::kNeither;
}

OutcomeCounts count_outcomes(const TransformerLM& model, const AdapterState* adapters,
                             const std::vector<CodePair>& test_pairs, const Tokenizer& tok,
                             const SamplerConfig& sampler) {
    sampler.validate();
    OutcomeCounts counts;
    counts.n_prompts = test_pairs.size();
    counts.samples_per_prompt = sampler.num_samples;
    for (const auto& pair : test_pairs) {
        SamplerConfig per_prompt = sampler;
        per_prompt.rng_seed = Rng::stream(sampler.rng_seed, pair.pair_id);
        const std::vector<int> prompt = tok.encode(pair.context);
        auto samples = generate(model, prompt, per_prompt, adapters);
        for (const auto& sample : samples) {
            std::vector<int> continuation(sample.begin() + prompt.size(), sample.end());
            while (!continuation.empty() && continuation.back() == Tokenizer::kEosId) {
                continuation.pop_back();
            }
            switch (classify_output(tok.decode(continuation), pair.buggy_stmt,
                                    pair.fixed_stmt, tok)) {
                case OutcomeClass::kBuggy: ++counts.n_buggy; break;
                case OutcomeClass::kFixed: ++counts.n_fixed; break;
                case OutcomeClass::kNeither: ++counts.n_neither; break;
            }
        }
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

double perplexity(const TransformerLM& model, const AdapterState* adapters,
                  const std::vector<std::vector<int>>& corpus) {
    double total_nll = 0.0;
    size_t total_tokens = 0;
    const size_t v = model.config().vocab_size;
    for (const auto& seq : corpus) {
        if (seq.size() < 2) continue;
        Tensor logits = model.forward(seq, adapters);
        Tensor lp = log_softmax_rows(slice_rows(logits, 0, seq.size() - 1));
        for (size_t i = 0; i + 1 < seq.size(); ++i) {
            total_nll -= lp.at(i, static_cast<size_t>(seq[i + 1]));
        }
        total_tokens += seq.size() - 1;
        (void)v;
    }
    if (total_tokens == 0) {
        throw DataError("perplexity: no predicted tokens in corpus");
    }
    return std::exp(total_nll / static_cast<double>(total_tokens));
}

// ---------------------------------------------------------------------------
// pass@k
// ---------------------------------------------------------------------------

double pass_at_k(size_t n, size_t c, size_t k) {
    if (k < 1 || k > n) {
        throw ConfigError("pass_at_k: k must satisfy 1 <= k <= n");
    }
    if (c > n) {
        throw ConfigError("pass_at_k: c must not exceed n");
    }
    if (c == 0) return 0.0;
    if (n - c < k) return 1.0;
    double prod = 1.0;
    for (size_t i = 0; i < k; ++i) {
        prod *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    }
    return 1.0 - prod;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x,
                                    const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw DataError("wilcoxon: vectors must have equal length");
    }
    std::vector<double> diffs;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d != 0.0) diffs.push_back(d);
    }
    const size_t n = diffs.size();
    if (n < 5) {
        throw InsufficientDataError("wilcoxon: only " + std::to_string(n) +
                                    " nonzero differences (need >= 5)");
    }

    // Rank |d| with average ranks for ties.
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return std::abs(diffs[a]) < std::abs(diffs[b]);
    });
    std::vector<double> ranks(n, 0.0);
    std::vector<size_t> tie_sizes;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k) ranks[order[k]] = avg_rank;
        tie_sizes.push_back(j - i);
        i = j;
    }

    double w_plus = 0.0;
    double rank_total = 0.0;
    for (size_t k = 0; k < n; ++k) {
        rank_total += ranks[k];
        if (diffs[k] > 0.0) w_plus += ranks[k];
    }
    const double w_minus = rank_total - w_plus;

    WilcoxonResult result;
    result.n_effective = n;
    result.statistic = std::min(w_plus, w_minus);

    if (n <= 12) {
        // Exact null distribution over all 2^n sign assignments on the very
        // same (possibly tied) ranks.
        std::vector<double> rank_of(n);
        for (size_t k = 0; k < n; ++k) rank_of[k] = ranks[k];
        const uint64_t total = 1ull << n;
        uint64_t count_le = 0, count_ge = 0;
        const double eps = 1e-9;
        for (uint64_t massign = 0; massign < total; ++massign) {
            double t_plus = 0.0;
            for (size_t k = 0; k < n; ++k) {
                if (massign & (1ull << k)) t_plus += rank_of[k];
            }
            if (t_plus <= w_plus + eps) ++count_le;
            if (t_plus >= w_plus - eps) ++count_ge;
        }
        const double p_le = static_cast<double>(count_le) / static_cast<double>(total);
        const double p_ge = static_cast<double>(count_ge) / static_cast<double>(total);
        result.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge));
    } else {
        const double dn = static_cast<double>(n);
        const double mean = dn * (dn + 1.0) / 4.0;
        double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0;
        for (size_t t : tie_sizes) {
            const double dt = static_cast<double>(t);
            var -= (dt * dt * dt - dt) / 48.0;
        }
        if (var <= 0.0) {
            throw InsufficientDataError("wilcoxon: zero variance (all ranks tied away)");
        }
        const double z = (w_plus - mean) / std::sqrt(var);
        result.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Percent change
// ---------------------------------------------------------------------------

double percent_change(double before, double after) {
    if (before == 0.0) {
        throw DataError("percent_change: undefined for a zero baseline");
    }
    return (after - before) / before * 100.0;
}

std::string format_percent_change(double pct) {
    char buf[64];
    if (pct > 0.0) {
        std::snprintf(buf, sizeof(buf), "%.2f%% ↑", pct);
    } else if (pct < 0.0) {
        std::snprintf(buf, sizeof(buf), "%.2f%% ↓", -pct);
    } else {
        std::snprintf(buf, sizeof(buf), "0.00%%");
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Continuation tasks
// ---------------------------------------------------------------------------

std::vector<TaskSpec> make_continuation_tasks(const std::vector<std::vector<int>>& heldout,
                                              size_t max_tasks, size_t continuation_len) {
    std::vector<TaskSpec> tasks;
    for (size_t i = 0; i < heldout.size() && tasks.size() < max_tasks; ++i) {
        const auto& seq = heldout[i];
        if (seq.size() < 4) continue;
        const size_t prompt_len = seq.size() / 2;
        const size_t ref_len = std::min(continuation_len, seq.size() - prompt_len);
        if (ref_len == 0) continue;
        TaskSpec task;
        task.task_id = "task" + std::to_string(i);
        task.prompt.assign(seq.begin(), seq.begin() + prompt_len);
        task.reference.assign(seq.begin() + prompt_len, seq.begin() + prompt_len + ref_len);
        tasks.push_back(std::move(task));
    }
    return tasks;
}

std::vector<double> task_pass_estimates(const TransformerLM& model,
                                        const AdapterState* adapters,
                                        const std::vector<TaskSpec>& tasks,
                                        const SamplerConfig& sampler, size_t k) {
    std::vector<double> estimates;
    estimates.reserve(tasks.size());
    for (const auto& task : tasks) {
        SamplerConfig per_task = sampler;
        per_task.rng_seed = Rng::stream(sampler.rng_seed, task.task_id);
        per_task.max_new_tokens = task.reference.size();
        per_task.stop_token = -1;  // fixed-length continuation match
        auto samples = generate(model, task.prompt, per_task, adapters);
        size_t correct = 0;
        for (const auto& sample : samples) {
            const size_t got = sample.size() - task.prompt.size();
            if (got == task.reference.size() &&
                std::equal(task.reference.begin(), task.reference.end(),
                           sample.begin() + task.prompt.size())) {
                ++correct;
            }
        }
        estimates.push_back(pass_at_k(per_task.num_samples, correct, k));
    }
    return estimates;
}

}  // namespace hfx
