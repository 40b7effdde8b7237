#include "hfx/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hfx/checkpoint.hpp"
#include "hfx/error.hpp"

namespace hfx {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::vector<int> encode_sequence(const Tokenizer& tok, const std::string& text) {
    std::vector<int> ids = tok.encode(text);
    ids.push_back(Tokenizer::kEosId);
    return ids;
}

std::vector<int> buggy_sequence(const Tokenizer& tok, const CodePair& pair) {
    std::vector<int> ids = tok.encode(pair.context);
    for (const std::string* part : {&pair.buggy_stmt, &pair.suffix}) {
        auto more = tok.encode(*part);
        ids.insert(ids.end(), more.begin(), more.end());
    }
    ids.push_back(Tokenizer::kEosId);
    return ids;
}

}  // namespace

void write_text_file(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << text;
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

std::vector<CodePair> CorpusBundle::pairs_for(const std::vector<std::string>& ids) const {
    std::map<std::string, const CodePair*> by_id;
    for (const auto& p : pairs) by_id[p.pair_id] = &p;
    std::vector<CodePair> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw DataError("split references unknown pair id '" + id + "'");
        }
        out.push_back(*it->second);
    }
    return out;
}

const std::vector<std::string>& CorpusBundle::split_ids(const std::string& name) const {
    if (name == "train") return split.train;
    if (name == "validation") return split.validation;
    if (name == "test") return split.test;
    throw ConfigError("unknown split '" + name + "' (train|validation|test)");
}

std::vector<std::string> CorpusBundle::neutral_train() const {
    const size_t cut = neutral.size() * 8 / 10;
    return {neutral.begin(), neutral.begin() + cut};
}

std::vector<std::string> CorpusBundle::neutral_heldout() const {
    const size_t cut = neutral.size() * 8 / 10;
    return {neutral.begin() + cut, neutral.end()};
}

void cmd_gen_corpus(const GenCorpusArgs& args) {
    if (args.n_pairs < 1) {
        throw UsageError("gen-corpus: --pairs must be >= 1");
    }
    if (args.out_dir.empty()) {
        throw UsageError("gen-corpus: --out is required");
    }
    SynthCorpus corpus = synth_corpus(args.seed, args.n_pairs, args.n_neutral);
    fs::create_directories(args.out_dir);

    save_jsonl(join_path(args.out_dir, "pairs.jsonl"), corpus.pairs);

    std::ostringstream neutral_text;
    for (const auto& line : corpus.neutral) neutral_text << line << "\n";
    write_text_file(join_path(args.out_dir, "neutral.txt"), neutral_text.str());

    SplitIds split = split_pairs(corpus.pairs, args.seed);
    json split_json{{"train", split.train},
                    {"validation", split.validation},
                    {"test", split.test}};
    write_text_file(join_path(args.out_dir, "split.json"), split_json.dump(2) + "\n");

    std::vector<std::string> texts;
    for (const auto& p : corpus.pairs) {
        texts.push_back(p.context);
        texts.push_back(p.buggy_stmt);
        texts.push_back(p.fixed_stmt);
        texts.push_back(p.suffix);
    }
    for (const auto& line : corpus.neutral) texts.push_back(line);
    Tokenizer tok = Tokenizer::build(texts, 512);
    write_text_file(join_path(args.out_dir, "vocab.json"),
                    json(tok.vocabulary()).dump() + "\n");

    json resolved{{"command", "gen-corpus"},
                  {"seed", args.seed},
                  {"pairs", args.n_pairs},
                  {"neutral", args.n_neutral}};
    write_text_file(join_path(args.out_dir, "gen_corpus.config.json"),
                    resolved.dump(2) + "\n");
}

CorpusBundle load_corpus(const std::string& dir) {
    CorpusBundle bundle;
    bundle.pairs = load_jsonl(join_path(dir, "pairs.jsonl"));

    std::ifstream neutral_in(join_path(dir, "neutral.txt"));
    if (!neutral_in) {
        throw IoError("cannot open " + join_path(dir, "neutral.txt"));
    }
    std::string line;
    while (std::getline(neutral_in, line)) {
        if (!line.empty()) bundle.neutral.push_back(line);
    }

    json split_json = load_json_file(join_path(dir, "split.json"));
    bundle.split.train = split_json.at("train").get<std::vector<std::string>>();
    bundle.split.validation = split_json.at("validation").get<std::vector<std::string>>();
    bundle.split.test = split_json.at("test").get<std::vector<std::string>>();

    json vocab_json = load_json_file(join_path(dir, "vocab.json"));
    bundle.tok = Tokenizer(vocab_json.get<std::vector<std::string>>());
    return bundle;
}

// ---------------------------------------------------------------------------
// Base training
// ---------------------------------------------------------------------------

TrainBaseResult cmd_train_base(const TrainBaseArgs& args) {
    args.model.validate();
    CorpusBundle corpus = load_corpus(args.corpus_dir);
    if (corpus.tok.vocab_size() > args.model.vocab_size) {
        throw ConfigError("model.vocab_size " + std::to_string(args.model.vocab_size) +
                          " is smaller than the corpus vocabulary (" +
                          std::to_string(corpus.tok.vocab_size()) + ")");
    }

    // The base memorizes the buggy versions plus neutral text; fixed
    // statements never appear here.
    std::vector<std::vector<int>> sequences;
    for (const auto& text : corpus.neutral_train()) {
        sequences.push_back(encode_sequence(corpus.tok, text));
    }
    for (const auto& pair : corpus.pairs) {
        sequences.push_back(buggy_sequence(corpus.tok, pair));
    }
    for (const auto& seq : sequences) {
        if (seq.size() > args.model.context_len) {
            throw DataError("corpus sequence of length " + std::to_string(seq.size()) +
                            " exceeds context_len " + std::to_string(args.model.context_len));
        }
    }

    TransformerLM model(args.model);
    AdamOptimizer opt(args.training.learning_rate);
    for (const auto& [name, t] : model.params()) {
        opt.register_param(name, t);
    }
    TrainBaseResult result;
    result.loss_trace = train_base(model, sequences, args.training.epochs,
                                   args.training.batch_size, opt, args.training.seed);
    model.freeze();
    result.fingerprint = model.fingerprint();

    save_base_checkpoint(args.out_checkpoint, model);

    std::ostringstream csv;
    csv << "epoch,mean_loss\n";
    for (size_t e = 0; e < result.loss_trace.size(); ++e) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e + 1, result.loss_trace[e]);
        csv << buf;
    }
    write_text_file(args.out_checkpoint + ".loss.csv", csv.str());

    json resolved{{"command", "train-base"},
                  {"model",
                   {{"vocab_size", args.model.vocab_size},
                    {"embed_dim", args.model.embed_dim},
                    {"n_layers", args.model.n_layers},
                    {"n_heads", args.model.n_heads},
                    {"context_len", args.model.context_len},
                    {"seed", args.model.seed}}},
                  {"training",
                   {{"epochs", args.training.epochs},
                    {"batch_size", args.training.batch_size},
                    {"learning_rate", args.training.learning_rate},
                    {"seed", args.training.seed}}},
                  {"corpus", args.corpus_dir}};
    write_text_file(args.out_checkpoint + ".config.json", resolved.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------
// Hotfix training
// ---------------------------------------------------------------------------

namespace {

Tensor mean_of(const std::vector<Tensor>& values) {
    Tensor total = values.front();
    for (size_t i = 1; i < values.size(); ++i) {
        total = add(total, values[i]);
    }
    return scale(total, 1.0 / static_cast<double>(values.size()));
}

struct PreparedExample {
    HotfixExample ex;
    std::vector<int> fixed_targets;
    std::vector<double> ones;
    std::vector<double> plus_weights;
    std::vector<int> buggy_targets;
    std::vector<double> minus_weights;
    std::vector<double> ctx_mask;
    bool has_ctx_kl = false;
};

PreparedExample prepare(const HotfixExample& ex) {
    PreparedExample p;
    p.ex = ex;
    p.fixed_targets.assign(ex.fixed_tokens.begin() + 1, ex.fixed_tokens.end());
    p.ones.assign(p.fixed_targets.size(), 1.0);
    p.plus_weights.assign(ex.w_plus.begin() + 1, ex.w_plus.end());
    p.buggy_targets.assign(ex.buggy_tokens.begin() + 1, ex.buggy_tokens.end());
    p.minus_weights.assign(ex.w_minus.begin() + 1, ex.w_minus.end());
    p.ctx_mask = context_kl_mask(ex);
    for (double m : p.ctx_mask) {
        if (m != 0.0) p.has_ctx_kl = true;
    }
    return p;
}

// One batch worth of objective components. Fuses the forwards so the adapted
// logits over the fixed sequence serve both the NLL terms and the context
// retention term; single-example batches reduce bitwise to the standalone
// loss functions.
struct BatchLoss {
    std::optional<Tensor> total;
    LossBreakdown breakdown;
};

BatchLoss batch_objective(const TransformerLM& model, const AdapterState* adapters,
                          Objective objective,
                          const std::vector<const PreparedExample*>& batch,
                          const std::vector<const std::vector<int>*>& neutral_batch) {
    const bool uses_vanilla = objective_uses_vanilla(objective);
    const bool uses_guided = !uses_vanilla && objective != Objective::kUnlearnMax;
    const bool uses_unlearn = objective_uses_unlearn(objective);
    const bool uses_kl = objective_uses_kl(objective);

    std::vector<Tensor> vanilla_terms, guided_terms, unlearn_terms, kl_terms;
    for (const PreparedExample* p : batch) {
        if (uses_vanilla || uses_guided || uses_kl) {
            Tensor adapted_logits = model.forward(p->ex.fixed_tokens, adapters);
            Tensor lp = log_softmax_rows(
                slice_rows(adapted_logits, 0, p->ex.fixed_tokens.size() - 1));
            if (uses_vanilla) {
                vanilla_terms.push_back(weighted_nll(lp, p->fixed_targets, p->ones));
            }
            if (uses_guided) {
                guided_terms.push_back(weighted_nll(lp, p->fixed_targets, p->plus_weights));
            }
            if (uses_kl && p->has_ctx_kl) {
                Tensor base_logits = model.forward(p->ex.fixed_tokens);
                kl_terms.push_back(kl_from_logits(base_logits, adapted_logits, p->ctx_mask));
            }
        }
        if (uses_unlearn) {
            Tensor buggy_logits = model.forward(p->ex.buggy_tokens, adapters);
            Tensor lp = log_softmax_rows(
                slice_rows(buggy_logits, 0, p->ex.buggy_tokens.size() - 1));
            unlearn_terms.push_back(weighted_nll(lp, p->buggy_targets, p->minus_weights));
        }
    }
    if (uses_kl) {
        for (const std::vector<int>* seq : neutral_batch) {
            Tensor base_logits = model.forward(*seq);
            Tensor adapted_logits = model.forward(*seq, adapters);
            kl_terms.push_back(kl_from_logits(base_logits, adapted_logits,
                                              std::vector<double>(seq->size(), 1.0)));
        }
    }

    LossComponents components;
    if (!vanilla_terms.empty()) components.vanilla = mean_of(vanilla_terms);
    if (!guided_terms.empty()) components.guided = mean_of(guided_terms);
    if (!unlearn_terms.empty()) components.unlearn = mean_of(unlearn_terms);
    if (!kl_terms.empty()) components.kl = mean_of(kl_terms);
    if (uses_kl && kl_terms.empty()) {
        components.kl = Tensor::scalar(0.0);
    }

    auto [total, breakdown] = combine(objective, components);
    BatchLoss out;
    out.total = std::move(total);
    out.breakdown = std::move(breakdown);
    return out;
}

}  // namespace

HotfixResult train_hotfix(const TransformerLM& base, const CorpusBundle& corpus,
                          const AdapterSpec& spec, Objective objective,
                          const TrainingConfig& training) {
    if (!base.frozen()) {
        throw StateError("hotfix training requires a frozen base model");
    }
    spec.validate(base.config());

    // QLoRA rides on (and retention is measured against) the quantized base.
    const TransformerLM* work = &base;
    TransformerLM quantized;
    if (spec.kind == AdapterKind::kQlora && !base.quantized()) {
        quantized = quantize_base(base, spec.quant_bits);
        work = &quantized;
    }

    std::vector<PreparedExample> train_examples;
    size_t skipped = 0;
    for (const auto& pair : corpus.pairs_for(corpus.split.train)) {
        try {
            train_examples.push_back(prepare(build_example(pair, corpus.tok)));
        } catch (const DegeneratePairError&) {
            ++skipped;
        }
    }
    if (train_examples.empty()) {
        throw DataError("hotfix: no usable training pairs");
    }
    if (skipped > 0) {
        std::cerr << "hotfix: skipped " << skipped << " degenerate pairs\n";
    }
    std::vector<PreparedExample> val_examples;
    for (const auto& pair : corpus.pairs_for(corpus.split.validation)) {
        try {
            val_examples.push_back(prepare(build_example(pair, corpus.tok)));
        } catch (const DegeneratePairError&) {
        }
    }

    std::vector<std::vector<int>> neutral_pool;
    for (const auto& text : corpus.neutral_train()) {
        neutral_pool.push_back(encode_sequence(corpus.tok, text));
    }

    HotfixResult result;
    result.adapter = init_adapter(spec, work->config(), training.seed, work->fingerprint());
    AdamOptimizer opt(training.learning_rate);
    for (const auto& [name, t] : result.adapter.tensors) {
        opt.register_param(name, t);
    }

    auto validation_loss = [&]() -> double {
        if (val_examples.empty()) return 0.0;
        std::vector<const std::vector<int>*> fixed_neutral;
        for (size_t i = 0; i < training.neutral_per_step && i < neutral_pool.size(); ++i) {
            fixed_neutral.push_back(&neutral_pool[i]);
        }
        double total = 0.0;
        for (const auto& p : val_examples) {
            total += batch_objective(*work, &result.adapter, objective, {&p}, fixed_neutral)
                         .breakdown.l_total;
        }
        return total / static_cast<double>(val_examples.size());
    };

    std::vector<size_t> order(train_examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    double best_val = std::numeric_limits<double>::infinity();
    size_t stale_epochs = 0;
    size_t global_step = 0;
    const auto t_start = std::chrono::steady_clock::now();

    for (size_t epoch = 0; epoch < training.epochs; ++epoch) {
        Rng rng(Rng::stream(training.seed, "hotfix-epoch-" + std::to_string(epoch)));
        rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += training.batch_size) {
            const size_t end = std::min(order.size(), start + training.batch_size);
            std::vector<const PreparedExample*> batch;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(&train_examples[order[i]]);
            }
            std::vector<const std::vector<int>*> neutral_batch;
            if (objective_uses_kl(objective) && !neutral_pool.empty()) {
                for (size_t i = 0; i < training.neutral_per_step; ++i) {
                    neutral_batch.push_back(
                        &neutral_pool[rng.next_u64() % neutral_pool.size()]);
                }
            }
            opt.zero_grad();
            BatchLoss loss = batch_objective(*work, &result.adapter, objective, batch,
                                             neutral_batch);
            backward(*loss.total);
            opt.step();
            ++global_step;
            result.log.push_back({global_step, loss.breakdown});
        }
        result.epochs_run = epoch + 1;

        if (training.early_stop && !val_examples.empty()) {
            const double val = validation_loss();
            if (val < best_val - 1e-6) {
                best_val = val;
                stale_epochs = 0;
            } else {
                ++stale_epochs;
                if (stale_epochs >= training.patience) {
                    break;
                }
            }
        }
    }

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.seconds_per_epoch =
        result.epochs_run > 0 ? seconds / static_cast<double>(result.epochs_run) : 0.0;
    return result;
}

HotfixResult cmd_hotfix(const HotfixArgs& args) {
    CorpusBundle corpus = load_corpus(args.corpus_dir);
    TransformerLM base = load_base_checkpoint(args.base_checkpoint);

    if (fs::exists(args.out_adapter)) {
        AdapterState existing = load_adapter_checkpoint(args.out_adapter);
        if (existing.base_fingerprint != base.fingerprint()) {
            throw CompatibilityError(args.out_adapter +
                                     " belongs to a different base model; refusing to "
                                     "overwrite it with a hotfix for " +
                                     args.base_checkpoint);
        }
    }

    HotfixResult result = train_hotfix(base, corpus, args.adapter, args.objective,
                                       args.training);
    save_adapter_checkpoint(args.out_adapter, result.adapter);

    std::ostringstream csv;
    csv << "step,objective,l_vanilla,l_guided,l_unlearn,l_ratio,l_kl,l_total\n";
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string();
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.10g", *v);
        return std::string(buf);
    };
    for (const auto& entry : result.log) {
        char total_buf[32];
        std::snprintf(total_buf, sizeof(total_buf), "%.10g", entry.breakdown.l_total);
        csv << entry.step << "," << entry.breakdown.objective << ","
            << cell(entry.breakdown.l_vanilla) << "," << cell(entry.breakdown.l_guided)
            << "," << cell(entry.breakdown.l_unlearn) << "," << cell(entry.breakdown.l_ratio)
            << "," << cell(entry.breakdown.l_kl) << "," << total_buf << "\n";
    }
    write_text_file(args.out_adapter + ".loss.csv", csv.str());

    json resolved{{"command", "hotfix"},
                  {"objective", objective_name(args.objective)},
                  {"adapter",
                   {{"kind", adapter_kind_name(args.adapter.kind)},
                    {"rank", args.adapter.rank},
                    {"alpha", args.adapter.alpha},
                    {"prefix_len", args.adapter.prefix_len},
                    {"quant_bits", args.adapter.quant_bits},
                    {"targets", args.adapter.targets}}},
                  {"training",
                   {{"epochs", args.training.epochs},
                    {"batch_size", args.training.batch_size},
                    {"learning_rate", args.training.learning_rate},
                    {"seed", args.training.seed},
                    {"neutral_per_step", args.training.neutral_per_step},
                    {"early_stop", args.training.early_stop},
                    {"patience", args.training.patience}}},
                  {"corpus", args.corpus_dir},
                  {"base", args.base_checkpoint}};
    write_text_file(args.out_adapter + ".config.json", resolved.dump(2) + "\n");

    // Wall-clock lives in its own sidecar: informative, not reproducible.
    json timing{{"epochs_run", result.epochs_run},
                {"seconds_per_epoch", result.seconds_per_epoch}};
    write_text_file(args.out_adapter + ".timing.json", timing.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<int>> encode_all(const Tokenizer& tok,
                                         const std::vector<std::string>& texts) {
    std::vector<std::vector<int>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        out.push_back(encode_sequence(tok, text));
    }
    return out;
}

json counts_json(const OutcomeCounts& c) {
    return json{{"n_prompts", c.n_prompts},
                {"samples_per_prompt", c.samples_per_prompt},
                {"n_buggy", c.n_buggy},
                {"n_fixed", c.n_fixed},
                {"n_neither", c.n_neither}};
}

json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

}  // namespace

EvalReport cmd_evaluate(const EvaluateArgs& args) {
    CorpusBundle corpus = load_corpus(args.corpus_dir);
    TransformerLM base = load_base_checkpoint(args.base_checkpoint);

    std::optional<AdapterState> adapter;
    const TransformerLM* eval_base = &base;
    TransformerLM quantized;
    if (args.adapter_checkpoint) {
        adapter = load_adapter_checkpoint(*args.adapter_checkpoint);
        if (adapter->base_fingerprint != base.fingerprint()) {
            throw CompatibilityError("adapter " + *args.adapter_checkpoint +
                                     " does not match base " + args.base_checkpoint);
        }
        if (adapter->spec.kind == AdapterKind::kQlora) {
            quantized = quantize_base(base, adapter->spec.quant_bits);
            eval_base = &quantized;
        }
    }
    const AdapterState* adapter_ptr = adapter ? &*adapter : nullptr;

    const auto test_pairs = corpus.pairs_for(corpus.split_ids(args.split));
    if (test_pairs.empty()) {
        throw DataError("evaluate: split '" + args.split + "' is empty");
    }

    EvalReport report;
    report.before = count_outcomes(base, nullptr, test_pairs, corpus.tok, args.sampler);
    report.after = adapter_ptr ? count_outcomes(*eval_base, adapter_ptr, test_pairs,
                                                corpus.tok, args.sampler)
                               : report.before;
    report.pct_change_bugs =
        report.before.n_buggy > 0
            ? percent_change(double(report.before.n_buggy), double(report.after.n_buggy))
            : std::nan("");
    report.pct_change_fixes =
        report.before.n_fixed > 0
            ? percent_change(double(report.before.n_fixed), double(report.after.n_fixed))
            : std::nan("");

    const auto heldout = encode_all(corpus.tok, corpus.neutral_heldout());
    report.ppl_before = perplexity(base, nullptr, heldout);
    report.ppl_after =
        adapter_ptr ? perplexity(*eval_base, adapter_ptr, heldout) : report.ppl_before;

    auto tasks = make_continuation_tasks(heldout, args.n_tasks, args.continuation_len);
    report.n_tasks = tasks.size();
    std::vector<double> before_k5, after_k5;
    for (size_t k : args.pass_ks) {
        if (k > args.sampler.num_samples) continue;
        auto before = task_pass_estimates(base, nullptr, tasks, args.sampler, k);
        auto after = adapter_ptr ? task_pass_estimates(*eval_base, adapter_ptr, tasks,
                                                       args.sampler, k)
                                 : before;
        PassAtKRow row;
        row.k = k;
        for (double v : before) row.before += v;
        for (double v : after) row.after += v;
        if (!tasks.empty()) {
            row.before /= double(tasks.size());
            row.after /= double(tasks.size());
        }
        report.pass_at_k_rows.push_back(row);
        if (k == args.wilcoxon_k) {
            before_k5 = before;
            after_k5 = after;
        }
    }
    if (!before_k5.empty()) {
        try {
            report.wilcoxon = wilcoxon_signed_rank(before_k5, after_k5);
        } catch (const InsufficientDataError& e) {
            report.wilcoxon_note = e.what();
        }
    } else {
        report.wilcoxon_note = "no per-task vectors at the requested k";
    }

    if (!args.report_path.empty()) {
        write_text_file(args.report_path + ".json", report_to_json(report));
        write_text_file(args.report_path + ".txt", render_report(report));
    }
    return report;
}

std::string report_to_json(const EvalReport& report) {
    json j;
    j["before"] = counts_json(report.before);
    j["after"] = counts_json(report.after);
    j["pct_change_bugs"] = finite_or_null(report.pct_change_bugs);
    j["pct_change_fixes"] = finite_or_null(report.pct_change_fixes);
    j["ppl_before"] = report.ppl_before;
    j["ppl_after"] = report.ppl_after;
    j["pass_at_k"] = json::array();
    for (const auto& row : report.pass_at_k_rows) {
        j["pass_at_k"].push_back(
            json{{"k", row.k}, {"before", row.before}, {"after", row.after}});
    }
    if (report.wilcoxon) {
        j["wilcoxon"] = json{{"statistic", report.wilcoxon->statistic},
                             {"p_value", report.wilcoxon->p_value},
                             {"n_effective", report.wilcoxon->n_effective}};
    } else {
        j["wilcoxon"] = nullptr;
    }
    j["wilcoxon_note"] = report.wilcoxon_note;
    j["n_tasks"] = report.n_tasks;
    return j.dump(2) + "\n";
}

std::string render_report(const EvalReport& report) {
    std::ostringstream out;
    char buf[160];
    out << "== Outcome counts (" << report.before.n_prompts << " prompts x "
        << report.before.samples_per_prompt << " samples) ==\n";
    std::snprintf(buf, sizeof(buf), "%-10s %10s %10s %s\n", "", "base", "hotfixed",
                  "change");
    out << buf;
    auto line = [&](const char* label, size_t before, size_t after, double pct) {
        std::string change = "-";
        if (std::isfinite(pct)) change = format_percent_change(pct);
        std::snprintf(buf, sizeof(buf), "%-10s %10zu %10zu (%s)\n", label, before, after,
                      change.c_str());
        out << buf;
    };
    line("bugs", report.before.n_buggy, report.after.n_buggy, report.pct_change_bugs);
    line("fixes", report.before.n_fixed, report.after.n_fixed, report.pct_change_fixes);
    std::snprintf(buf, sizeof(buf), "%-10s %10zu %10zu\n", "neither",
                  report.before.n_neither, report.after.n_neither);
    out << buf;

    out << "\n== Side effects ==\n";
    std::snprintf(buf, sizeof(buf), "%-12s %10.4f %10.4f\n", "perplexity",
                  report.ppl_before, report.ppl_after);
    out << buf;
    for (const auto& row : report.pass_at_k_rows) {
        std::snprintf(buf, sizeof(buf), "pass@%-7zu %10.4f %10.4f\n", row.k, row.before,
                      row.after);
        out << buf;
    }
    if (report.wilcoxon) {
        const bool significant = report.wilcoxon->p_value <= 0.05;
        std::snprintf(buf, sizeof(buf),
                      "wilcoxon: W=%.2f, p=%.4f, n=%zu -> %s at 0.05\n",
                      report.wilcoxon->statistic, report.wilcoxon->p_value,
                      report.wilcoxon->n_effective,
                      significant ? "significant" : "not significant");
        out << buf;
    } else {
        out << "wilcoxon: skipped (" << report.wilcoxon_note << ")\n";
    }
    out << "tasks: " << report.n_tasks << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

namespace {

std::optional<Objective> plain_counterpart(Objective obj) {
    switch (obj) {
        case Objective::kVanillaKl: return Objective::kVanilla;
        case Objective::kGuidedKl: return Objective::kGuided;
        case Objective::kDualKl: return Objective::kDual;
        default: return std::nullopt;
    }
}

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out) {
        if (c == '+') c = '_';
    }
    return out;
}

}  // namespace

SweepReport cmd_sweep(const SweepArgs& args) {
    if (args.adapters.empty() || args.objectives.empty()) {
        throw UsageError("sweep: need at least one adapter and one objective");
    }
    CorpusBundle corpus = load_corpus(args.corpus_dir);
    TransformerLM base = load_base_checkpoint(args.base_checkpoint);
    const auto test_pairs = corpus.pairs_for(corpus.split.test);

    SweepReport report;
    report.base_counts = count_outcomes(base, nullptr, test_pairs, corpus.tok, args.sampler);

    for (const auto& spec : args.adapters) {
        std::map<std::string, OutcomeCounts> counts_by_objective;
        double delta_bugs_sum = 0.0, delta_fixes_sum = 0.0;
        size_t delta_count = 0;

        for (Objective objective : args.objectives) {
            SweepCell cell;
            cell.adapter = adapter_kind_name(spec.kind);
            cell.objective = objective_name(objective);
            try {
                HotfixResult hot = train_hotfix(base, corpus, spec, objective,
                                                args.training);
                if (!args.out_dir.empty()) {
                    fs::create_directories(args.out_dir);
                    save_adapter_checkpoint(
                        join_path(args.out_dir, std::string(cell.adapter) + "_" +
                                                    sanitize(cell.objective) + ".hfx"),
                        hot.adapter);
                }
                const TransformerLM* eval_base = &base;
                TransformerLM quantized;
                if (spec.kind == AdapterKind::kQlora) {
                    quantized = quantize_base(base, spec.quant_bits);
                    eval_base = &quantized;
                }
                cell.counts = count_outcomes(*eval_base, &hot.adapter, test_pairs,
                                             corpus.tok, args.sampler);
                cell.pct_bugs_vs_base = percent_change(double(report.base_counts.n_buggy),
                                                       double(cell.counts.n_buggy));
                cell.pct_fixes_vs_base = percent_change(double(report.base_counts.n_fixed),
                                                        double(cell.counts.n_fixed));
                counts_by_objective[cell.objective] = cell.counts;

                if (auto plain = plain_counterpart(objective)) {
                    auto it = counts_by_objective.find(objective_name(*plain));
                    if (it != counts_by_objective.end() && it->second.n_buggy > 0 &&
                        it->second.n_fixed > 0) {
                        cell.kl_delta_bugs = percent_change(double(it->second.n_buggy),
                                                            double(cell.counts.n_buggy));
                        cell.kl_delta_fixes = percent_change(double(it->second.n_fixed),
                                                             double(cell.counts.n_fixed));
                        delta_bugs_sum += *cell.kl_delta_bugs;
                        delta_fixes_sum += *cell.kl_delta_fixes;
                        ++delta_count;
                    }
                }
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.error = e.what();
            }
            report.cells.push_back(std::move(cell));
        }

        if (delta_count > 0) {
            SweepReport::KlSummary summary;
            summary.adapter = adapter_kind_name(spec.kind);
            summary.mean_delta_bugs = delta_bugs_sum / double(delta_count);
            summary.mean_delta_fixes = delta_fixes_sum / double(delta_count);
            report.kl_summaries.push_back(summary);
        }
    }

    if (!args.out_dir.empty()) {
        write_text_file(join_path(args.out_dir, "sweep.json"), sweep_to_json(report));
        write_text_file(join_path(args.out_dir, "sweep.txt"), render_sweep(report));
    }
    return report;
}

std::string sweep_to_json(const SweepReport& report) {
    json j;
    j["base"] = counts_json(report.base_counts);
    j["cells"] = json::array();
    for (const auto& cell : report.cells) {
        json c{{"adapter", cell.adapter}, {"objective", cell.objective},
               {"failed", cell.failed}};
        if (cell.failed) {
            c["error"] = cell.error;
        } else {
            c["counts"] = counts_json(cell.counts);
            c["pct_bugs_vs_base"] = finite_or_null(cell.pct_bugs_vs_base);
            c["pct_fixes_vs_base"] = finite_or_null(cell.pct_fixes_vs_base);
            if (cell.kl_delta_bugs) c["kl_delta_bugs"] = *cell.kl_delta_bugs;
            if (cell.kl_delta_fixes) c["kl_delta_fixes"] = *cell.kl_delta_fixes;
        }
        j["cells"].push_back(c);
    }
    j["kl_summaries"] = json::array();
    for (const auto& s : report.kl_summaries) {
        j["kl_summaries"].push_back(json{{"adapter", s.adapter},
                                         {"mean_delta_bugs", s.mean_delta_bugs},
                                         {"mean_delta_fixes", s.mean_delta_fixes}});
    }
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

namespace {

template <class T>
void read_field(const json& obj, const char* section, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config field ") + section + "." + key +
                          " has the wrong type");
    }
}

}  // namespace

RunConfig parse_run_config_text(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg;
    if (j.contains("model")) {
        const json& m = j["model"];
        read_field(m, "model", "vocab_size", cfg.model.vocab_size);
        read_field(m, "model", "embed_dim", cfg.model.embed_dim);
        read_field(m, "model", "n_layers", cfg.model.n_layers);
        read_field(m, "model", "n_heads", cfg.model.n_heads);
        read_field(m, "model", "context_len", cfg.model.context_len);
        read_field(m, "model", "seed", cfg.model.seed);
    }
    if (j.contains("adapter")) {
        const json& a = j["adapter"];
        std::string kind = adapter_kind_name(cfg.adapter.kind);
        read_field(a, "adapter", "kind", kind);
        cfg.adapter.kind = adapter_kind_from(kind);
        read_field(a, "adapter", "rank", cfg.adapter.rank);
        read_field(a, "adapter", "alpha", cfg.adapter.alpha);
        read_field(a, "adapter", "prefix_len", cfg.adapter.prefix_len);
        read_field(a, "adapter", "quant_bits", cfg.adapter.quant_bits);
        read_field(a, "adapter", "targets", cfg.adapter.targets);
    }
    if (j.contains("objective")) {
        cfg.objective = objective_from(j["objective"].get<std::string>());
    }
    if (j.contains("training")) {
        const json& t = j["training"];
        read_field(t, "training", "epochs", cfg.training.epochs);
        read_field(t, "training", "batch_size", cfg.training.batch_size);
        read_field(t, "training", "learning_rate", cfg.training.learning_rate);
        read_field(t, "training", "seed", cfg.training.seed);
        read_field(t, "training", "neutral_per_step", cfg.training.neutral_per_step);
        read_field(t, "training", "early_stop", cfg.training.early_stop);
        read_field(t, "training", "patience", cfg.training.patience);
        if (cfg.training.learning_rate <= 0.0) {
            throw ConfigError("config field training.learning_rate must be positive");
        }
        if (cfg.training.batch_size < 1) {
            throw ConfigError("config field training.batch_size must be >= 1");
        }
    }
    if (j.contains("sampler")) {
        const json& s = j["sampler"];
        read_field(s, "sampler", "temperature", cfg.sampler.temperature);
        read_field(s, "sampler", "top_k", cfg.sampler.top_k);
        read_field(s, "sampler", "max_new_tokens", cfg.sampler.max_new_tokens);
        read_field(s, "sampler", "num_samples", cfg.sampler.num_samples);
        read_field(s, "sampler", "stop_token", cfg.sampler.stop_token);
        read_field(s, "sampler", "greedy", cfg.sampler.greedy);
        read_field(s, "sampler", "rng_seed", cfg.sampler.rng_seed);
        cfg.sampler.validate();
    }
    if (j.contains("paths")) {
        const json& p = j["paths"];
        read_field(p, "paths", "corpus", cfg.corpus_dir);
        read_field(p, "paths", "base", cfg.base_checkpoint);
        read_field(p, "paths", "adapter", cfg.adapter_path);
        read_field(p, "paths", "report", cfg.report_path);
        read_field(p, "paths", "sweep_dir", cfg.sweep_dir);
    }
    if (j.contains("sweep")) {
        const json& s = j["sweep"];
        read_field(s, "sweep", "adapters", cfg.sweep_adapters);
        read_field(s, "sweep", "objectives", cfg.sweep_objectives);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config_text(ss.str());
}

std::string render_sweep(const SweepReport& report) {
    std::ostringstream out;
    char buf[200];
    out << "base: bugs " << report.base_counts.n_buggy << ", fixes "
        << report.base_counts.n_fixed << "\n\n";
    std::snprintf(buf, sizeof(buf), "%-8s %-11s %8s %18s %8s %18s %s\n", "adapter",
                  "objective", "bugs", "(vs base)", "fixes", "(vs base)", "KL delta");
    out << buf;
    for (const auto& cell : report.cells) {
        if (cell.failed) {
            std::snprintf(buf, sizeof(buf), "%-8s %-11s FAILED: %s\n", cell.adapter.c_str(),
                          cell.objective.c_str(), cell.error.c_str());
            out << buf;
            continue;
        }
        std::string kl_col;
        if (cell.kl_delta_bugs) {
            kl_col = "bugs " + format_percent_change(*cell.kl_delta_bugs) + ", fixes " +
                     format_percent_change(*cell.kl_delta_fixes);
        }
        std::snprintf(buf, sizeof(buf), "%-8s %-11s %8zu %18s %8zu %18s %s\n",
                      cell.adapter.c_str(), cell.objective.c_str(), cell.counts.n_buggy,
                      format_percent_change(cell.pct_bugs_vs_base).c_str(),
                      cell.counts.n_fixed,
                      format_percent_change(cell.pct_fixes_vs_base).c_str(),
                      kl_col.c_str());
        out << buf;
    }
    if (!report.kl_summaries.empty()) {
        out << "\nChanges by KL (mean per adapter):\n";
        for (const auto& s : report.kl_summaries) {
            std::snprintf(buf, sizeof(buf), "  %-8s bugs %s, fixes %s\n", s.adapter.c_str(),
                          format_percent_change(s.mean_delta_bugs).c_str(),
                          format_percent_change(s.mean_delta_fixes).c_str());
            out << buf;
        }
    }
    return out.str();
}

}  // namespace hfx
