// hfx — hotfix a small autoregressive code model with parameter-efficient
// adapters, then measure how its completions shift.
//
// Subcommands: gen-corpus, train-base, hotfix, evaluate, sweep.
// Exit codes: 0 success, 1 usage/config error, 2 data/compatibility error.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hfx/commands.hpp"
#include "hfx/error.hpp"

namespace {

using namespace hfx;

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// The shared --config file is loaded before flag binding so that flags
// override file values.
RunConfig preload_config(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            return load_run_config(argv[i + 1]);
        }
    }
    return RunConfig{};
}

AdapterSpec spec_for_kind(const RunConfig& cfg, const std::string& kind) {
    AdapterSpec spec = cfg.adapter;
    spec.kind = adapter_kind_from(kind);
    return spec;
}

int run(int argc, char** argv) {
    RunConfig cfg = preload_config(argc, argv);

    CLI::App app{"hotfix toolkit: steer a small code model with trainable adapters"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration (flags override it)");

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic bug/fix corpus");
    GenCorpusArgs gen_args;
    gen->add_option("--seed", gen_args.seed, "corpus seed");
    gen->add_option("--pairs", gen_args.n_pairs, "number of bug/fix pairs");
    gen->add_option("--neutral", gen_args.n_neutral, "number of bug-free sequences");
    gen->add_option("--out", gen_args.out_dir, "output directory")->required();

    // shared training/model/sampler overrides
    auto add_training_flags = [&](CLI::App* sub) {
        sub->add_option("--epochs", cfg.training.epochs, "training epochs");
        sub->add_option("--batch-size", cfg.training.batch_size, "batch size");
        sub->add_option("--lr", cfg.training.learning_rate, "learning rate");
        sub->add_option("--seed", cfg.training.seed, "training seed");
        sub->add_flag("--no-early-stop", [&](size_t) { cfg.training.early_stop = false; },
                      "disable validation early stopping");
    };
    auto add_sampler_flags = [&](CLI::App* sub) {
        sub->add_option("--temperature", cfg.sampler.temperature, "sampling temperature");
        sub->add_option("--top-k", cfg.sampler.top_k, "top-k cutoff (0 = off)");
        sub->add_option("--samples", cfg.sampler.num_samples, "samples per prompt");
        sub->add_option("--max-new-tokens", cfg.sampler.max_new_tokens,
                        "generation length cap");
        sub->add_option("--sampler-seed", cfg.sampler.rng_seed, "sampling seed");
    };

    // train-base
    auto* train = app.add_subcommand("train-base", "pre-train the base model");
    train->add_option("--corpus", cfg.corpus_dir, "corpus directory");
    train->add_option("--out", cfg.base_checkpoint, "output base checkpoint");
    train->add_option("--vocab-size", cfg.model.vocab_size, "vocabulary capacity");
    train->add_option("--embed-dim", cfg.model.embed_dim, "embedding width");
    train->add_option("--layers", cfg.model.n_layers, "decoder layers");
    train->add_option("--heads", cfg.model.n_heads, "attention heads");
    train->add_option("--context-len", cfg.model.context_len, "context window");
    train->add_option("--model-seed", cfg.model.seed, "initialization seed");
    add_training_flags(train);

    // hotfix
    auto* hot = app.add_subcommand("hotfix", "train an adapter against a frozen base");
    std::string adapter_kind = adapter_kind_name(cfg.adapter.kind);
    std::string objective_str = objective_name(cfg.objective);
    std::string targets_csv;
    hot->add_option("--corpus", cfg.corpus_dir, "corpus directory");
    hot->add_option("--base", cfg.base_checkpoint, "base checkpoint");
    hot->add_option("--out", cfg.adapter_path, "output adapter file");
    hot->add_option("--objective", objective_str,
                    "Vanilla|Guided|Dual|Vanilla+KL|Guided+KL|Dual+KL");
    hot->add_option("--adapter-kind", adapter_kind, "lora|ia3|prefix|qlora");
    hot->add_option("--rank", cfg.adapter.rank, "LoRA rank");
    hot->add_option("--alpha", cfg.adapter.alpha, "LoRA scale");
    hot->add_option("--prefix-len", cfg.adapter.prefix_len, "prefix slots");
    hot->add_option("--quant-bits", cfg.adapter.quant_bits, "qlora bits (4|8)");
    hot->add_option("--targets", targets_csv, "projections to adapt, e.g. q,v");
    add_training_flags(hot);

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "measure bug/fix shift and side effects");
    std::string adapter_file;
    std::string split = "test";
    size_t n_tasks = 40;
    eval->add_option("--corpus", cfg.corpus_dir, "corpus directory");
    eval->add_option("--base", cfg.base_checkpoint, "base checkpoint");
    eval->add_option("--adapter", adapter_file, "adapter to attach (omit: base only)");
    eval->add_option("--split", split, "train|validation|test");
    eval->add_option("--report", cfg.report_path, "report path prefix");
    eval->add_option("--tasks", n_tasks, "synthetic task count");
    add_sampler_flags(eval);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "run an adapters x objectives grid");
    std::string adapters_csv, objectives_csv;
    sweep->add_option("--corpus", cfg.corpus_dir, "corpus directory");
    sweep->add_option("--base", cfg.base_checkpoint, "base checkpoint");
    sweep->add_option("--out", cfg.sweep_dir, "output directory");
    sweep->add_option("--adapters", adapters_csv, "comma list: lora,ia3,prefix,qlora");
    sweep->add_option("--objectives", objectives_csv,
                      "comma list of objective names");
    add_training_flags(sweep);
    add_sampler_flags(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);  // prints help or the usage message
        return rc == 0 ? 0 : 1;
    }

    if (gen->parsed()) {
        cmd_gen_corpus(gen_args);
        std::cout << "corpus written to " << gen_args.out_dir << "\n";
        return 0;
    }
    if (train->parsed()) {
        if (cfg.corpus_dir.empty() || cfg.base_checkpoint.empty()) {
            throw UsageError("train-base needs --corpus and --out (or paths in --config)");
        }
        TrainBaseArgs args;
        args.model = cfg.model;
        args.training = cfg.training;
        args.corpus_dir = cfg.corpus_dir;
        args.out_checkpoint = cfg.base_checkpoint;
        TrainBaseResult result = cmd_train_base(args);
        std::cout << "base checkpoint " << args.out_checkpoint << " ("
                  << result.loss_trace.size() << " epochs, final loss "
                  << (result.loss_trace.empty() ? 0.0 : result.loss_trace.back()) << ")\n";
        return 0;
    }
    if (hot->parsed()) {
        if (cfg.corpus_dir.empty() || cfg.base_checkpoint.empty() ||
            cfg.adapter_path.empty()) {
            throw UsageError("hotfix needs --corpus, --base, and --out");
        }
        HotfixArgs args;
        args.corpus_dir = cfg.corpus_dir;
        args.base_checkpoint = cfg.base_checkpoint;
        args.out_adapter = cfg.adapter_path;
        args.adapter = cfg.adapter;
        args.adapter.kind = adapter_kind_from(adapter_kind);
        if (!targets_csv.empty()) args.adapter.targets = split_csv(targets_csv);
        args.objective = objective_from(objective_str);
        args.training = cfg.training;
        HotfixResult result = cmd_hotfix(args);
        std::cout << "adapter " << args.out_adapter << " (" << result.epochs_run
                  << " epochs, " << result.seconds_per_epoch << " s/epoch, "
                  << result.adapter.trainable_count() << " trainable params)\n";
        return 0;
    }
    if (eval->parsed()) {
        if (cfg.corpus_dir.empty() || cfg.base_checkpoint.empty()) {
            throw UsageError("evaluate needs --corpus and --base");
        }
        EvaluateArgs args;
        args.corpus_dir = cfg.corpus_dir;
        args.base_checkpoint = cfg.base_checkpoint;
        if (!adapter_file.empty()) args.adapter_checkpoint = adapter_file;
        args.split = split;
        args.sampler = cfg.sampler;
        args.report_path = cfg.report_path;
        args.n_tasks = n_tasks;
        EvalReport report = cmd_evaluate(args);
        std::cout << render_report(report);
        return 0;
    }
    if (sweep->parsed()) {
        if (cfg.corpus_dir.empty() || cfg.base_checkpoint.empty() || cfg.sweep_dir.empty()) {
            throw UsageError("sweep needs --corpus, --base, and --out");
        }
        SweepArgs args;
        args.corpus_dir = cfg.corpus_dir;
        args.base_checkpoint = cfg.base_checkpoint;
        args.out_dir = cfg.sweep_dir;
        auto adapter_names = adapters_csv.empty() ? cfg.sweep_adapters
                                                  : split_csv(adapters_csv);
        for (const auto& name : adapter_names) {
            args.adapters.push_back(spec_for_kind(cfg, name));
        }
        auto objective_names = objectives_csv.empty() ? cfg.sweep_objectives
                                                      : split_csv(objectives_csv);
        for (const auto& name : objective_names) {
            args.objectives.push_back(objective_from(name));
        }
        args.training = cfg.training;
        args.sampler = cfg.sampler;
        SweepReport report = cmd_sweep(args);
        std::cout << render_sweep(report);
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const hfx::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const hfx::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const hfx::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
