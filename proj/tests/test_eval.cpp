#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>

#include "hfx/data.hpp"
#include "hfx/error.hpp"
#include "hfx/eval.hpp"
#include "hfx/model.hpp"
#include "hfx/rng.hpp"

using namespace hfx;

namespace {

// Oracle: fraction of the C(n,k) sample subsets that contain at least one of
// the c correct samples, by direct enumeration.
double pass_at_k_oracle(size_t n, size_t c, size_t k) {
    size_t total = 0, with_correct = 0;
    for (uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<size_t>(std::popcount(mask)) != k) continue;
        ++total;
        if ((mask & ((1u << c) - 1u)) != 0u) ++with_correct;
    }
    return static_cast<double>(with_correct) / static_cast<double>(total);
}

// Oracle: exact two-sided Wilcoxon p by enumerating all sign assignments.
// Ranks computed with its own (insertion-sort based) routine.
double wilcoxon_p_oracle(std::vector<double> x, std::vector<double> y) {
    std::vector<double> d;
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] != y[i]) d.push_back(x[i] - y[i]);
    }
    const size_t n = d.size();
    std::vector<double> mags(n);
    for (size_t i = 0; i < n; ++i) mags[i] = std::abs(d[i]);
    std::vector<double> sorted = mags;
    for (size_t i = 1; i < sorted.size(); ++i) {  // insertion sort
        double key = sorted[i];
        size_t j = i;
        while (j > 0 && sorted[j - 1] > key) {
            sorted[j] = sorted[j - 1];
            --j;
        }
        sorted[j] = key;
    }
    auto rank_of = [&](double mag) {
        double sum = 0.0;
        size_t count = 0;
        for (size_t i = 0; i < n; ++i) {
            if (sorted[i] == mag) {
                sum += static_cast<double>(i + 1);
                ++count;
            }
        }
        return sum / static_cast<double>(count);
    };
    double w_plus = 0.0;
    std::vector<double> ranks(n);
    for (size_t i = 0; i < n; ++i) {
        ranks[i] = rank_of(mags[i]);
        if (d[i] > 0) w_plus += ranks[i];
    }
    uint64_t le = 0, ge = 0;
    const uint64_t total = 1ull << n;
    for (uint64_t signs = 0; signs < total; ++signs) {
        double t = 0.0;
        for (size_t i = 0; i < n; ++i) {
            if (signs & (1ull << i)) t += ranks[i];
        }
        if (t <= w_plus + 1e-9) ++le;
        if (t >= w_plus - 1e-9) ++ge;
    }
    const double p =
        2.0 * std::min(static_cast<double>(le), static_cast<double>(ge)) /
        static_cast<double>(total);
    return std::min(1.0, p);
}

struct EvalFixture {
    SynthCorpus corpus;
    Tokenizer tok;
    ModelConfig cfg;

    EvalFixture() {
        corpus = synth_corpus(71, 12, 8);
        std::vector<std::string> texts = corpus.neutral;
        for (const auto& p : corpus.pairs) {
            texts.push_back(p.context);
            texts.push_back(p.buggy_stmt);
            texts.push_back(p.fixed_stmt);
        }
        tok = Tokenizer::build(texts, 512);
        cfg.vocab_size = tok.vocab_size();
        cfg.embed_dim = 16;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.context_len = 96;
        cfg.seed = 5;
    }
};

}  // namespace

TEST_CASE("classify_output basic buckets") {
    Tokenizer tok = Tokenizer::build({"x <= arr . length ; x < arr . length ; foo bar"}, 64);
    CHECK(classify_output("< arr . length ;", "<= arr . length ;", "< arr . length ;",
                          tok) == OutcomeClass::kFixed);
    CHECK(classify_output("foo bar", "<= arr . length ;", "< arr . length ;", tok) ==
          OutcomeClass::kNeither);
    CHECK(classify_output("x <= arr . length ;", "<= arr . length ;", "< arr . length ;",
                          tok) == OutcomeClass::kBuggy);
}

TEST_CASE("classify_output normalizes whitespace") {
    Tokenizer tok = Tokenizer::build({"first . indexOf ( 1 ) ; second"}, 64);
    CHECK(classify_output("  first .   indexOf (\n1 ) ;", "second . indexOf ( 1 ) ;",
                          "first . indexOf ( 1 ) ;", tok) == OutcomeClass::kFixed);
}

TEST_CASE("classify_output counts a sample with both statements as fixed") {
    Tokenizer tok = Tokenizer::build({"good bad other"}, 64);
    CHECK(classify_output("bad then good", "bad", "good", tok) == OutcomeClass::kFixed);
}

TEST_CASE("classify_output does not match across token boundaries") {
    Tokenizer tok = Tokenizer::build({"x >= 0 > 1"}, 64);
    // ">= 0" must not be read as containing "> 0".
    CHECK(classify_output("x >= 0", "> 0", "> 1", tok) == OutcomeClass::kNeither);
}

TEST_CASE("count_outcomes conserves buckets and is order independent") {
    EvalFixture fx;
    TransformerLM model(fx.cfg);
    SamplerConfig sampler;
    sampler.num_samples = 4;
    sampler.max_new_tokens = 6;
    sampler.stop_token = Tokenizer::kEosId;
    sampler.rng_seed = 17;

    OutcomeCounts counts = count_outcomes(model, nullptr, fx.corpus.pairs, fx.tok, sampler);
    CHECK(counts.n_prompts == fx.corpus.pairs.size());
    CHECK(counts.total() == counts.n_prompts * sampler.num_samples);

    OutcomeCounts again = count_outcomes(model, nullptr, fx.corpus.pairs, fx.tok, sampler);
    CHECK(counts.n_buggy == again.n_buggy);
    CHECK(counts.n_fixed == again.n_fixed);
    CHECK(counts.n_neither == again.n_neither);

    auto shuffled = fx.corpus.pairs;
    std::reverse(shuffled.begin(), shuffled.end());
    OutcomeCounts reordered = count_outcomes(model, nullptr, shuffled, fx.tok, sampler);
    CHECK(counts.n_buggy == reordered.n_buggy);
    CHECK(counts.n_fixed == reordered.n_fixed);
    CHECK(counts.n_neither == reordered.n_neither);
}

TEST_CASE("perplexity of a zero-head model equals the vocabulary size") {
    EvalFixture fx;
    TransformerLM model(fx.cfg);
    Tensor head = model.param("head");
    std::fill(head.data().begin(), head.data().end(), 0.0);
    std::vector<std::vector<int>> corpus;
    for (const auto& text : fx.corpus.neutral) corpus.push_back(fx.tok.encode(text));
    const double ppl = perplexity(model, nullptr, corpus);
    CHECK(std::abs(ppl - double(fx.cfg.vocab_size)) / double(fx.cfg.vocab_size) < 1e-6);
}

TEST_CASE("perplexity matches the loop oracle") {
    EvalFixture fx;
    TransformerLM model(fx.cfg);
    std::vector<std::vector<int>> corpus;
    for (const auto& text : fx.corpus.neutral) corpus.push_back(fx.tok.encode(text));

    double total = 0.0;
    size_t count = 0;
    for (const auto& seq : corpus) {
        Tensor lp = log_softmax_rows(model.forward(seq));
        for (size_t i = 0; i + 1 < seq.size(); ++i) {
            total -= lp.at(i, static_cast<size_t>(seq[i + 1]));
            ++count;
        }
    }
    const double oracle = std::exp(total / double(count));
    const double got = perplexity(model, nullptr, corpus);
    CHECK(std::abs(got - oracle) / oracle < 1e-10);
}

TEST_CASE("pass_at_k analytic cases") {
    CHECK(pass_at_k(7, 7, 3) == 1.0);
    CHECK(pass_at_k(5, 0, 2) == 0.0);
    CHECK(pass_at_k(2, 1, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(pass_at_k(3, 1, 4), ConfigError);
    CHECK_THROWS_AS(pass_at_k(3, 4, 2), ConfigError);
}

TEST_CASE("pass_at_k matches subset enumeration for all n <= 12") {
    for (size_t n = 1; n <= 12; ++n) {
        for (size_t c = 0; c <= n; ++c) {
            for (size_t k = 1; k <= n; ++k) {
                const double got = pass_at_k(n, c, k);
                const double expect = pass_at_k_oracle(n, c, k);
                INFO("n=", n, " c=", c, " k=", k);
                CHECK(std::abs(got - expect) < 1e-12);
            }
        }
    }
}

TEST_CASE("pass_at_k is monotone in k and c") {
    for (size_t n : {6, 10}) {
        for (size_t c = 0; c <= n; ++c) {
            for (size_t k = 1; k < n; ++k) {
                CHECK(pass_at_k(n, c, k + 1) >= pass_at_k(n, c, k));
                if (c < n) CHECK(pass_at_k(n, c + 1, k) >= pass_at_k(n, c, k));
            }
        }
    }
}

TEST_CASE("wilcoxon rejects all-zero differences") {
    std::vector<double> x{1, 2, 3, 4, 5, 6};
    CHECK_THROWS_AS(wilcoxon_signed_rank(x, x), InsufficientDataError);
    CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2, 3, 4, 5, 6}, {1, 2, 3, 4, 5, 7}),
                    InsufficientDataError);  // one nonzero difference
}

TEST_CASE("wilcoxon n=5 all-positive gives exact p = 2/32") {
    std::vector<double> x{2, 3, 4, 5, 6};
    std::vector<double> y{1, 1, 1, 1, 1};
    auto res = wilcoxon_signed_rank(x, y);
    CHECK(res.n_effective == 5);
    CHECK(res.statistic == 0.0);
    CHECK(res.p_value == doctest::Approx(0.0625).epsilon(1e-12));
}

TEST_CASE("wilcoxon matches the sign-enumeration oracle on random n=10 cases") {
    Rng rng(83);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<double> x(10), y(10);
        for (size_t i = 0; i < 10; ++i) {
            x[i] = std::round(rng.gaussian() * 4.0);
            y[i] = std::round(rng.gaussian() * 4.0);
        }
        size_t nonzero = 0;
        for (size_t i = 0; i < 10; ++i) {
            if (x[i] != y[i]) ++nonzero;
        }
        if (nonzero < 5) continue;
        auto res = wilcoxon_signed_rank(x, y);
        const double oracle = wilcoxon_p_oracle(x, y);
        INFO("trial ", trial);
        CHECK(std::abs(res.p_value - oracle) < 1e-12);
    }
}

TEST_CASE("wilcoxon is symmetric and shift invariant") {
    Rng rng(89);
    std::vector<double> x(9), y(9);
    for (size_t i = 0; i < 9; ++i) {
        x[i] = rng.gaussian();
        y[i] = rng.gaussian();
    }
    auto a = wilcoxon_signed_rank(x, y);
    auto b = wilcoxon_signed_rank(y, x);
    CHECK(a.p_value == doctest::Approx(b.p_value).epsilon(1e-12));
    CHECK(a.statistic == doctest::Approx(b.statistic).epsilon(1e-12));

    auto shifted_x = x;
    auto shifted_y = y;
    for (size_t i = 0; i < 9; ++i) {
        shifted_x[i] += 3.25;
        shifted_y[i] += 3.25;
    }
    auto c = wilcoxon_signed_rank(shifted_x, shifted_y);
    CHECK(a.p_value == doctest::Approx(c.p_value).epsilon(1e-12));
}

TEST_CASE("wilcoxon approximation path for larger n") {
    Rng rng(97);
    std::vector<double> x(30), y(30);
    for (size_t i = 0; i < 30; ++i) {
        x[i] = rng.gaussian();
        y[i] = x[i] + rng.gaussian() * 0.5;
    }
    auto res = wilcoxon_signed_rank(x, y);
    CHECK(res.n_effective > 12);
    CHECK(res.p_value >= 0.0);
    CHECK(res.p_value <= 1.0);
}

TEST_CASE("percent change follows (after-before)/before") {
    CHECK(percent_change(2943, 1639) == doctest::Approx(-44.3085).epsilon(1e-4));
    CHECK(percent_change(1829, 3811) == doctest::Approx(108.3652).epsilon(1e-4));
    CHECK(percent_change(250, 250) == 0.0);
    CHECK_THROWS_AS(percent_change(0, 10), DataError);
}

TEST_CASE("percent change formatting") {
    CHECK(format_percent_change(percent_change(100, 50)) == "50.00% ↓");
    CHECK(format_percent_change(percent_change(100, 208.42)) == "108.42% ↑");
    CHECK(format_percent_change(0.0) == "0.00%");
}

TEST_CASE("continuation tasks are deterministic and sized") {
    EvalFixture fx;
    std::vector<std::vector<int>> heldout;
    for (const auto& text : fx.corpus.neutral) heldout.push_back(fx.tok.encode(text));
    auto tasks = make_continuation_tasks(heldout, 6, 4);
    CHECK(tasks.size() == 6);
    for (const auto& t : tasks) {
        CHECK(!t.prompt.empty());
        CHECK(t.reference.size() <= 4);
        CHECK(!t.reference.empty());
    }

    TransformerLM model(fx.cfg);
    SamplerConfig sampler;
    sampler.num_samples = 5;
    sampler.rng_seed = 3;
    auto e1 = task_pass_estimates(model, nullptr, tasks, sampler, 2);
    auto e2 = task_pass_estimates(model, nullptr, tasks, sampler, 2);
    CHECK(e1 == e2);
    CHECK(e1.size() == tasks.size());
    for (double v : e1) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}
