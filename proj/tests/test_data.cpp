#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "hfx/data.hpp"
#include "hfx/error.hpp"
#include "hfx/rng.hpp"

using namespace hfx;

namespace {

// Brute-force oracle: enumerate every common-subsequence alignment, keep the
// longest, break ties by the lexicographically earliest (i1,j1,i2,j2,...)
// flattening. Exponential, only usable for short sequences.
struct BruteAlignment {
    std::vector<std::pair<size_t, size_t>> best;
    bool has_best = false;

    void consider(const std::vector<std::pair<size_t, size_t>>& cand) {
        if (!has_best || cand.size() > best.size()) {
            best = cand;
            has_best = true;
            return;
        }
        if (cand.size() < best.size()) return;
        for (size_t k = 0; k < cand.size(); ++k) {
            if (cand[k] != best[k]) {
                if (cand[k] < best[k]) best = cand;
                return;
            }
        }
    }
};

void enumerate_alignments(const std::vector<int>& a, const std::vector<int>& b, size_t i,
                          size_t j, std::vector<std::pair<size_t, size_t>>& cur,
                          BruteAlignment& out) {
    if (i >= a.size()) {
        out.consider(cur);
        return;
    }
    enumerate_alignments(a, b, i + 1, j, cur, out);  // a[i] unmatched
    for (size_t j2 = j; j2 < b.size(); ++j2) {
        if (a[i] == b[j2]) {
            cur.emplace_back(i, j2);
            enumerate_alignments(a, b, i + 1, j2 + 1, cur, out);
            cur.pop_back();
        }
    }
}

std::pair<std::vector<double>, std::vector<double>> brute_force_masks(
    const std::vector<int>& buggy, const std::vector<int>& fixed) {
    BruteAlignment out;
    std::vector<std::pair<size_t, size_t>> cur;
    enumerate_alignments(buggy, fixed, 0, 0, cur, out);
    std::vector<double> w_minus(buggy.size(), 1.0), w_plus(fixed.size(), 1.0);
    for (auto [i, j] : out.best) {
        w_minus[i] = 0.0;
        w_plus[j] = 0.0;
    }
    return {w_minus, w_plus};
}

std::string normalize(const std::string& text) {
    std::string out;
    for (const auto& unit : Tokenizer::split_units(text)) {
        if (!out.empty()) out += ' ';
        out += unit;
    }
    return out;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("hfx_data_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("tokenizer splits identifiers, numbers, and operators") {
    auto units = Tokenizer::split_units("firstLine.indexOf(':') <= x2 && y_3+=4.5");
    std::vector<std::string> expect = {"firstLine", ".", "indexOf", "(",  "'",  ":",
                                       "'",         ")", "<=",      "x2", "&&", "y_3",
                                       "+=",        "4.5"};
    CHECK(units == expect);
}

TEST_CASE("tokenizer encode/decode round trip on in-vocabulary text") {
    Tokenizer tok = Tokenizer::build({"int x = a . length ( ) ;"}, 64);
    const std::string text = "int   x =\n a . length ( ) ;";
    CHECK(tok.decode(tok.encode(text)) == normalize(text));
}

TEST_CASE("tokenizer maps unseen units to <unk>") {
    Tokenizer tok = Tokenizer::build({"a b"}, 16);
    auto ids = tok.encode("a mystery b");
    CHECK(ids[0] != Tokenizer::kUnkId);
    CHECK(ids[1] == Tokenizer::kUnkId);
    CHECK(ids[2] != Tokenizer::kUnkId);
}

TEST_CASE("diff_masks single substitution") {
    // buggy=[a,b,c], fixed=[a,d,c]
    auto [w_minus, w_plus] = diff_masks({5, 6, 7}, {5, 8, 7});
    CHECK(w_minus == std::vector<double>{0, 1, 0});
    CHECK(w_plus == std::vector<double>{0, 1, 0});
}

TEST_CASE("diff_masks pure insertion leaves w_minus empty") {
    auto [w_minus, w_plus] = diff_masks({5, 6}, {5, 6, 7});
    CHECK(w_minus == std::vector<double>{0, 0});
    CHECK(w_plus == std::vector<double>{0, 0, 1});
}

TEST_CASE("diff_masks rejects identical sequences") {
    CHECK_THROWS_AS(diff_masks({1, 2, 3}, {1, 2, 3}), DegeneratePairError);
}

TEST_CASE("diff_masks matches brute-force LCS oracle on short sequences") {
    Rng rng(41);
    int tested = 0;
    while (tested < 400) {
        const size_t ln = 1 + rng.next_u64() % 8;
        const size_t lm = 1 + rng.next_u64() % 8;
        std::vector<int> buggy(ln), fixed(lm);
        for (auto& v : buggy) v = static_cast<int>(rng.next_u64() % 4);
        for (auto& v : fixed) v = static_cast<int>(rng.next_u64() % 4);
        if (buggy == fixed) continue;
        ++tested;
        auto got = diff_masks(buggy, fixed);
        auto expect = brute_force_masks(buggy, fixed);
        INFO("buggy size ", ln, " fixed size ", lm, " trial ", tested);
        CHECK(got.first == expect.first);
        CHECK(got.second == expect.second);
    }
}

TEST_CASE("diff_masks invariant: |LCS| = len - mask mass on both sides") {
    Rng rng(43);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t ln = 2 + rng.next_u64() % 10;
        const size_t lm = 2 + rng.next_u64() % 10;
        std::vector<int> buggy(ln), fixed(lm);
        for (auto& v : buggy) v = static_cast<int>(rng.next_u64() % 5);
        for (auto& v : fixed) v = static_cast<int>(rng.next_u64() % 5);
        if (buggy == fixed) continue;
        auto [w_minus, w_plus] = diff_masks(buggy, fixed);
        const double minus_mass = std::accumulate(w_minus.begin(), w_minus.end(), 0.0);
        const double plus_mass = std::accumulate(w_plus.begin(), w_plus.end(), 0.0);
        CHECK(double(ln) - minus_mass == double(lm) - plus_mass);
        for (double w : w_minus) CHECK((w == 0.0 || w == 1.0));
        for (double w : w_plus) CHECK((w == 0.0 || w == 1.0));
    }
}

TEST_CASE("build_example marks exactly the swapped receiver") {
    CodePair pair;
    pair.pair_id = "listing";
    pair.context =
        "int index = stacktrace . indexOf ( 10 ) ; "
        "String firstLine = stacktrace . substring ( 0 , index ) ; int index2 =";
    pair.buggy_stmt = "stacktrace . indexOf ( 58 ) ;";
    pair.fixed_stmt = "firstLine . indexOf ( 58 ) ;";
    Tokenizer tok =
        Tokenizer::build({pair.context, pair.buggy_stmt, pair.fixed_stmt}, 64);
    HotfixExample ex = build_example(pair, tok);

    const int first_line_id = tok.id_of("firstLine");
    const int stacktrace_id = tok.id_of("stacktrace");
    for (size_t t = 0; t < ex.fixed_tokens.size(); ++t) {
        if (ex.w_plus[t] == 1.0) {
            CHECK(ex.fixed_tokens[t] == first_line_id);
            CHECK(t >= ex.context_len);
        }
    }
    for (size_t t = 0; t < ex.buggy_tokens.size(); ++t) {
        if (ex.w_minus[t] == 1.0) {
            CHECK(ex.buggy_tokens[t] == stacktrace_id);
            CHECK(t >= ex.context_len);
        }
    }
    CHECK(std::accumulate(ex.w_plus.begin(), ex.w_plus.end(), 0.0) == 1.0);
    CHECK(std::accumulate(ex.w_minus.begin(), ex.w_minus.end(), 0.0) == 1.0);
}

TEST_CASE("build_example context prefix is shared and unmasked") {
    CodePair pair;
    pair.pair_id = "t";
    pair.context = "if ( x";
    pair.buggy_stmt = "> 0 ) ;";
    pair.fixed_stmt = ">= 0 ) ;";
    Tokenizer tok = Tokenizer::build({pair.context, pair.buggy_stmt, pair.fixed_stmt}, 32);
    HotfixExample ex = build_example(pair, tok);
    CHECK(ex.context_len == 3);
    for (size_t t = 0; t < ex.context_len; ++t) {
        CHECK(ex.fixed_tokens[t] == ex.buggy_tokens[t]);
        CHECK(ex.w_plus[t] == 0.0);
        CHECK(ex.w_minus[t] == 0.0);
    }
    // Empty suffix: statement end, then <eos>.
    CHECK(ex.fixed_tokens.size() == ex.context_len + 4 + 1);
    CHECK(ex.fixed_tokens.back() == Tokenizer::kEosId);
}

TEST_CASE("build_example round trip reproduces normalized text") {
    CodePair pair;
    pair.pair_id = "rt";
    pair.context = "int n = arr .";
    pair.buggy_stmt = "count ( ) ;";
    pair.fixed_stmt = "length ( ) ;";
    Tokenizer tok = Tokenizer::build({pair.context, pair.buggy_stmt, pair.fixed_stmt}, 32);
    HotfixExample ex = build_example(pair, tok);
    std::vector<int> no_eos(ex.fixed_tokens.begin(), ex.fixed_tokens.end() - 1);
    CHECK(tok.decode(no_eos) == normalize(pair.context + " " + pair.fixed_stmt));
}

TEST_CASE("build_example rejects identical statements and one-sided diffs") {
    Tokenizer tok = Tokenizer::build({"a b c d"}, 32);
    CodePair same;
    same.pair_id = "same";
    same.context = "a";
    same.buggy_stmt = "b  c";
    same.fixed_stmt = "b c";
    CHECK_THROWS_AS(build_example(same, tok), DegeneratePairError);

    CodePair insertion;
    insertion.pair_id = "ins";
    insertion.context = "a";
    insertion.buggy_stmt = "b c";
    insertion.fixed_stmt = "b c d";
    CHECK_THROWS_AS(build_example(insertion, tok), DegeneratePairError);
}

TEST_CASE("synth_corpus is deterministic and every pair builds") {
    SynthCorpus c1 = synth_corpus(99, 60, 25);
    SynthCorpus c2 = synth_corpus(99, 60, 25);
    REQUIRE(c1.pairs.size() == 60);
    REQUIRE(c1.neutral.size() == 25);
    for (size_t i = 0; i < c1.pairs.size(); ++i) {
        CHECK(c1.pairs[i].context == c2.pairs[i].context);
        CHECK(c1.pairs[i].buggy_stmt == c2.pairs[i].buggy_stmt);
        CHECK(c1.pairs[i].fixed_stmt == c2.pairs[i].fixed_stmt);
    }
    CHECK(c1.neutral == c2.neutral);

    std::vector<std::string> texts = c1.neutral;
    for (const auto& p : c1.pairs) {
        texts.push_back(p.context);
        texts.push_back(p.buggy_stmt);
        texts.push_back(p.fixed_stmt);
    }
    Tokenizer tok = Tokenizer::build(texts, 512);
    for (const auto& p : c1.pairs) {
        CHECK_NOTHROW(build_example(p, tok));
    }
}

TEST_CASE("synth_corpus contexts are distinct") {
    SynthCorpus c = synth_corpus(7, 200, 0);
    std::set<std::string> contexts;
    for (const auto& p : c.pairs) contexts.insert(p.context);
    CHECK(contexts.size() == c.pairs.size());
}

TEST_CASE("split_pairs is a disjoint exhaustive 8:1:1 partition") {
    SynthCorpus c = synth_corpus(5, 100, 0);
    SplitIds split = split_pairs(c.pairs, 11);
    CHECK(split.validation.size() == 10);
    CHECK(split.test.size() == 10);
    CHECK(split.train.size() == 80);
    std::set<std::string> all;
    for (const auto& v : {split.train, split.validation, split.test}) {
        for (const auto& id : v) {
            CHECK(all.insert(id).second);  // disjoint
        }
    }
    CHECK(all.size() == 100);  // exhaustive
}

TEST_CASE("jsonl round trip preserves all fields") {
    TempDir tmp;
    SynthCorpus c = synth_corpus(3, 25, 0);
    const std::string path = (tmp.path / "pairs.jsonl").string();
    save_jsonl(path, c.pairs);
    auto loaded = load_jsonl(path);
    REQUIRE(loaded.size() == c.pairs.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].pair_id == c.pairs[i].pair_id);
        CHECK(loaded[i].context == c.pairs[i].context);
        CHECK(loaded[i].buggy_stmt == c.pairs[i].buggy_stmt);
        CHECK(loaded[i].fixed_stmt == c.pairs[i].fixed_stmt);
        CHECK(loaded[i].suffix == c.pairs[i].suffix);
    }
}

TEST_CASE("jsonl loader keeps order and reports bad lines") {
    TempDir tmp;
    const std::string path = (tmp.path / "in.jsonl").string();
    {
        std::ofstream out(path);
        out << R"({"context":"a","buggy":"b","fixed":"c","id":"one"})" << "\n";
        out << R"({"context":"d","buggy":"e","fixed":"f"})" << "\n";
        out << R"({"context":"g","buggy":"h","fixed":"i","suffix":"}"})" << "\n";
    }
    auto pairs = load_jsonl(path);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].pair_id == "one");
    CHECK(pairs[1].context == "d");
    CHECK(pairs[2].suffix == "}");

    {
        std::ofstream out(path);
        out << R"({"context":"a","buggy":"b","fixed":"c"})" << "\n";
        out << R"({"context":"d","buggy":"e"})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_jsonl(path), doctest::Contains("line 2"), ParseError);

    {
        std::ofstream out(path);
    }
    CHECK(load_jsonl(path).empty());
}
