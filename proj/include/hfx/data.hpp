#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace hfx {

// A single-statement bug/fix change: shared context, the deleted statement,
// and the added statement.
struct CodePair {
    std::string pair_id;
    std::string context;
    std::string buggy_stmt;
    std::string fixed_stmt;
    std::string suffix;  // optional trailing text after the statement
};

// Word/symbol-level tokenizer with whitespace normalization. Vocabulary order
// is fixed at build time; id 0 is <unk>, id 1 is <eos>.
class Tokenizer {
public:
    static constexpr int kUnkId = 0;
    static constexpr int kEosId = 1;

    Tokenizer();
    explicit Tokenizer(std::vector<std::string> vocabulary);

    // Splits text into identifier / number / operator units.
    static std::vector<std::string> split_units(const std::string& text);

    // Scans texts in order, adding unseen units until max_vocab is reached.
    static Tokenizer build(const std::vector<std::string>& texts, size_t max_vocab);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    size_t vocab_size() const { return vocab_.size(); }
    const std::vector<std::string>& vocabulary() const { return vocab_; }
    int id_of(const std::string& unit) const;  // kUnkId when absent

private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
};

// A training example with per-token masks: w_plus marks tokens of the fixed
// sequence that the diff added, w_minus marks tokens of the buggy sequence
// that the diff deleted. Context positions are always zero in both.
struct HotfixExample {
    std::string pair_id;
    std::vector<int> fixed_tokens;
    std::vector<int> buggy_tokens;
    std::vector<double> w_plus;
    std::vector<double> w_minus;
    size_t context_len = 0;
};

// Longest-common-subsequence alignment between the two token sequences;
// ties resolved toward the lexicographically earliest alignment. Returns
// (w_minus, w_plus). Throws DegeneratePairError when the sequences are
// identical.
std::pair<std::vector<double>, std::vector<double>> diff_masks(
    const std::vector<int>& buggy_tokens, const std::vector<int>& fixed_tokens);

// Tokenizes a pair and computes its masks. Throws DegeneratePairError when
// the statements tokenize identically or either mask ends up empty.
HotfixExample build_example(const CodePair& pair, const Tokenizer& tok);

struct SynthCorpus {
    std::vector<CodePair> pairs;
    std::vector<std::string> neutral;
};

// Template-generated pseudo-code pairs with planted one/two-token
// substitutions, plus bug-free sequences for pre-training and perplexity.
SynthCorpus synth_corpus(uint64_t seed, size_t n_pairs, size_t n_neutral);

struct SplitIds {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

// Deterministic 8:1:1 partition of pair ids.
SplitIds split_pairs(const std::vector<CodePair>& pairs, uint64_t seed);

// JSONL ingestion: one object per line with required keys "context",
// "buggy", "fixed" and optional "suffix", "id". Malformed lines raise
// ParseError naming the line number. An empty file yields an empty list.
std::vector<CodePair> load_jsonl(const std::string& path);
void save_jsonl(const std::string& path, const std::vector<CodePair>& pairs);

}  // namespace hfx
