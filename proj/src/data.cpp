#include "hfx/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hfx/error.hpp"
#include "hfx/rng.hpp"

namespace hfx {

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

namespace {

const std::array<const char*, 14> kMultiCharOps = {
    "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "->", "<<", ">>", "::",
};

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)); }

}  // namespace

Tokenizer::Tokenizer() : Tokenizer(std::vector<std::string>{}) {}

Tokenizer::Tokenizer(std::vector<std::string> vocabulary) {
    vocab_.push_back("<unk>");
    vocab_.push_back("<eos>");
    for (auto& unit : vocabulary) {
        if (unit == "<unk>" || unit == "<eos>") continue;
        vocab_.push_back(std::move(unit));
    }
    for (size_t i = 0; i < vocab_.size(); ++i) {
        index_[vocab_[i]] = static_cast<int>(i);
    }
}

std::vector<std::string> Tokenizer::split_units(const std::string& text) {
    std::vector<std::string> units;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (is_ident_start(c)) {
            size_t j = i + 1;
            while (j < n && is_ident_char(text[j])) ++j;
            units.push_back(text.substr(i, j - i));
            i = j;
            continue;
        }
        if (is_digit(c)) {
            size_t j = i + 1;
            while (j < n && is_digit(text[j])) ++j;
            if (j + 1 < n && text[j] == '.' && is_digit(text[j + 1])) {
                j += 2;
                while (j < n && is_digit(text[j])) ++j;
            }
            units.push_back(text.substr(i, j - i));
            i = j;
            continue;
        }
        bool matched = false;
        for (const char* op : kMultiCharOps) {
            const size_t len = 2;
            if (i + len <= n && text.compare(i, len, op) == 0) {
                units.emplace_back(op);
                i += len;
                matched = true;
                break;
            }
        }
        if (!matched) {
            units.push_back(std::string(1, c));
            ++i;
        }
    }
    return units;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, size_t max_vocab) {
    std::vector<std::string> vocab;
    std::set<std::string> seen;
    for (const auto& text : texts) {
        for (auto& unit : split_units(text)) {
            if (seen.insert(unit).second) {
                if (vocab.size() + 2 >= max_vocab) {
                    throw DataError("tokenizer: corpus needs more than " +
                                    std::to_string(max_vocab) + " vocabulary entries");
                }
                vocab.push_back(unit);
            }
        }
    }
    return Tokenizer(std::move(vocab));
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& unit : split_units(text)) {
        ids.push_back(id_of(unit));
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= vocab_.size()) {
            throw DataError("decode: token id " + std::to_string(id) + " out of range");
        }
        if (!out.empty()) out += ' ';
        out += vocab_[static_cast<size_t>(id)];
    }
    return out;
}

int Tokenizer::id_of(const std::string& unit) const {
    auto it = index_.find(unit);
    return it == index_.end() ? kUnkId : it->second;
}

// ---------------------------------------------------------------------------
// Diff masks
// ---------------------------------------------------------------------------

std::pair<std::vector<double>, std::vector<double>> diff_masks(
    const std::vector<int>& buggy_tokens, const std::vector<int>& fixed_tokens) {
    if (buggy_tokens.empty() || fixed_tokens.empty()) {
        throw DataError("diff_masks: empty token sequence");
    }
    if (buggy_tokens == fixed_tokens) {
        throw DegeneratePairError("diff_masks: sequences are identical");
    }
    const size_t n = buggy_tokens.size(), m = fixed_tokens.size();

    // Suffix LCS table: s[i][j] = LCS length of buggy[i..] vs fixed[j..].
    std::vector<std::vector<int>> s(n + 1, std::vector<int>(m + 1, 0));
    for (size_t i = n; i-- > 0;) {
        for (size_t j = m; j-- > 0;) {
            if (buggy_tokens[i] == fixed_tokens[j]) {
                s[i][j] = 1 + s[i + 1][j + 1];
            }
            s[i][j] = std::max({s[i][j], s[i + 1][j], s[i][j + 1]});
        }
    }

    // Walk the lexicographically earliest maximal alignment: always take the
    // smallest buggy index that can still be matched optimally, then the
    // smallest fixed index for it.
    std::vector<double> w_minus(n, 1.0), w_plus(m, 1.0);
    size_t i = 0, j = 0;
    while (i < n && j < m && s[i][j] > 0) {
        bool matched = false;
        for (size_t i2 = i; i2 < n && s[i2][j] == s[i][j]; ++i2) {
            for (size_t j2 = j; j2 < m; ++j2) {
                if (buggy_tokens[i2] == fixed_tokens[j2] &&
                    1 + s[i2 + 1][j2 + 1] == s[i][j]) {
                    w_minus[i2] = 0.0;
                    w_plus[j2] = 0.0;
                    i = i2 + 1;
                    j = j2 + 1;
                    matched = true;
                    break;
                }
            }
            if (matched) break;
        }
        if (!matched) break;  // unreachable: s[i][j] > 0 guarantees a match
    }
    return {std::move(w_minus), std::move(w_plus)};
}

// ---------------------------------------------------------------------------
// Example construction
// ---------------------------------------------------------------------------

HotfixExample build_example(const CodePair& pair, const Tokenizer& tok) {
    if (pair.context.empty()) {
        throw DataError("pair " + pair.pair_id + ": empty context");
    }
    const std::vector<int> ctx = tok.encode(pair.context);
    const std::vector<int> buggy_stmt = tok.encode(pair.buggy_stmt);
    const std::vector<int> fixed_stmt = tok.encode(pair.fixed_stmt);
    if (buggy_stmt == fixed_stmt) {
        throw DegeneratePairError("pair " + pair.pair_id +
                                  ": statements tokenize identically");
    }
    const std::vector<int> suffix = tok.encode(pair.suffix);

    HotfixExample ex;
    ex.pair_id = pair.pair_id;
    ex.context_len = ctx.size();
    auto assemble = [&](const std::vector<int>& stmt) {
        std::vector<int> seq = ctx;
        seq.insert(seq.end(), stmt.begin(), stmt.end());
        seq.insert(seq.end(), suffix.begin(), suffix.end());
        seq.push_back(Tokenizer::kEosId);
        return seq;
    };
    ex.fixed_tokens = assemble(fixed_stmt);
    ex.buggy_tokens = assemble(buggy_stmt);

    auto [w_minus, w_plus] = diff_masks(ex.buggy_tokens, ex.fixed_tokens);
    double plus_mass = 0.0, minus_mass = 0.0;
    for (double w : w_plus) plus_mass += w;
    for (double w : w_minus) minus_mass += w;
    if (plus_mass < 1.0 || minus_mass < 1.0) {
        throw DegeneratePairError("pair " + pair.pair_id +
                                  ": one-sided diff (pure insertion or deletion)");
    }
    ex.w_plus = std::move(w_plus);
    ex.w_minus = std::move(w_minus);
    return ex;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

struct PairTemplate {
    // Placeholders: $A $B $C identifier slots, $N $M number slots.
    const char* context;
    const char* buggy;
    const char* fixed;
};

// Each family plants one substitution; the divergence sits at the very start
// of the statement so prompts end right before the interesting token.
const std::array<PairTemplate, 10> kPairTemplates = {{
    {"int bound = $N ; int [ ] $A = new int [ bound ] ; for ( int $B = 0 ; $B",
     "<= $A . length ; $B ++ )", "< $A . length ; $B ++ )"},
    {"String $A = $C . get ( $N ) ; if ( $A",
     "!= null ) { return ; }", "== null ) { return ; }"},
    {"int $B = $A . indexOf ( $N ) ; String $C = $A . substring ( $B",
     "- 1 ) ;", "+ 1 ) ;"},
    {"int [ ] $A = make ( $N ) ; int $B = $A .",
     "count ( ) ;", "length ( ) ;"},
    {"String $B = $A . trim ( ) ; int $C = $A . indexOf ( $N ) ; int next =",
     "$A . indexOf ( $M ) ;", "$B . indexOf ( $M ) ;"},
    {"int $C = $A - $B ; if ( $C",
     "> 0 ) { return $A ; }", ">= 0 ) { return $A ; }"},
    {"boolean $A = $C . isEmpty ( ) ; if ( $A ) { return",
     "true ; }", "false ; }"},
    {"String $A = read ( $N ) ; int $B = $A . charAt (",
     "0 ) ;", "1 ) ;"},
    {"boolean $A = $C != null ; boolean $B = $C . ready ( ) ; if ( $A",
     "&& $B ) { run ( ) ; }", "|| $B ) { run ( ) ; }"},
    {"int $A = left ( $N ) ; int $B = right ( $M ) ; int $C = Math .",
     "min ( $A , $B ) ;", "max ( $A , $B ) ;"},
}};

const std::array<const char*, 5> kNeutralTemplates = {{
    "int $A = $B * $N ; int $C = $A + $M ; store ( $C ) ;",
    "for ( int $A = 0 ; $A < $N ; $A ++ ) { emit ( $A ) ; }",
    "String $A = name ( $N ) ; int $B = $A . length ( ) ; record ( $B ) ;",
    "boolean $A = check ( $N ) ; if ( $A ) { flag ( $M ) ; }",
    "int $A = $B + $N ; int $C = $A / 2 ; push ( $C ) ;",
}};

const std::array<const char*, 18> kIdentPool = {{
    "arr", "buf", "items", "vals", "nums", "keys", "rows", "cache", "line",
    "text", "node", "entry", "field", "token", "label", "slot", "chunk", "word",
}};

std::string instantiate(const std::string& tpl, const std::array<std::string, 3>& idents,
                        int n, int m) {
    std::string out;
    for (size_t i = 0; i < tpl.size(); ++i) {
        if (tpl[i] != '$') {
            out += tpl[i];
            continue;
        }
        ++i;
        switch (tpl[i]) {
            case 'A': out += idents[0]; break;
            case 'B': out += idents[1]; break;
            case 'C': out += idents[2]; break;
            case 'N': out += std::to_string(n); break;
            case 'M': out += std::to_string(m); break;
            default: throw DataError("bad template placeholder");
        }
    }
    return out;
}

std::array<std::string, 3> pick_idents(size_t a, size_t b, size_t c) {
    const size_t base = kIdentPool.size();
    std::array<std::string, 3> idents = {kIdentPool[a % base], kIdentPool[b % base],
                                         kIdentPool[c % base]};
    if (idents[1] == idents[0]) idents[1] = kIdentPool[(b + 1) % base];
    while (idents[2] == idents[0] || idents[2] == idents[1]) {
        ++c;
        idents[2] = kIdentPool[c % base];
    }
    return idents;
}

}  // namespace

SynthCorpus synth_corpus(uint64_t seed, size_t n_pairs, size_t n_neutral) {
    if (n_pairs < 1) {
        throw ConfigError("synth_corpus: n_pairs must be >= 1");
    }
    Rng rng(Rng::stream(seed, "synth-corpus"));
    SynthCorpus corpus;
    std::set<std::string> seen_contexts;

    for (size_t p = 0; p < n_pairs; ++p) {
        const size_t family = p % kPairTemplates.size();
        const size_t ordinal = p / kPairTemplates.size();
        const auto& tpl = kPairTemplates[family];
        // Names and literals come from small pools so embeddings are shared
        // across pairs; the combination is keyed by the ordinal so contexts
        // within a family stay distinct.
        auto idents = pick_idents(ordinal + family, ordinal * 5 + family * 7 + 1,
                                  ordinal * 11 + family * 3 + 2);
        const int n = 2 + static_cast<int>((ordinal + rng.next_u64() % 3) % 37);
        const int m = 2 + static_cast<int>((ordinal * 3 + rng.next_u64() % 5) % 31);

        CodePair pair;
        pair.pair_id = "p" + std::to_string(1000 + p);
        pair.context = instantiate(tpl.context, idents, n, m);
        pair.buggy_stmt = instantiate(tpl.buggy, idents, n, m);
        pair.fixed_stmt = instantiate(tpl.fixed, idents, n, m);
        if (p % 5 == 4) {
            pair.suffix = "}";
        }
        if (!seen_contexts.insert(pair.context).second) {
            pair.context = "int tag = " + std::to_string(100 + p) + " ; " + pair.context;
            seen_contexts.insert(pair.context);
        }
        corpus.pairs.push_back(std::move(pair));
    }

    for (size_t q = 0; q < n_neutral; ++q) {
        const size_t family = q % kNeutralTemplates.size();
        const size_t ordinal = q / kNeutralTemplates.size();
        auto idents = pick_idents(ordinal * 7 + family, ordinal * 3 + family * 5 + 4,
                                  ordinal + family * 9 + 8);
        const int n = 2 + static_cast<int>((ordinal * 5 + rng.next_u64() % 7) % 37);
        const int m = 2 + static_cast<int>((ordinal * 2 + rng.next_u64() % 3) % 31);
        corpus.neutral.push_back(instantiate(kNeutralTemplates[family], idents, n, m));
    }
    return corpus;
}

SplitIds split_pairs(const std::vector<CodePair>& pairs, uint64_t seed) {
    std::vector<std::string> ids;
    ids.reserve(pairs.size());
    for (const auto& p : pairs) ids.push_back(p.pair_id);
    Rng rng(Rng::stream(seed, "split-8-1-1"));
    rng.shuffle(ids);
    const size_t n = ids.size();
    const size_t n_val = n / 10;
    const size_t n_test = n / 10;
    SplitIds split;
    split.test.assign(ids.begin(), ids.begin() + n_test);
    split.validation.assign(ids.begin() + n_test, ids.begin() + n_test + n_val);
    split.train.assign(ids.begin() + n_test + n_val, ids.end());
    return split;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

std::vector<CodePair> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::vector<CodePair> pairs;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        CodePair pair;
        for (const char* key : {"context", "buggy", "fixed"}) {
            if (!obj.contains(key) || !obj[key].is_string()) {
                throw ParseError(path + " line " + std::to_string(line_no) +
                                 ": missing string field \"" + key + "\"");
            }
        }
        pair.context = obj["context"].get<std::string>();
        pair.buggy_stmt = obj["buggy"].get<std::string>();
        pair.fixed_stmt = obj["fixed"].get<std::string>();
        pair.suffix = obj.value("suffix", std::string());
        pair.pair_id = obj.value("id", "pair" + std::to_string(line_no));
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

void save_jsonl(const std::string& path, const std::vector<CodePair>& pairs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    for (const auto& p : pairs) {
        nlohmann::json obj;
        obj["id"] = p.pair_id;
        obj["context"] = p.context;
        obj["buggy"] = p.buggy_stmt;
        obj["fixed"] = p.fixed_stmt;
        if (!p.suffix.empty()) obj["suffix"] = p.suffix;
        out << obj.dump() << "\n";
    }
}

}  // namespace hfx
