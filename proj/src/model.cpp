#include "hfx/model.hpp"

#include <algorithm>
#include <cmath>

#include "hfx/error.hpp"
#include "hfx/peft.hpp"

namespace hfx {

namespace {

constexpr double kMaskedLogit = -1e30;
constexpr double kInitStd = 0.02;

std::string layer_key(size_t layer, const std::string& tail) {
    return "layers." + std::to_string(layer) + "." + tail;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 1 || embed_dim < 1 || n_layers < 1 || n_heads < 1 || context_len < 1) {
        throw ConfigError("model config: all sizes must be >= 1");
    }
    if (embed_dim % n_heads != 0) {
        throw ConfigError("model config: embed_dim " + std::to_string(embed_dim) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
}

size_t param_count(const ModelConfig& c) {
    const size_t d = c.embed_dim;
    const size_t per_layer = 2 * d          // ln1
                             + 4 * d * d    // q,k,v,o projections
                             + 2 * d        // ln2
                             + d * 4 * d    // ff in
                             + 4 * d * d;   // ff out
    return c.vocab_size * d + c.context_len * d + c.n_layers * per_layer + 2 * d +
           d * c.vocab_size;
}

void SamplerConfig::validate() const {
    if (temperature <= 0.0) {
        throw ConfigError("sampler: temperature must be > 0 (use greedy for argmax)");
    }
    if (num_samples < 1) {
        throw ConfigError("sampler: num_samples must be >= 1");
    }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

TransformerLM::TransformerLM(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(Rng::stream(config_.seed, "model-init"));
    const size_t d = config_.embed_dim;
    const size_t v = config_.vocab_size;

    auto add_param = [&](const std::string& name, Tensor t) {
        index_[name] = params_.size();
        params_.emplace_back(name, std::move(t));
    };
    auto gaussian = [&](std::vector<size_t> shape) {
        return Tensor::randn(std::move(shape), rng, kInitStd, true);
    };

    add_param("tok_emb", gaussian({v, d}));
    add_param("pos_emb", gaussian({config_.context_len, d}));
    for (size_t l = 0; l < config_.n_layers; ++l) {
        add_param(layer_key(l, "ln1.gain"), Tensor::full({d}, 1.0, true));
        add_param(layer_key(l, "ln1.bias"), Tensor::zeros({d}, true));
        add_param(layer_key(l, "attn.wq"), gaussian({d, d}));
        add_param(layer_key(l, "attn.wk"), gaussian({d, d}));
        add_param(layer_key(l, "attn.wv"), gaussian({d, d}));
        add_param(layer_key(l, "attn.wo"), gaussian({d, d}));
        add_param(layer_key(l, "ln2.gain"), Tensor::full({d}, 1.0, true));
        add_param(layer_key(l, "ln2.bias"), Tensor::zeros({d}, true));
        add_param(layer_key(l, "ff.w1"), gaussian({d, 4 * d}));
        add_param(layer_key(l, "ff.w2"), gaussian({4 * d, d}));
    }
    add_param("final.ln.gain", Tensor::full({d}, 1.0, true));
    add_param("final.ln.bias", Tensor::zeros({d}, true));
    add_param("head", gaussian({d, v}));
}

Tensor TransformerLM::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw StateError("model has no parameter '" + name + "'");
    }
    return params_[it->second].second;
}

Tensor TransformerLM::weight(const std::string& name) const {
    auto qit = quant_store_.find(name);
    if (qit != quant_store_.end()) {
        const QuantTensor& q = qit->second;
        return Tensor::from_data({q.rows, q.cols}, q.dequantize(), false);
    }
    return param(name);
}

size_t TransformerLM::total_params() const {
    size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

TransformerLM TransformerLM::clone() const {
    TransformerLM copy;
    copy.config_ = config_;
    copy.index_ = index_;
    copy.quant_store_ = quant_store_;
    copy.quant_bits_ = quant_bits_;
    copy.origin_fingerprint_ = origin_fingerprint_;
    copy.frozen_ = frozen_;
    copy.params_.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        copy.params_.emplace_back(
            name, Tensor::from_data(t.shape(), t.data(), t.requires_grad()));
    }
    return copy;
}

void TransformerLM::freeze() {
    for (auto& [name, t] : params_) {
        t.node()->requires_grad = false;
    }
    frozen_ = true;
    fingerprint_cache_.reset();
}

void TransformerLM::unfreeze() {
    if (quantized()) {
        throw StateError("a quantized base stays frozen");
    }
    for (auto& [name, t] : params_) {
        t.node()->requires_grad = true;
    }
    frozen_ = false;
    fingerprint_cache_.reset();
}

uint64_t TransformerLM::fingerprint() const {
    if (quantized()) {
        return origin_fingerprint_;
    }
    if (frozen_ && fingerprint_cache_) {
        return *fingerprint_cache_;
    }
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : params_) {
        h = fnv1a64(t.data().data(), t.data().size() * sizeof(double), h);
    }
    if (frozen_) {
        fingerprint_cache_ = h;
    }
    return h;
}

void TransformerLM::install_quantization(std::map<std::string, QuantTensor> store, int bits,
                                         uint64_t origin_fingerprint) {
    quant_store_ = std::move(store);
    quant_bits_ = bits;
    origin_fingerprint_ = origin_fingerprint;
    freeze();
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

Tensor TransformerLM::forward(const std::vector<int>& tokens,
                              const AdapterState* adapters) const {
    if (tokens.empty()) {
        throw DataError("forward: empty token sequence");
    }
    if (tokens.size() > config_.context_len) {
        throw DataError("forward: sequence length " + std::to_string(tokens.size()) +
                        " exceeds context_len " + std::to_string(config_.context_len));
    }
    for (int id : tokens) {
        if (id < 0 || static_cast<size_t>(id) >= config_.vocab_size) {
            throw DataError("forward: token id " + std::to_string(id) + " out of range");
        }
    }
    if (adapters != nullptr) {
        adapters->check_compatible(*this);
    }

    const size_t t = tokens.size();
    const size_t d = config_.embed_dim;
    const size_t heads = config_.n_heads;
    const size_t hd = config_.head_dim();
    const bool use_prefix = adapters != nullptr && adapters->spec.kind == AdapterKind::kPrefix;
    const bool use_ia3 = adapters != nullptr && adapters->spec.kind == AdapterKind::kIa3;
    const bool use_lora = adapters != nullptr && (adapters->spec.kind == AdapterKind::kLora ||
                                                  adapters->spec.kind == AdapterKind::kQlora);
    const size_t p = use_prefix ? adapters->spec.prefix_len : 0;

    // Additive attention mask: position i sees positions <= i plus every
    // prefix slot. Masked entries absorb to -1e30 so softmax yields exact
    // zeros and causality holds bitwise.
    Tensor mask = Tensor::zeros({t, p + t});
    for (size_t i = 0; i < t; ++i) {
        double* row = mask.data().data() + i * (p + t);
        for (size_t j = 0; j < p; ++j) {
            row[j] = (use_prefix && adapters->prefix_slots_masked) ? kMaskedLogit : 0.0;
        }
        for (size_t j = 0; j < t; ++j) {
            row[p + j] = j <= i ? 0.0 : kMaskedLogit;
        }
    }

    Tensor x = add(embed_rows(weight("tok_emb"), tokens),
                   slice_rows(weight("pos_emb"), 0, t));

    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    for (size_t l = 0; l < config_.n_layers; ++l) {
        Tensor h = layer_norm_rows(x, param(layer_key(l, "ln1.gain")), param(layer_key(l, "ln1.bias")));
        auto project = [&](const std::string& proj) {
            Tensor w = weight(layer_key(l, "attn.w" + proj));
            if (use_lora && adapters->targets_projection(proj)) {
                const Tensor* a = adapters->find(layer_key(l, "attn." + proj + ".lora_a"));
                const Tensor* b = adapters->find(layer_key(l, "attn." + proj + ".lora_b"));
                return adapted_projection(w, h, *a, *b, adapters->spec.alpha,
                                          adapters->spec.rank);
            }
            return matmul(h, w);
        };
        Tensor q = project("q");
        Tensor k = project("k");
        Tensor v = project("v");
        if (use_ia3) {
            k = mul_rowvec(k, *adapters->find(layer_key(l, "ia3.k")));
            v = mul_rowvec(v, *adapters->find(layer_key(l, "ia3.v")));
        }

        std::vector<Tensor> head_outs;
        head_outs.reserve(heads);
        for (size_t hh = 0; hh < heads; ++hh) {
            Tensor qh = slice_cols(q, hh * hd, hd);
            Tensor kh = slice_cols(k, hh * hd, hd);
            Tensor vh = slice_cols(v, hh * hd, hd);
            if (use_prefix) {
                Tensor pk = slice_cols(*adapters->find(layer_key(l, "prefix.k")), hh * hd, hd);
                Tensor pv = slice_cols(*adapters->find(layer_key(l, "prefix.v")), hh * hd, hd);
                kh = concat_rows(pk, kh);
                vh = concat_rows(pv, vh);
            }
            Tensor scores = add(scale(matmul_nt(qh, kh), inv_sqrt_hd), mask);
            Tensor probs = softmax_rows(scores);
            head_outs.push_back(matmul(probs, vh));
        }
        Tensor attn = concat_cols(head_outs);
        Tensor wo = weight(layer_key(l, "attn.wo"));
        Tensor attn_out;
        if (use_lora && adapters->targets_projection("o")) {
            const Tensor* a = adapters->find(layer_key(l, "attn.o.lora_a"));
            const Tensor* b = adapters->find(layer_key(l, "attn.o.lora_b"));
            attn_out = adapted_projection(wo, attn, *a, *b, adapters->spec.alpha,
                                          adapters->spec.rank);
        } else {
            attn_out = matmul(attn, wo);
        }
        x = add(x, attn_out);

        Tensor h2 = layer_norm_rows(x, param(layer_key(l, "ln2.gain")), param(layer_key(l, "ln2.bias")));
        Tensor inner = gelu(matmul(h2, weight(layer_key(l, "ff.w1"))));
        if (use_ia3) {
            inner = mul_rowvec(inner, *adapters->find(layer_key(l, "ia3.ff")));
        }
        x = add(x, matmul(inner, weight(layer_key(l, "ff.w2"))));
    }

    Tensor out = layer_norm_rows(x, param("final.ln.gain"), param("final.ln.bias"));
    return matmul(out, weight("head"));
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace {

size_t argmax_token(const double* logits, size_t v) {
    size_t best = 0;
    for (size_t j = 1; j < v; ++j) {
        if (logits[j] > logits[best]) best = j;
    }
    return best;
}

int sample_token(const double* logits, size_t v, const SamplerConfig& cfg, Rng& rng) {
    if (cfg.greedy || cfg.top_k == 1) {
        return static_cast<int>(argmax_token(logits, v));
    }
    std::vector<size_t> candidates;
    if (cfg.top_k > 0 && cfg.top_k < v) {
        candidates.resize(v);
        for (size_t j = 0; j < v; ++j) candidates[j] = j;
        std::stable_sort(candidates.begin(), candidates.end(), [&](size_t a, size_t b) {
            if (logits[a] != logits[b]) return logits[a] > logits[b];
            return a < b;
        });
        candidates.resize(cfg.top_k);
        std::sort(candidates.begin(), candidates.end());
    } else {
        candidates.resize(v);
        for (size_t j = 0; j < v; ++j) candidates[j] = j;
    }

    double mx = logits[candidates[0]] / cfg.temperature;
    for (size_t c : candidates) mx = std::max(mx, logits[c] / cfg.temperature);
    std::vector<double> probs(candidates.size());
    double z = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        probs[i] = std::exp(logits[candidates[i]] / cfg.temperature - mx);
        z += probs[i];
    }
    const double u = rng.uniform() * z;
    double cum = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        cum += probs[i];
        if (u < cum) return static_cast<int>(candidates[i]);
    }
    return static_cast<int>(candidates.back());
}

}  // namespace

std::vector<std::vector<int>> generate(const TransformerLM& model,
                                       const std::vector<int>& prompt,
                                       const SamplerConfig& cfg,
                                       const AdapterState* adapters) {
    cfg.validate();
    if (prompt.empty()) {
        throw DataError("generate: empty prompt");
    }
    if (prompt.size() + cfg.max_new_tokens > model.config().context_len) {
        throw DataError("generate: prompt plus max_new_tokens exceeds context window");
    }
    Rng rng(cfg.rng_seed);
    const size_t v = model.config().vocab_size;
    std::vector<std::vector<int>> samples;
    samples.reserve(cfg.num_samples);
    for (size_t s = 0; s < cfg.num_samples; ++s) {
        std::vector<int> seq = prompt;
        for (size_t step = 0; step < cfg.max_new_tokens; ++step) {
            Tensor logits = model.forward(seq, adapters);
            const double* last = logits.data().data() + (seq.size() - 1) * v;
            const int next = sample_token(last, v, cfg, rng);
            seq.push_back(next);
            if (cfg.stop_token >= 0 && next == cfg.stop_token) break;
        }
        samples.push_back(std::move(seq));
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Base training
// ---------------------------------------------------------------------------

std::vector<double> train_base(TransformerLM& model,
                               const std::vector<std::vector<int>>& corpus, size_t epochs,
                               size_t batch_size, AdamOptimizer& opt, uint64_t shuffle_seed) {
    if (corpus.empty()) {
        throw DataError("train_base: empty corpus");
    }
    if (batch_size < 1) {
        throw ConfigError("train_base: batch_size must be >= 1");
    }
    std::vector<double> trace;
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(Rng::stream(shuffle_seed, "epoch-" + std::to_string(epoch)));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t n_seen = 0;
        for (size_t start = 0; start < order.size(); start += batch_size) {
            const size_t end = std::min(order.size(), start + batch_size);
            opt.zero_grad();
            Tensor batch_loss;
            for (size_t bi = start; bi < end; ++bi) {
                const auto& seq = corpus[order[bi]];
                if (seq.size() < 2) continue;
                Tensor logits = model.forward(seq);
                Tensor lp = log_softmax_rows(slice_rows(logits, 0, seq.size() - 1));
                std::vector<int> targets(seq.begin() + 1, seq.end());
                Tensor loss = weighted_nll(lp, targets,
                                           std::vector<double>(targets.size(), 1.0));
                epoch_loss += loss.value();
                ++n_seen;
                batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
            }
            if (!batch_loss.defined()) continue;
            backward(scale(batch_loss, 1.0 / static_cast<double>(end - start)));
            opt.step();
        }
        trace.push_back(n_seen > 0 ? epoch_loss / static_cast<double>(n_seen) : 0.0);
    }
    return trace;
}

}  // namespace hfx
