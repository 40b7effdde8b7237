#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hfx/optim.hpp"
#include "hfx/quant.hpp"
#include "hfx/rng.hpp"
#include "hfx/tensor.hpp"

namespace hfx {

struct AdapterState;  // peft.hpp

struct ModelConfig {
    size_t vocab_size = 512;
    size_t embed_dim = 128;
    size_t n_layers = 4;
    size_t n_heads = 4;
    size_t context_len = 256;
    uint64_t seed = 1;

    void validate() const;
    size_t head_dim() const { return embed_dim / n_heads; }
};

// Closed-form trainable parameter count for a config.
size_t param_count(const ModelConfig& config);

struct SamplerConfig {
    double temperature = 0.8;
    size_t top_k = 0;  // 0 disables top-k filtering; 1 is greedy
    size_t max_new_tokens = 16;
    size_t num_samples = 10;
    int stop_token = -1;  // -1: no stop token
    bool greedy = false;
    uint64_t rng_seed = 0;

    void validate() const;
};

// Decoder-only transformer with learned positional embeddings, pre-norm
// residual blocks, and an untied output head. Parameters live in a fixed
// manifest order shared with the checkpoint format.
class TransformerLM {
public:
    TransformerLM() = default;
    explicit TransformerLM(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    // Logits [t, V]; row i is the unnormalized next-token distribution after
    // position i. Adapters may be null.
    Tensor forward(const std::vector<int>& tokens,
                   const AdapterState* adapters = nullptr) const;

    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    Tensor param(const std::string& name) const;
    size_t total_params() const;

    // Deep copy: fresh tensor nodes, no shared state with this model.
    TransformerLM clone() const;

    void freeze();    // requires_grad = false on every parameter
    void unfreeze();  // trainable again (not allowed on a quantized base)
    bool frozen() const { return frozen_; }

    bool quantized() const { return !quant_store_.empty(); }
    int quant_bits() const { return quant_bits_; }
    const std::map<std::string, QuantTensor>& quant_store() const { return quant_store_; }

    // FNV-1a over the full-precision payload in manifest order. A quantized
    // base keeps the fingerprint of the model it was derived from.
    uint64_t fingerprint() const;

    // Used by peft::quantize_base and the checkpoint loader.
    void install_quantization(std::map<std::string, QuantTensor> store, int bits,
                              uint64_t origin_fingerprint);
    std::vector<std::pair<std::string, Tensor>>& params_mutable() { return params_; }

private:
    // Dequantizes on the fly when the named weight is quantized.
    Tensor weight(const std::string& name) const;

    ModelConfig config_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, size_t> index_;
    std::map<std::string, QuantTensor> quant_store_;
    int quant_bits_ = 0;
    uint64_t origin_fingerprint_ = 0;
    bool frozen_ = false;
    mutable std::optional<uint64_t> fingerprint_cache_;  // valid while frozen
};

// Draws cfg.num_samples continuations of the prompt; each extends the prompt
// and stops at cfg.stop_token or after cfg.max_new_tokens.
std::vector<std::vector<int>> generate(const TransformerLM& model,
                                       const std::vector<int>& prompt,
                                       const SamplerConfig& cfg,
                                       const AdapterState* adapters = nullptr);

// Mean-NLL training of the full model on raw token sequences. Returns the
// mean loss per epoch.
std::vector<double> train_base(TransformerLM& model,
                               const std::vector<std::vector<int>>& corpus, size_t epochs,
                               size_t batch_size, AdamOptimizer& opt, uint64_t shuffle_seed);

}  // namespace hfx
