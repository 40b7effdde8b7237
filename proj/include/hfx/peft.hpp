#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hfx/model.hpp"
#include "hfx/tensor.hpp"

namespace hfx {

enum class AdapterKind { kLora, kIa3, kPrefix, kQlora };

const char* adapter_kind_name(AdapterKind kind);
AdapterKind adapter_kind_from(const std::string& name);

struct AdapterSpec {
    AdapterKind kind = AdapterKind::kLora;
    size_t rank = 4;        // lora / qlora
    double alpha = 8.0;     // lora / qlora scaling
    size_t prefix_len = 20; // prefix
    int quant_bits = 8;     // qlora: 8 or 4
    std::vector<std::string> targets = {"q", "v"};  // attention projections

    void validate(const ModelConfig& config) const;
};

// The trainable hotfix: adapter tensors only, never base weights. Bound to a
// base model through its fingerprint.
struct AdapterState {
    AdapterSpec spec;
    uint64_t base_fingerprint = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;

    // Test construction: prefix slots contribute -inf attention logits so a
    // zero-value prefix reproduces the base model exactly.
    bool prefix_slots_masked = false;

    const Tensor* find(const std::string& name) const;
    bool targets_projection(const std::string& proj) const;
    size_t trainable_count() const;
    void check_compatible(const TransformerLM& model) const;
};

// LoRA pairs start at A ~ N(0, 0.02), B = 0 so the initial contribution is
// exactly zero; IA3 scales start at 1; prefix banks at N(0, 0.02).
AdapterState init_adapter(const AdapterSpec& spec, const ModelConfig& config, uint64_t seed,
                          uint64_t base_fingerprint = 0);

// x*W + (alpha/r) * (x*A)*B. Gradient reaches only A and B when W is frozen.
Tensor adapted_projection(const Tensor& base_weight, const Tensor& x, const Tensor& lora_a,
                          const Tensor& lora_b, double alpha, size_t rank);

// Frozen copy of the model whose 2-d weight matrices are stored as symmetric
// per-row integer codes + scales and dequantized on the fly in forward.
TransformerLM quantize_base(const TransformerLM& model, int bits);

}  // namespace hfx
