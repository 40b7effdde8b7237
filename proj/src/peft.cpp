#include "hfx/peft.hpp"

#include <algorithm>

#include "hfx/error.hpp"

namespace hfx {

const char* adapter_kind_name(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::kLora: return "lora";
        case AdapterKind::kIa3: return "ia3";
        case AdapterKind::kPrefix: return "prefix";
        case AdapterKind::kQlora: return "qlora";
    }
    return "unknown";
}

AdapterKind adapter_kind_from(const std::string& name) {
    if (name == "lora") return AdapterKind::kLora;
    if (name == "ia3") return AdapterKind::kIa3;
    if (name == "prefix") return AdapterKind::kPrefix;
    if (name == "qlora") return AdapterKind::kQlora;
    throw ConfigError("unknown adapter kind '" + name + "'");
}

void AdapterSpec::validate(const ModelConfig& config) const {
    if (kind == AdapterKind::kLora || kind == AdapterKind::kQlora) {
        if (rank < 1 || rank > config.embed_dim) {
            throw ConfigError("lora rank " + std::to_string(rank) +
                              " must be in [1, embed_dim=" + std::to_string(config.embed_dim) +
                              "]");
        }
        if (alpha <= 0.0) {
            throw ConfigError("lora alpha must be positive");
        }
        if (targets.empty()) {
            throw ConfigError("lora target set is empty");
        }
        for (const auto& proj : targets) {
            if (proj != "q" && proj != "k" && proj != "v" && proj != "o") {
                throw ConfigError("lora target '" + proj + "' is not one of q/k/v/o");
            }
        }
    }
    if (kind == AdapterKind::kPrefix && prefix_len < 1) {
        throw ConfigError("prefix_len must be >= 1");
    }
    if (kind == AdapterKind::kQlora && quant_bits != 8 && quant_bits != 4) {
        throw ConfigError("quant_bits must be 4 or 8");
    }
}

const Tensor* AdapterState::find(const std::string& name) const {
    for (const auto& [key, t] : tensors) {
        if (key == name) return &t;
    }
    throw StateError("adapter has no tensor '" + name + "'");
}

bool AdapterState::targets_projection(const std::string& proj) const {
    return std::find(spec.targets.begin(), spec.targets.end(), proj) != spec.targets.end();
}

size_t AdapterState::trainable_count() const {
    size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

void AdapterState::check_compatible(const TransformerLM& model) const {
    if (base_fingerprint != 0 && base_fingerprint != model.fingerprint()) {
        throw CompatibilityError("adapter was trained against a different base model "
                                 "(fingerprint mismatch)");
    }
}

AdapterState init_adapter(const AdapterSpec& spec, const ModelConfig& config, uint64_t seed,
                          uint64_t base_fingerprint) {
    spec.validate(config);
    Rng rng(Rng::stream(seed, "adapter-init"));
    const size_t d = config.embed_dim;

    AdapterState state;
    state.spec = spec;
    state.base_fingerprint = base_fingerprint;
    auto add = [&](const std::string& name, Tensor t) {
        state.tensors.emplace_back(name, std::move(t));
    };

    for (size_t l = 0; l < config.n_layers; ++l) {
        const std::string base = "layers." + std::to_string(l) + ".";
        switch (spec.kind) {
            case AdapterKind::kLora:
            case AdapterKind::kQlora:
                for (const char* proj : {"q", "k", "v", "o"}) {
                    if (std::find(spec.targets.begin(), spec.targets.end(), proj) ==
                        spec.targets.end()) {
                        continue;
                    }
                    add(base + "attn." + proj + ".lora_a",
                        Tensor::randn({d, spec.rank}, rng, 0.02, true));
                    add(base + "attn." + proj + ".lora_b",
                        Tensor::zeros({spec.rank, d}, true));
                }
                break;
            case AdapterKind::kIa3:
                add(base + "ia3.k", Tensor::full({d}, 1.0, true));
                add(base + "ia3.v", Tensor::full({d}, 1.0, true));
                add(base + "ia3.ff", Tensor::full({4 * d}, 1.0, true));
                break;
            case AdapterKind::kPrefix:
                add(base + "prefix.k", Tensor::randn({spec.prefix_len, d}, rng, 0.02, true));
                add(base + "prefix.v", Tensor::randn({spec.prefix_len, d}, rng, 0.02, true));
                break;
        }
    }
    return state;
}

Tensor adapted_projection(const Tensor& base_weight, const Tensor& x, const Tensor& lora_a,
                          const Tensor& lora_b, double alpha, size_t rank) {
    Tensor delta = matmul(matmul(x, lora_a), lora_b);
    return add(matmul(x, base_weight), scale(delta, alpha / static_cast<double>(rank)));
}

TransformerLM quantize_base(const TransformerLM& model, int bits) {
    if (bits != 8 && bits != 4) {
        throw ConfigError("quantize_base: bits must be 4 or 8");
    }
    if (model.quantized()) {
        throw StateError("quantize_base: model is already quantized");
    }
    const uint64_t origin = model.fingerprint();
    TransformerLM out = model.clone();
    std::map<std::string, QuantTensor> store;
    for (const auto& [name, t] : model.params()) {
        if (t.shape().size() != 2) continue;  // norm gains/biases stay f64
        store[name] = QuantTensor::quantize(t.data(), t.shape()[0], t.shape()[1], bits);
    }
    // Keep the in-memory f64 copies consistent with what forward sees.
    for (auto& [name, t] : out.params_mutable()) {
        auto it = store.find(name);
        if (it != store.end()) {
            t.data() = it->second.dequantize();
        }
    }
    out.install_quantization(std::move(store), bits, origin);
    return out;
}

}  // namespace hfx
