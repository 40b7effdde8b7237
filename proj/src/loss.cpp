#include "hfx/loss.hpp"

#include <cmath>

#include "hfx/error.hpp"

namespace hfx {

namespace {

constexpr double kRatioGuard = 1e-8;

// Forward + masked NLL over a token sequence; weights are aligned with the
// predicted token at each position (mask index 1..T-1).
Tensor sequence_nll(const TransformerLM& model, const AdapterState* adapters,
                    const std::vector<int>& tokens, const std::vector<double>& token_weights) {
    if (tokens.size() < 2) {
        throw DataError("loss: sequence needs at least two tokens");
    }
    Tensor logits = model.forward(tokens, adapters);
    Tensor lp = log_softmax_rows(slice_rows(logits, 0, tokens.size() - 1));
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    std::vector<double> weights(token_weights.begin() + 1, token_weights.end());
    return weighted_nll(lp, targets, weights);
}

double mask_mass(const std::vector<double>& mask) {
    double m = 0.0;
    for (double w : mask) m += w;
    return m;
}

}  // namespace

const char* objective_name(Objective obj) {
    switch (obj) {
        case Objective::kVanilla: return "Vanilla";
        case Objective::kGuided: return "Guided";
        case Objective::kDual: return "Dual";
        case Objective::kVanillaKl: return "Vanilla+KL";
        case Objective::kGuidedKl: return "Guided+KL";
        case Objective::kDualKl: return "Dual+KL";
        case Objective::kUnlearnMax: return "UnlearnMax";
    }
    return "unknown";
}

Objective objective_from(const std::string& name) {
    if (name == "Vanilla") return Objective::kVanilla;
    if (name == "Guided") return Objective::kGuided;
    if (name == "Dual") return Objective::kDual;
    if (name == "Vanilla+KL") return Objective::kVanillaKl;
    if (name == "Guided+KL") return Objective::kGuidedKl;
    if (name == "Dual+KL") return Objective::kDualKl;
    throw ConfigError("unknown objective '" + name +
                      "' (expected Vanilla, Guided, Dual, Vanilla+KL, Guided+KL, Dual+KL)");
}

bool objective_uses_kl(Objective obj) {
    return obj == Objective::kVanillaKl || obj == Objective::kGuidedKl ||
           obj == Objective::kDualKl;
}

bool objective_uses_unlearn(Objective obj) {
    return obj == Objective::kDual || obj == Objective::kDualKl ||
           obj == Objective::kUnlearnMax;
}

bool objective_uses_vanilla(Objective obj) {
    return obj == Objective::kVanilla || obj == Objective::kVanillaKl;
}

Tensor vanilla_loss(const TransformerLM& model, const AdapterState* adapters,
                    const HotfixExample& ex) {
    return sequence_nll(model, adapters, ex.fixed_tokens,
                        std::vector<double>(ex.fixed_tokens.size(), 1.0));
}

Tensor guided_loss(const TransformerLM& model, const AdapterState* adapters,
                   const HotfixExample& ex) {
    if (mask_mass(ex.w_plus) < 1.0) {
        throw DegeneratePairError("guided loss: example " + ex.pair_id +
                                  " has no added tokens");
    }
    return sequence_nll(model, adapters, ex.fixed_tokens, ex.w_plus);
}

Tensor unlearn_loss(const TransformerLM& model, const AdapterState* adapters,
                    const HotfixExample& ex) {
    if (mask_mass(ex.w_minus) < 1.0) {
        throw DegeneratePairError("unlearn loss: example " + ex.pair_id +
                                  " has no deleted tokens");
    }
    return sequence_nll(model, adapters, ex.buggy_tokens, ex.w_minus);
}

std::pair<Tensor, LossBreakdown> dual_loss(const TransformerLM& model,
                                           const AdapterState* adapters,
                                           const HotfixExample& ex) {
    LossComponents c;
    c.guided = guided_loss(model, adapters, ex);
    c.unlearn = unlearn_loss(model, adapters, ex);
    return combine(Objective::kDual, c);
}

Tensor kl_from_logits(const Tensor& reference_logits, const Tensor& adapted_logits,
                      const std::vector<double>& position_mask) {
    Tensor p_ref = softmax_rows(reference_logits);
    if (p_ref.requires_grad()) {
        throw StateError("kl retention: the reference distribution must be frozen");
    }
    Tensor p_new = softmax_rows(adapted_logits);
    return kl_rowwise(p_ref, p_new, position_mask);
}

Tensor kl_retain_loss(const TransformerLM& model, const AdapterState* adapters,
                      const TransformerLM& reference, const std::vector<int>& tokens,
                      const std::vector<double>& position_mask) {
    Tensor ref_logits = reference.forward(tokens);
    Tensor new_logits = model.forward(tokens, adapters);
    return kl_from_logits(ref_logits, new_logits, position_mask);
}

std::vector<double> context_kl_mask(const HotfixExample& ex) {
    // One mask entry per logits row. Row i predicts token i+1, so rows
    // 0..context_len-2 are the predictions that stay inside the shared
    // context.
    std::vector<double> mask(ex.fixed_tokens.size(), 0.0);
    for (size_t i = 0; i + 1 < ex.context_len && i < mask.size(); ++i) {
        mask[i] = 1.0;
    }
    return mask;
}

std::pair<Tensor, LossBreakdown> combine(Objective obj, const LossComponents& c) {
    auto need = [&](const std::optional<Tensor>& t, const char* what) -> const Tensor& {
        if (!t.has_value()) {
            throw ConfigError(std::string(objective_name(obj)) + " requires the " + what +
                              " component");
        }
        return *t;
    };

    LossBreakdown bd;
    bd.objective = objective_name(obj);
    Tensor total;
    switch (obj) {
        case Objective::kVanilla:
            total = need(c.vanilla, "vanilla");
            break;
        case Objective::kGuided:
            total = need(c.guided, "guided");
            break;
        case Objective::kVanillaKl:
            total = scale(add(need(c.vanilla, "vanilla"), need(c.kl, "kl")), 0.5);
            break;
        case Objective::kGuidedKl:
            total = scale(add(need(c.guided, "guided"), need(c.kl, "kl")), 0.5);
            break;
        case Objective::kDual:
        case Objective::kDualKl: {
            const Tensor& guided = need(c.guided, "guided");
            const Tensor& unlearn = need(c.unlearn, "unlearn");
            Tensor ratio = div(guided, add_scalar(add(guided, unlearn), kRatioGuard));
            bd.l_ratio = ratio.value();
            if (obj == Objective::kDual) {
                total = scale(add(guided, ratio), 0.5);
            } else {
                total = scale(add(add(guided, ratio), need(c.kl, "kl")), 1.0 / 3.0);
            }
            break;
        }
        case Objective::kUnlearnMax:
            // Ascent on the unlearn NLL, expressed as descent on its negation.
            total = scale(need(c.unlearn, "unlearn"), -1.0);
            break;
    }
    if (c.vanilla) bd.l_vanilla = c.vanilla->value();
    if (c.guided) bd.l_guided = c.guided->value();
    if (c.unlearn) bd.l_unlearn = c.unlearn->value();
    if (c.kl) bd.l_kl = c.kl->value();
    bd.l_total = total.value();
    if (!std::isfinite(bd.l_total)) {
        throw NumericError("objective " + bd.objective + " produced a non-finite loss");
    }
    return {std::move(total), std::move(bd)};
}

}  // namespace hfx
