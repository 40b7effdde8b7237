#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hfx/data.hpp"
#include "hfx/model.hpp"
#include "hfx/peft.hpp"
#include "hfx/tensor.hpp"

namespace hfx {

// The six supported objectives plus a test-only direct unlearn maximizer
// (kept around to demonstrate why it is not a supported objective).
enum class Objective {
    kVanilla,
    kGuided,
    kDual,
    kVanillaKl,
    kGuidedKl,
    kDualKl,
    kUnlearnMax,  // test-only, rejected by configuration parsing
};

const char* objective_name(Objective obj);
Objective objective_from(const std::string& name);  // six public names only
bool objective_uses_kl(Objective obj);
bool objective_uses_unlearn(Objective obj);
bool objective_uses_vanilla(Objective obj);

struct LossBreakdown {
    std::optional<double> l_vanilla;
    std::optional<double> l_guided;
    std::optional<double> l_unlearn;
    std::optional<double> l_ratio;
    std::optional<double> l_kl;
    double l_total = 0.0;
    std::string objective;
};

// Mean NLL over every next-token prediction of the fixed sequence.
Tensor vanilla_loss(const TransformerLM& model, const AdapterState* adapters,
                    const HotfixExample& ex);

// NLL restricted to the diff-added tokens (w_plus).
Tensor guided_loss(const TransformerLM& model, const AdapterState* adapters,
                   const HotfixExample& ex);

// NLL of the buggy sequence restricted to the diff-deleted tokens (w_minus).
// Never directly maximized; it only enters through the dual ratio.
Tensor unlearn_loss(const TransformerLM& model, const AdapterState* adapters,
                    const HotfixExample& ex);

// (guided + guided/(guided + unlearn))/2 with a guarded denominator.
std::pair<Tensor, LossBreakdown> dual_loss(const TransformerLM& model,
                                           const AdapterState* adapters,
                                           const HotfixExample& ex);

// Masked row-wise KL against the frozen reference distribution, computed
// from two logit tensors over the same token positions.
Tensor kl_from_logits(const Tensor& reference_logits, const Tensor& adapted_logits,
                      const std::vector<double>& position_mask);

// Runs both models over `tokens` and penalizes divergence at the selected
// positions. `reference` must be the frozen base model without adapters.
Tensor kl_retain_loss(const TransformerLM& model, const AdapterState* adapters,
                      const TransformerLM& reference, const std::vector<int>& tokens,
                      const std::vector<double>& position_mask);

struct LossComponents {
    std::optional<Tensor> vanilla;
    std::optional<Tensor> guided;
    std::optional<Tensor> unlearn;
    std::optional<Tensor> kl;
};

// Assembles the named objective from its components:
//   Vanilla+KL = (L_v + L_kl)/2, Guided+KL = (L_g + L_kl)/2,
//   Dual = (L_g + ratio)/2, Dual+KL = (L_g + ratio + L_kl)/3,
// where ratio = L_g/(L_g + L_u + 1e-8). Missing components raise ConfigError.
std::pair<Tensor, LossBreakdown> combine(Objective obj, const LossComponents& components);

// Positions eligible for the context-anchored retention term of an example:
// rows predicting context tokens only. Empty mask when the context is too
// short to contribute.
std::vector<double> context_kl_mask(const HotfixExample& ex);

}  // namespace hfx
