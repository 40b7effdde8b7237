#include "hfx/optim.hpp"

#include <cmath>

#include "hfx/error.hpp"

namespace hfx {

AdamOptimizer::AdamOptimizer(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    if (lr_ <= 0.0) {
        throw ConfigError("learning rate must be positive");
    }
}

void AdamOptimizer::register_param(const std::string& name, Tensor param) {
    if (!param.requires_grad()) {
        throw StateError("parameter '" + name + "' does not require grad");
    }
    Slot slot;
    slot.name = name;
    slot.param = std::move(param);
    slot.m.assign(slot.param.size(), 0.0);
    slot.v.assign(slot.param.size(), 0.0);
    params_.push_back(std::move(slot));
}

void AdamOptimizer::step() {
    for (const auto& slot : params_) {
        if (!slot.param.has_grad()) {
            throw StateError("adam step: parameter '" + slot.name + "' has no gradient");
        }
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (auto& slot : params_) {
        auto& w = slot.param.data();
        const auto& g = slot.param.grad();
        for (size_t i = 0; i < w.size(); ++i) {
            slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
            slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            w[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& slot : params_) {
        slot.param.zero_grad();
    }
}

}  // namespace hfx
