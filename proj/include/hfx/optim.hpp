#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hfx/tensor.hpp"

namespace hfx {

// Adam with bias correction over a fixed set of registered parameters.
// Gradients are left untouched by step(); the training loop resets them.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double learning_rate = 3e-4, double beta1 = 0.9,
                           double beta2 = 0.999, double epsilon = 1e-8);

    void register_param(const std::string& name, Tensor param);
    void step();
    void zero_grad();

    int64_t step_count() const { return step_count_; }
    size_t param_count() const { return params_.size(); }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    struct Slot {
        std::string name;
        Tensor param;
        std::vector<double> m;
        std::vector<double> v;
    };

    double lr_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
    std::vector<Slot> params_;
};

}  // namespace hfx
