#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hfx/rng.hpp"
#include "hfx/tensor.hpp"

namespace hfx {

struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t n_checked = 0;
    std::string worst;  // "param[idx]" of the largest error
};

// Central finite differences against analytic gradients. `forward` must
// rebuild the loss from the current parameter values on every call. For each
// parameter, up to `probes_per_param` entries are sampled; pass 0 to probe
// every entry.
GradCheckReport check_gradients(const std::function<Tensor()>& forward,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                Rng& rng, size_t probes_per_param = 4, double h = 1e-5);

}  // namespace hfx
