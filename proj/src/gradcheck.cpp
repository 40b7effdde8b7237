#include "hfx/gradcheck.hpp"

#include <cmath>

#include "hfx/error.hpp"

namespace hfx {

GradCheckReport check_gradients(const std::function<Tensor()>& forward,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                Rng& rng, size_t probes_per_param, double h) {
    for (const auto& [name, p] : params) {
        Tensor(p).zero_grad();
    }
    Tensor loss = forward();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        analytic.push_back(p.grad());
    }

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi].second;
        const size_t n = p.size();
        std::vector<size_t> idx;
        if (probes_per_param == 0 || probes_per_param >= n) {
            idx.resize(n);
            for (size_t i = 0; i < n; ++i) idx[i] = i;
        } else {
            for (size_t k = 0; k < probes_per_param; ++k) {
                idx.push_back(static_cast<size_t>(rng.next_u64() % n));
            }
        }
        for (size_t i : idx) {
            const double orig = p.data()[i];
            p.data()[i] = orig + h;
            const double up = forward().value();
            p.data()[i] = orig - h;
            const double down = forward().value();
            p.data()[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double an = analytic[pi][i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
            const double rel = std::abs(fd - an) / denom;
            ++report.n_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = params[pi].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

}  // namespace hfx
