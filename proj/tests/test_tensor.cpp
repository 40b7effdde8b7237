#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradsuite.hpp"
#include "hfx/error.hpp"
#include "hfx/gradcheck.hpp"
#include "hfx/optim.hpp"
#include "hfx/rng.hpp"
#include "hfx/tensor.hpp"

using namespace hfx;

namespace {

// Independent oracles. These stay deliberately naive so the main
// implementations are checked against something with no shared code.

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 size_t m, size_t k, size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (size_t kk = 0; kk < k; ++kk) {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    return c;
}

// Direct exp-normalize in extended precision.
std::vector<double> softmax_oracle(const std::vector<double>& x) {
    long double z = 0.0L;
    for (double v : x) z += expl(static_cast<long double>(v));
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = static_cast<double>(expl(static_cast<long double>(x[i])) / z);
    }
    return out;
}

double nll_oracle(const std::vector<double>& log_probs, size_t v, const std::vector<int>& targets,
                  const std::vector<double>& weights) {
    double acc = 0.0;
    size_t n = 0;
    for (size_t t = 0; t < targets.size(); ++t) {
        if (weights[t] != 0.0) {
            acc -= weights[t] * log_probs[t * v + static_cast<size_t>(targets[t])];
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

double kl_oracle(const std::vector<double>& p_ref, const std::vector<double>& p_new, size_t rows,
                 size_t cols, const std::vector<double>& mask) {
    double acc = 0.0;
    size_t n_sel = 0;
    for (size_t i = 0; i < rows; ++i) {
        if (mask[i] == 0.0) continue;
        ++n_sel;
        for (size_t j = 0; j < cols; ++j) {
            const double r = p_ref[i * cols + j];
            if (r > 0.0) {
                acc += mask[i] * r * (std::log(r) - std::log(p_new[i * cols + j]));
            }
        }
    }
    return acc / static_cast<double>(n_sel);
}

}  // namespace

TEST_CASE("matmul identity and column selection") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor r = matmul(eye, m);
    CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

    Tensor col = Tensor::from_data({2, 1}, {0, 1});
    Tensor r2 = matmul(m, col);
    CHECK(r2.data() == std::vector<double>{2, 4});
}

TEST_CASE("matmul matches naive triple-loop oracle") {
    Rng rng(17);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0);
    Tensor c = matmul(a, b);
    auto expect = naive_matmul(a.data(), b.data(), 3, 4, 2);
    for (size_t i = 0; i < expect.size(); ++i) {
        CHECK(std::abs(c.data()[i] - expect[i]) < 1e-12);
    }
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul_nt agrees with matmul of explicit transpose") {
    Rng rng(3);
    Tensor a = Tensor::randn({4, 6}, rng, 1.0);
    Tensor b = Tensor::randn({5, 6}, rng, 1.0);
    Tensor direct = matmul_nt(a, b);
    Tensor via_t = matmul(a, transpose(b));
    for (size_t i = 0; i < direct.size(); ++i) {
        CHECK(direct.data()[i] == doctest::Approx(via_t.data()[i]).epsilon(1e-14));
    }
}

TEST_CASE("softmax uniform on constant rows") {
    Tensor x = Tensor::from_data({1, 4}, {0, 0, 0, 0});
    Tensor p = softmax_rows(x);
    for (double v : p.data()) {
        CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    }
}

TEST_CASE("softmax shift invariance and row sums") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = Tensor::randn({3, 7}, rng, 3.0);
        Tensor p = softmax_rows(x);
        for (size_t i = 0; i < 3; ++i) {
            double s = 0.0;
            for (size_t j = 0; j < 7; ++j) s += p.at(i, j);
            CHECK(std::abs(s - 1.0) <= 1e-9);
        }
        const double c = rng.gaussian() * 10.0;
        Tensor shifted = Tensor::zeros({3, 7});
        for (size_t i = 0; i < x.size(); ++i) shifted.data()[i] = x.data()[i] + c;
        Tensor p2 = softmax_rows(shifted);
        for (size_t i = 0; i < p.size(); ++i) {
            CHECK(std::abs(p.data()[i] - p2.data()[i]) < 1e-12);
        }
    }
}

TEST_CASE("softmax matches exp-normalize oracle") {
    Tensor x = Tensor::from_data({1, 3}, {1, 2, 3});
    Tensor p = softmax_rows(x);
    auto expect = softmax_oracle({1, 2, 3});
    for (size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(p.data()[i] - expect[i]) < 1e-12);
    }
}

TEST_CASE("softmax rejects NaN input") {
    Tensor x = Tensor::from_data({1, 2}, {0.0, std::nan("")});
    CHECK_THROWS_AS(softmax_rows(x), NumericError);
}

TEST_CASE("weighted_nll perfect and uniform models") {
    // Model assigns probability 1 to every target: log p = 0.
    const size_t v = 4;
    std::vector<double> lp(3 * v, -1e9);
    lp[0 * v + 1] = 0.0;
    lp[1 * v + 2] = 0.0;
    lp[2 * v + 0] = 0.0;
    Tensor t = Tensor::from_data({3, v}, lp);
    Tensor loss = weighted_nll(t, {1, 2, 0}, {1, 1, 1});
    CHECK(loss.value() == 0.0);

    // Uniform model over v symbols: ln v per token.
    Tensor u = Tensor::full({3, v}, std::log(1.0 / v));
    Tensor loss2 = weighted_nll(u, {0, 3, 2}, {1, 1, 1});
    CHECK(loss2.value() == doctest::Approx(std::log(double(v))).epsilon(1e-14));
}

TEST_CASE("weighted_nll matches per-token loop oracle") {
    Rng rng(11);
    const size_t v = 6;
    Tensor logits = Tensor::randn({5, v}, rng, 1.0);
    Tensor lp = log_softmax_rows(logits);
    std::vector<int> targets{3, 1, 5, 0, 2};
    std::vector<double> weights{1.0, 0.0, 0.5, 2.0, 1.0};
    Tensor loss = weighted_nll(lp, targets, weights);
    CHECK(std::abs(loss.value() - nll_oracle(lp.data(), v, targets, weights)) < 1e-12);
}

TEST_CASE("weighted_nll rejects zero-mass weights") {
    Tensor lp = Tensor::full({2, 3}, -1.0);
    CHECK_THROWS_AS(weighted_nll(lp, {0, 1}, {0.0, 0.0}), DataError);
}

TEST_CASE("weighted_nll with all-ones weights equals unweighted mean exactly") {
    Rng rng(23);
    Tensor lp = log_softmax_rows(Tensor::randn({7, 5}, rng, 1.0));
    std::vector<int> targets{0, 4, 2, 2, 1, 3, 0};
    Tensor weighted = weighted_nll(lp, targets, std::vector<double>(7, 1.0));
    double mean = 0.0;
    for (size_t t = 0; t < 7; ++t) mean -= lp.at(t, static_cast<size_t>(targets[t]));
    mean /= 7.0;
    CHECK(weighted.value() == mean);
}

TEST_CASE("kl_rowwise identical distributions give zero") {
    Tensor p = Tensor::from_data({2, 3}, {0.2, 0.3, 0.5, 0.1, 0.1, 0.8});
    Tensor kl = kl_rowwise(p, p, {1.0, 1.0});
    CHECK(kl.value() == 0.0);
}

TEST_CASE("kl_rowwise analytic case ln 2") {
    Tensor ref = Tensor::from_data({1, 2}, {1.0, 0.0});
    Tensor neu = Tensor::from_data({1, 2}, {0.5, 0.5});
    Tensor kl = kl_rowwise(ref, neu, {1.0});
    CHECK(kl.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("kl_rowwise matches definition-loop oracle") {
    Rng rng(29);
    Tensor ref = softmax_rows(Tensor::randn({4, 3}, rng, 1.0));
    Tensor neu = softmax_rows(Tensor::randn({4, 3}, rng, 1.0));
    std::vector<double> mask{1.0, 0.0, 1.0, 1.0};
    Tensor kl = kl_rowwise(ref, neu, mask);
    CHECK(std::abs(kl.value() - kl_oracle(ref.data(), neu.data(), 4, 3, mask)) < 1e-10);
}

TEST_CASE("kl_rowwise rejects non-distributions") {
    Tensor bad = Tensor::from_data({1, 2}, {0.9, 0.3});
    Tensor good = Tensor::from_data({1, 2}, {0.5, 0.5});
    CHECK_THROWS_AS(kl_rowwise(bad, good, {1.0}), DistributionError);
}

TEST_CASE("kl_rowwise nonnegative, zero only at equality") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor ref = softmax_rows(Tensor::randn({2, 5}, rng, 1.0));
        Tensor neu = softmax_rows(Tensor::randn({2, 5}, rng, 1.0));
        Tensor kl = kl_rowwise(ref, neu, {1.0, 1.0});
        CHECK(kl.value() >= 0.0);
        double max_gap = 0.0;
        for (size_t i = 0; i < ref.size(); ++i) {
            max_gap = std::max(max_gap, std::abs(ref.data()[i] - neu.data()[i]));
        }
        if (kl.value() < 1e-12) {
            CHECK(max_gap < 1e-5);
        }
    }
}

TEST_CASE("backward on sum gives all-ones gradient") {
    Tensor x = Tensor::zeros({2, 3}, true);
    backward(sum(x));
    for (double g : x.grad()) {
        CHECK(g == 1.0);
    }
}

TEST_CASE("backward quadratic case") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::zeros({2, 2}, true);
    CHECK_THROWS_AS(backward(add(x, x)), ShapeError);
}

TEST_CASE("backward accumulates without reset, reproduces bitwise with reset") {
    Rng rng(37);
    Tensor x = Tensor::randn({4, 4}, rng, 1.0, true);
    auto loss = [&] { return sum(mul(softmax_rows(x), x)); };
    x.zero_grad();
    backward(loss());
    std::vector<double> g1 = x.grad();
    backward(loss());
    for (size_t i = 0; i < g1.size(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-15));
    }
    x.zero_grad();
    backward(loss());
    CHECK(x.grad() == g1);  // bitwise
}

TEST_CASE("gradient suite: all ops pass central finite differences") {
    auto res = hfx_tests::run_op_gradient_suite_many(1000, 100);
    INFO("worst: ", res.worst_case, " rel err ", res.max_rel_err, " over ", res.n_checked);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from_data({3}, {1, 2, 3}, true);
    AdamOptimizer opt(0.1);
    opt.register_param("p", p);
    opt.zero_grad();
    opt.step();
    CHECK(p.data() == std::vector<double>{1, 2, 3});
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam first step moves by about lr") {
    Tensor p = Tensor::from_data({1}, {0.5}, true);
    AdamOptimizer opt(0.1);
    opt.register_param("p", p);
    p.zero_grad();
    p.grad()[0] = 1.0;
    opt.step();
    CHECK(std::abs((0.5 - p.data()[0]) - 0.1) < 1e-6);
}

TEST_CASE("adam descends on x^2 monotonically") {
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    AdamOptimizer opt(0.05);
    opt.register_param("x", p);
    double prev = 1.0;
    for (int i = 0; i < 10; ++i) {
        opt.zero_grad();
        backward(mul(p, p));
        opt.step();
        const double cur = std::abs(p.data()[0]);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("adam reports missing gradient by parameter name") {
    Tensor p = Tensor::zeros({2}, true);
    AdamOptimizer opt;
    opt.register_param("ff.w1", p);
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("ff.w1"), StateError);
}

TEST_CASE("tensor invariants") {
    Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({0, 2}), ShapeError);
}
