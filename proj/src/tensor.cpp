#include "hfx/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "hfx/error.hpp"

namespace hfx {

namespace {

std::atomic<uint64_t> g_next_node_id{1};

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        if (d < 1) {
            throw ShapeError("tensor dimensions must be >= 1");
        }
        n *= d;
    }
    return n;
}

std::shared_ptr<TensorNode> make_node(std::vector<size_t> shape) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data.assign(shape_numel(node->shape), 0.0);
    node->id = g_next_node_id.fetch_add(1);
    return node;
}

void require_2d(const Tensor& t, const char* what) {
    if (t.shape().size() != 2) {
        throw ShapeError(std::string(what) + " expects a 2-d tensor, got shape " +
                         detail::shape_str(t.shape()));
    }
}

void check_finite_rows(const Tensor& t, const char* op) {
    for (double v : t.data()) {
        if (std::isnan(v)) {
            throw NumericError(std::string(op) + ": NaN in input");
        }
    }
}

}  // namespace

namespace detail {

std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        os << s[i] << (i + 1 < s.size() ? "x" : "");
    }
    os << "]";
    return os.str();
}

// C += A * B. ikj order keeps the inner loop contiguous in both B and C.
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (size_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            if (av == 0.0) continue;
            const double* bk = b + kk * n;
            for (size_t j = 0; j < n; ++j) {
                ci[j] += av * bk[j];
            }
        }
    }
}

// C += A * B^T where B is [n,k]; rows of A and B are both contiguous dots.
void gemm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (size_t kk = 0; kk < k; ++kk) {
                acc += ai[kk] * bj[kk];
            }
            ci[j] += acc;
        }
    }
}

// C += A^T * B where A is [k,m], B is [k,n].
void gemm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t kk = 0; kk < k; ++kk) {
        const double* ak = a + kk * m;
        const double* bk = b + kk * n;
        for (size_t i = 0; i < m; ++i) {
            const double av = ak[i];
            if (av == 0.0) continue;
            double* ci = c + i * n;
            for (size_t j = 0; j < n; ++j) {
                ci[j] += av * bk[j];
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

Tensor make_op_result(std::vector<size_t> shape,
                      std::vector<std::shared_ptr<TensorNode>> parents) {
    auto node = make_node(std::move(shape));
    bool needs = false;
    for (const auto& p : parents) {
        needs = needs || p->requires_grad;
    }
    node->requires_grad = needs;
    node->parents = std::move(parents);
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
    auto node = make_node(std::move(shape));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::full(std::vector<size_t> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    const size_t n = shape_numel(shape);
    if (n != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + detail::shape_str(shape));
    }
    Tensor t = zeros(std::move(shape), requires_grad);
    t.data() = std::move(data);
    return t;
}

Tensor Tensor::randn(std::vector<size_t> shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) {
        v = rng.gaussian() * stddev;
    }
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

double Tensor::value() const {
    if (!is_scalar()) {
        throw ShapeError("value() on non-scalar tensor of shape " +
                         detail::shape_str(shape()));
    }
    return node_->data[0];
}

std::vector<double>& Tensor::grad() {
    if (!has_grad()) {
        throw StateError("gradient not populated; call backward() first");
    }
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) {
        throw StateError("gradient not populated; call backward() first");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->data.size(), 0.0);
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.is_scalar()) {
        throw ShapeError("backward() requires a scalar loss, got shape " +
                         detail::shape_str(loss.shape()));
    }
    // Collect reachable nodes, then run in descending creation order.
    std::vector<std::shared_ptr<TensorNode>> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::shared_ptr<TensorNode>> stack{loss.node()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto node = stack.back();
        stack.pop_back();
        order.push_back(node);
        for (const auto& p : node->parents) {
            if (seen.insert(p.get()).second) {
                stack.push_back(p);
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a->id > b->id; });

    auto root = loss.node();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto& node : order) {
        if (node->backward_fn && node->requires_grad) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

// Helper shared by op implementations: grad buffer of a parent that wants one.
namespace {

bool wants_grad(const std::shared_ptr<TensorNode>& p) { return p->requires_grad; }

double* grad_of(const std::shared_ptr<TensorNode>& p) {
    p->ensure_grad();
    return p->grad.data();
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
    }
    Tensor out = make_op_result(a.shape(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] + bv[i];
    }
    out.node()->backward_fn = [](TensorNode& self) {
        for (auto& p : self.parents) {
            if (!wants_grad(p)) continue;
            double* g = grad_of(p);
            for (size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
    };
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("sub: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
    }
    Tensor out = make_op_result(a.shape(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] - bv[i];
    }
    out.node()->backward_fn = [](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants_grad(pa)) {
            double* g = grad_of(pa);
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(pb)) {
            double* g = grad_of(pb);
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    };
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
    }
    Tensor out = make_op_result(a.shape(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] * bv[i];
    }
    out.node()->backward_fn = [](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants_grad(pa)) {
            double* g = grad_of(pa);
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb->data[i];
        }
        if (wants_grad(pb)) {
            double* g = grad_of(pb);
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa->data[i];
        }
    };
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("div: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
    }
    Tensor out = make_op_result(a.shape(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] / bv[i];
    }
    out.node()->backward_fn = [](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants_grad(pa)) {
            double* g = grad_of(pa);
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / pb->data[i];
        }
        if (wants_grad(pb)) {
            double* g = grad_of(pb);
            for (size_t i = 0; i < self.grad.size(); ++i) {
                g[i] -= self.grad[i] * pa->data[i] / (pb->data[i] * pb->data[i]);
            }
        }
    };
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = make_op_result(a.shape(), {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] + c;
    }
    out.node()->backward_fn = [](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = make_op_result(a.shape(), {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] * c;
    }
    out.node()->backward_fn = [c](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
    };
    return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions disagree, " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()));
    }
    Tensor out = make_op_result({m, n}, {a.node(), b.node()});
    detail::gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    out.node()->backward_fn = [m, k, n](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        // dA += dC * B^T ; dB += A^T * dC
        if (wants_grad(pa)) {
            detail::gemm_nt(self.grad.data(), pb->data.data(), grad_of(pa), m, n, k);
        }
        if (wants_grad(pb)) {
            detail::gemm_tn(pa->data.data(), self.grad.data(), grad_of(pb), k, m, n);
        }
    };
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    const size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + detail::shape_str(a.shape()) +
                         " x " + detail::shape_str(b.shape()) + "^T");
    }
    Tensor out = make_op_result({m, n}, {a.node(), b.node()});
    detail::gemm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    out.node()->backward_fn = [m, k, n](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        // C = A B^T: dA += dC * B ; dB += dC^T * A
        if (wants_grad(pa)) {
            detail::gemm_nn(self.grad.data(), pb->data.data(), grad_of(pa), m, n, k);
        }
        if (wants_grad(pb)) {
            detail::gemm_tn(self.grad.data(), pa->data.data(), grad_of(pb), n, m, k);
        }
    };
    return out;
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const size_t m = a.rows(), n = a.cols();
    Tensor out = make_op_result({n, m}, {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            ov[j * m + i] = av[i * n + j];
        }
    }
    out.node()->backward_fn = [m, n](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j < n; ++j) {
                g[i * n + j] += self.grad[j * m + i];
            }
        }
    };
    return out;
}

Tensor slice_rows(const Tensor& a, size_t start, size_t len) {
    require_2d(a, "slice_rows");
    if (start + len > a.rows()) {
        throw ShapeError("slice_rows: range past end of " + detail::shape_str(a.shape()));
    }
    const size_t n = a.cols();
    Tensor out = make_op_result({len, n}, {a.node()});
    std::copy_n(a.data().begin() + start * n, len * n, out.data().begin());
    out.node()->backward_fn = [start, n](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa) + start * n;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            g[i] += self.grad[i];
        }
    };
    return out;
}

Tensor slice_cols(const Tensor& a, size_t start, size_t len) {
    require_2d(a, "slice_cols");
    if (start + len > a.cols()) {
        throw ShapeError("slice_cols: range past end of " + detail::shape_str(a.shape()));
    }
    const size_t m = a.rows(), n = a.cols();
    Tensor out = make_op_result({m, len}, {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < m; ++i) {
        std::copy_n(av.begin() + i * n + start, len, ov.begin() + i * len);
    }
    out.node()->backward_fn = [start, m, n, len](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j < len; ++j) {
                g[i * n + start + j] += self.grad[i * len + j];
            }
        }
    };
    return out;
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
    require_2d(top, "concat_rows");
    require_2d(bottom, "concat_rows");
    if (top.cols() != bottom.cols()) {
        throw ShapeError("concat_rows: column counts differ, " + detail::shape_str(top.shape()) +
                         " vs " + detail::shape_str(bottom.shape()));
    }
    const size_t n = top.cols();
    const size_t m0 = top.rows(), m1 = bottom.rows();
    Tensor out = make_op_result({m0 + m1, n}, {top.node(), bottom.node()});
    auto& ov = out.data();
    std::copy(top.data().begin(), top.data().end(), ov.begin());
    std::copy(bottom.data().begin(), bottom.data().end(), ov.begin() + m0 * n);
    out.node()->backward_fn = [m0, n](TensorNode& self) {
        auto& pt = self.parents[0];
        auto& pb = self.parents[1];
        if (wants_grad(pt)) {
            double* g = grad_of(pt);
            for (size_t i = 0; i < pt->data.size(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(pb)) {
            double* g = grad_of(pb);
            const double* src = self.grad.data() + m0 * n;
            for (size_t i = 0; i < pb->data.size(); ++i) g[i] += src[i];
        }
    };
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no parts");
    }
    const size_t m = parts[0].rows();
    size_t total = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::vector<size_t> widths;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row counts differ");
        }
        widths.push_back(p.cols());
        total += p.cols();
        parents.push_back(p.node());
    }
    Tensor out = make_op_result({m, total}, std::move(parents));
    auto& ov = out.data();
    size_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& pv = parts[pi].data();
        const size_t w = widths[pi];
        for (size_t i = 0; i < m; ++i) {
            std::copy_n(pv.begin() + i * w, w, ov.begin() + i * total + off);
        }
        off += w;
    }
    out.node()->backward_fn = [m, total, widths](TensorNode& self) {
        size_t off = 0;
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
            auto& p = self.parents[pi];
            const size_t w = widths[pi];
            if (wants_grad(p)) {
                double* g = grad_of(p);
                for (size_t i = 0; i < m; ++i) {
                    for (size_t j = 0; j < w; ++j) {
                        g[i * w + j] += self.grad[i * total + off + j];
                    }
                }
            }
            off += w;
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
    require_2d(logits, "softmax");
    check_finite_rows(logits, "softmax");
    const size_t m = logits.rows(), n = logits.cols();
    Tensor out = make_op_result({m, n}, {logits.node()});
    const auto& x = logits.data();
    auto& p = out.data();
    for (size_t i = 0; i < m; ++i) {
        const double* xi = x.data() + i * n;
        double* pi = p.data() + i * n;
        double mx = xi[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        double z = 0.0;
        for (size_t j = 0; j < n; ++j) {
            pi[j] = std::exp(xi[j] - mx);
            z += pi[j];
        }
        for (size_t j = 0; j < n; ++j) pi[j] /= z;
    }
    out.node()->backward_fn = [m, n](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        for (size_t i = 0; i < m; ++i) {
            const double* pi = self.data.data() + i * n;
            const double* dy = self.grad.data() + i * n;
            double dot = 0.0;
            for (size_t j = 0; j < n; ++j) dot += dy[j] * pi[j];
            for (size_t j = 0; j < n; ++j) {
                g[i * n + j] += pi[j] * (dy[j] - dot);
            }
        }
    };
    return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
    require_2d(logits, "log_softmax");
    check_finite_rows(logits, "log_softmax");
    const size_t m = logits.rows(), n = logits.cols();
    Tensor out = make_op_result({m, n}, {logits.node()});
    const auto& x = logits.data();
    auto& lp = out.data();
    for (size_t i = 0; i < m; ++i) {
        const double* xi = x.data() + i * n;
        double* li = lp.data() + i * n;
        double mx = xi[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        double z = 0.0;
        for (size_t j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
        const double lz = std::log(z) + mx;
        for (size_t j = 0; j < n; ++j) li[j] = xi[j] - lz;
    }
    out.node()->backward_fn = [m, n](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        for (size_t i = 0; i < m; ++i) {
            const double* li = self.data.data() + i * n;
            const double* dy = self.grad.data() + i * n;
            double dsum = 0.0;
            for (size_t j = 0; j < n; ++j) dsum += dy[j];
            for (size_t j = 0; j < n; ++j) {
                g[i * n + j] += dy[j] - std::exp(li[j]) * dsum;
            }
        }
    };
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& a) {
    Tensor out = make_op_result(a.shape(), {a.node()});
    const auto& x = a.data();
    auto& y = out.data();
    for (size_t i = 0; i < y.size(); ++i) {
        y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
    }
    out.node()->backward_fn = [](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double x = pa->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            g[i] += self.grad[i] * (cdf + x * pdf);
        }
    };
    return out;
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(a, "layer_norm");
    const size_t m = a.rows(), n = a.cols();
    if (gain.size() != n || bias.size() != n) {
        throw ShapeError("layer_norm: gain/bias length must equal row width " +
                         std::to_string(n));
    }
    Tensor out = make_op_result({m, n}, {a.node(), gain.node(), bias.node()});
    const auto& x = a.data();
    const auto& gw = gain.data();
    const auto& bw = bias.data();
    auto& y = out.data();
    // Cache per-row (mean, inv_std) for the backward pass.
    auto stats = std::make_shared<std::vector<double>>(2 * m);
    for (size_t i = 0; i < m; ++i) {
        const double* xi = x.data() + i * n;
        double mean = 0.0;
        for (size_t j = 0; j < n; ++j) mean += xi[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) {
            const double d = xi[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * i] = mean;
        (*stats)[2 * i + 1] = inv_std;
        for (size_t j = 0; j < n; ++j) {
            y[i * n + j] = (xi[j] - mean) * inv_std * gw[j] + bw[j];
        }
    }
    out.node()->backward_fn = [m, n, stats](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        for (size_t i = 0; i < m; ++i) {
            const double mean = (*stats)[2 * i];
            const double inv_std = (*stats)[2 * i + 1];
            const double* xi = px->data.data() + i * n;
            const double* dy = self.grad.data() + i * n;
            if (wants_grad(pg) || wants_grad(pb)) {
                double* gg = wants_grad(pg) ? grad_of(pg) : nullptr;
                double* gb = wants_grad(pb) ? grad_of(pb) : nullptr;
                for (size_t j = 0; j < n; ++j) {
                    const double xhat = (xi[j] - mean) * inv_std;
                    if (gg) gg[j] += dy[j] * xhat;
                    if (gb) gb[j] += dy[j];
                }
            }
            if (wants_grad(px)) {
                const double* gw = pg->data.data();
                double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
                for (size_t j = 0; j < n; ++j) {
                    const double xhat = (xi[j] - mean) * inv_std;
                    const double dyg = dy[j] * gw[j];
                    sum_dyg += dyg;
                    sum_dyg_xhat += dyg * xhat;
                }
                const double inv_n = 1.0 / static_cast<double>(n);
                double* gx = grad_of(px) + i * n;
                for (size_t j = 0; j < n; ++j) {
                    const double xhat = (xi[j] - mean) * inv_std;
                    const double dyg = dy[j] * gw[j];
                    gx[j] += inv_std * (dyg - inv_n * sum_dyg - xhat * inv_n * sum_dyg_xhat);
                }
            }
        }
    };
    return out;
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
    require_2d(table, "embed_rows");
    const size_t n = table.cols();
    const size_t rows = table.rows();
    Tensor out = make_op_result({ids.size(), n}, {table.node()});
    auto& y = out.data();
    for (size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || static_cast<size_t>(id) >= rows) {
            throw ShapeError("embed_rows: id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(rows) + ")");
        }
        std::copy_n(table.data().begin() + static_cast<size_t>(id) * n, n, y.begin() + i * n);
    }
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    out.node()->backward_fn = [n, ids_copy](TensorNode& self) {
        auto& pt = self.parents[0];
        if (!wants_grad(pt)) return;
        double* g = grad_of(pt);
        for (size_t i = 0; i < ids_copy->size(); ++i) {
            double* gi = g + static_cast<size_t>((*ids_copy)[i]) * n;
            const double* dy = self.grad.data() + i * n;
            for (size_t j = 0; j < n; ++j) gi[j] += dy[j];
        }
    };
    return out;
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
    require_2d(a, "mul_rowvec");
    const size_t m = a.rows(), n = a.cols();
    if (v.size() != n) {
        throw ShapeError("mul_rowvec: vector length " + std::to_string(v.size()) +
                         " must equal row width " + std::to_string(n));
    }
    Tensor out = make_op_result({m, n}, {a.node(), v.node()});
    const auto& x = a.data();
    const auto& w = v.data();
    auto& y = out.data();
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            y[i * n + j] = x[i * n + j] * w[j];
        }
    }
    out.node()->backward_fn = [m, n](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pv = self.parents[1];
        if (wants_grad(pa)) {
            double* g = grad_of(pa);
            const double* w = pv->data.data();
            for (size_t i = 0; i < m; ++i) {
                for (size_t j = 0; j < n; ++j) {
                    g[i * n + j] += self.grad[i * n + j] * w[j];
                }
            }
        }
        if (wants_grad(pv)) {
            double* g = grad_of(pv);
            const double* x = pa->data.data();
            for (size_t i = 0; i < m; ++i) {
                for (size_t j = 0; j < n; ++j) {
                    g[j] += self.grad[i * n + j] * x[i * n + j];
                }
            }
        }
    };
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out = make_op_result({1}, {a.node()});
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    out.data()[0] = acc;
    out.node()->backward_fn = [](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        const double dy = self.grad[0];
        for (size_t i = 0; i < pa->data.size(); ++i) g[i] += dy;
    };
    return out;
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

Tensor weighted_nll(const Tensor& log_probs, const std::vector<int>& targets,
                    const std::vector<double>& weights) {
    require_2d(log_probs, "weighted_nll");
    const size_t t = log_probs.rows(), v = log_probs.cols();
    if (targets.size() != t || weights.size() != t) {
        throw ShapeError("weighted_nll: need " + std::to_string(t) +
                         " targets and weights, got " + std::to_string(targets.size()) + "/" +
                         std::to_string(weights.size()));
    }
    size_t n_active = 0;
    for (size_t i = 0; i < t; ++i) {
        if (weights[i] < 0.0) {
            throw DataError("weighted_nll: negative weight at position " + std::to_string(i));
        }
        if (weights[i] != 0.0) ++n_active;
        if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= v) {
            throw ShapeError("weighted_nll: target id out of range at position " +
                             std::to_string(i));
        }
    }
    if (n_active == 0) {
        throw DataError("weighted_nll: all weights are zero (zero-mass example)");
    }
    Tensor out = make_op_result({1}, {log_probs.node()});
    double acc = 0.0;
    const auto& lp = log_probs.data();
    for (size_t i = 0; i < t; ++i) {
        if (weights[i] == 0.0) continue;
        acc -= weights[i] * lp[i * v + static_cast<size_t>(targets[i])];
    }
    out.data()[0] = acc / static_cast<double>(n_active);
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto wt = std::make_shared<std::vector<double>>(weights);
    out.node()->backward_fn = [v, n_active, tg, wt](TensorNode& self) {
        auto& pa = self.parents[0];
        if (!wants_grad(pa)) return;
        double* g = grad_of(pa);
        const double dy = self.grad[0] / static_cast<double>(n_active);
        for (size_t i = 0; i < tg->size(); ++i) {
            if ((*wt)[i] == 0.0) continue;
            g[i * v + static_cast<size_t>((*tg)[i])] -= dy * (*wt)[i];
        }
    };
    return out;
}

Tensor kl_rowwise(const Tensor& p_ref, const Tensor& p_new, const std::vector<double>& mask) {
    require_2d(p_ref, "kl_rowwise");
    require_2d(p_new, "kl_rowwise");
    if (p_ref.shape() != p_new.shape()) {
        throw ShapeError("kl_rowwise: shape mismatch " + detail::shape_str(p_ref.shape()) +
                         " vs " + detail::shape_str(p_new.shape()));
    }
    const size_t t = p_ref.rows(), v = p_ref.cols();
    if (mask.size() != t) {
        throw ShapeError("kl_rowwise: mask length must equal row count");
    }
    auto check_rows = [&](const Tensor& p, const char* name) {
        for (size_t i = 0; i < t; ++i) {
            if (mask[i] == 0.0) continue;
            double s = 0.0;
            for (size_t j = 0; j < v; ++j) s += p.data()[i * v + j];
            if (std::abs(s - 1.0) > 1e-6) {
                throw DistributionError(std::string("kl_rowwise: ") + name + " row " +
                                        std::to_string(i) + " sums to " + std::to_string(s));
            }
        }
    };
    check_rows(p_ref, "p_ref");
    check_rows(p_new, "p_new");
    size_t n_sel = 0;
    for (double m : mask) {
        if (m != 0.0) ++n_sel;
    }
    if (n_sel == 0) {
        throw DataError("kl_rowwise: mask selects no positions");
    }
    Tensor out = make_op_result({1}, {p_ref.node(), p_new.node()});
    const auto& pr = p_ref.data();
    const auto& pn = p_new.data();
    double acc = 0.0;
    for (size_t i = 0; i < t; ++i) {
        if (mask[i] == 0.0) continue;
        double row = 0.0;
        for (size_t j = 0; j < v; ++j) {
            const double r = pr[i * v + j];
            if (r > 0.0) {
                row += r * (std::log(r) - std::log(pn[i * v + j]));
            }
        }
        acc += mask[i] * row;
    }
    out.data()[0] = acc / static_cast<double>(n_sel);
    auto mk = std::make_shared<std::vector<double>>(mask);
    out.node()->backward_fn = [t, v, n_sel, mk](TensorNode& self) {
        // The reference distribution is frozen: gradient reaches p_new only.
        auto& pref = self.parents[0];
        auto& pnew = self.parents[1];
        if (!wants_grad(pnew)) return;
        double* g = grad_of(pnew);
        const double dy = self.grad[0] / static_cast<double>(n_sel);
        for (size_t i = 0; i < t; ++i) {
            if ((*mk)[i] == 0.0) continue;
            for (size_t j = 0; j < v; ++j) {
                const double r = pref->data[i * v + j];
                if (r > 0.0) {
                    g[i * v + j] -= dy * (*mk)[i] * r / pnew->data[i * v + j];
                }
            }
        }
    };
    return out;
}

}  // namespace hfx
