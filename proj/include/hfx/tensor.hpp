#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hfx/rng.hpp"

namespace hfx {

// One node of the computation tape. Nodes are created in program order and
// carry a monotonically increasing id; walking reachable nodes in reverse id
// order is a valid (and deterministic) topological order for backprop.
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily, same length as data
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
    }
};

// Value-semantics handle over a shared tape node. Row-major, 64-bit floats.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<size_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor randn(std::vector<size_t> shape, Rng& rng, double stddev,
                        bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t size() const { return node_->data.size(); }
    size_t rows() const { return node_->shape[0]; }
    size_t cols() const { return node_->shape.back(); }
    bool is_scalar() const { return node_->data.size() == 1; }
    double value() const;

    bool requires_grad() const { return node_->requires_grad; }
    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    double& at(size_t r, size_t c) { return node_->data[r * cols() + c]; }
    double at(size_t r, size_t c) const { return node_->data[r * cols() + c]; }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor make_op_result(std::vector<size_t> shape,
                                 std::vector<std::shared_ptr<TensorNode>> parents);
};

// Seeds d(loss)/d(loss)=1 and propagates through the recorded tape. Grads
// accumulate across calls; reset with zero_grad on the leaves.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor div(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a x b^T, [m,k]x[n,k]
Tensor transpose(const Tensor& a);

Tensor slice_rows(const Tensor& a, size_t start, size_t len);
Tensor slice_cols(const Tensor& a, size_t start, size_t len);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Row-wise softmax / log-softmax over the last axis, stabilized by
// max-subtraction. Throws NumericError on NaN input.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

Tensor gelu(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

// Gathers table rows by id; gradient scatters back into the table.
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);

// Broadcast multiply of every row of a [t,n] by v [n].
Tensor mul_rowvec(const Tensor& a, const Tensor& v);

Tensor sum(const Tensor& a);

// -(1/N) * sum_t w_t * log_probs[t, targets[t]] where N counts the positions
// with nonzero weight. Throws DataError when every weight is zero.
Tensor weighted_nll(const Tensor& log_probs, const std::vector<int>& targets,
                    const std::vector<double>& weights);

// sum_t mask_t * KL(p_ref[t] || p_new[t]) / #selected. Both inputs must be
// row distributions; gradient flows only into p_new.
Tensor kl_rowwise(const Tensor& p_ref, const Tensor& p_new,
                  const std::vector<double>& mask);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Raw kernels (also used by op backward passes); all accumulate into C.
// ---------------------------------------------------------------------------
namespace detail {
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
void gemm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
void gemm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
std::string shape_str(const std::vector<size_t>& s);
}  // namespace detail

}  // namespace hfx
