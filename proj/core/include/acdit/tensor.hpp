#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "acdit/errors.hpp"

namespace acdit {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense boolean matrix used as an attention-permission mask.
struct BoolMatrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> data;  // row-major, 1 = attention permitted

    BoolMatrix() = default;
    BoolMatrix(int64_t r, int64_t c, uint8_t fill = 0)
        : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {}

    uint8_t at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
    void set(int64_t r, int64_t c, bool v) { data[static_cast<size_t>(r * cols + c)] = v ? 1 : 0; }
    bool operator==(const BoolMatrix& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

// One node of the reverse-mode tape. Values are immutable once the node is
// built; the grad buffer is filled during backward(). backward_fn pulls
// this node's grad and accumulates into the parents' grads.
struct TensorNode {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

// Value handle over a shared tape node.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, float v);
    static Tensor from_data(const Shape& shape, std::vector<float> data);
    // Leaf that participates in backward(); used for trainable parameters.
    static Tensor param(const Shape& shape, std::vector<float> data);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t size() const { return n_->numel(); }
    int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }

    std::span<const float> data() const { return {n_->value.data(), n_->value.size()}; }
    // Mutable access for leaves only (optimizer updates, buffer fills).
    std::span<float> mutable_data();

    bool requires_grad() const { return n_->requires_grad; }
    std::span<const float> grad() const { return {n_->grad.data(), n_->grad.size()}; }
    void zero_grad() { n_->grad.clear(); }

    float item() const;
    // Value copy detached from the tape.
    Tensor detach() const;

    std::shared_ptr<TensorNode> node() const { return n_; }
    static Tensor wrap(std::shared_ptr<TensorNode> n) { return Tensor(std::move(n)); }

   private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}
    std::shared_ptr<TensorNode> n_;
};

// Grad mode is thread-local; sampling runs under NoGradGuard so no tape is built.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

// Throws NumericError if any element is NaN/Inf; every op output passes through it.
void check_finite(std::span<const float> v, const char* op);

namespace detail {
// Builds an op node: allocates the output value, wires parents and grad mode.
// `compute` fills the output; `backward` is installed only when grads flow.
Tensor make_op(Shape shape, std::vector<Tensor> parents,
               const std::function<void(std::span<float>)>& compute,
               std::function<void(TensorNode&)> backward, const char* name);
}  // namespace detail

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);

// ---- linear algebra ----
// a: (..., m, k), b: (k, n) -> (..., m, n)
Tensor matmul(const Tensor& a, const Tensor& b);
// x: (..., c) + b: (c) broadcast over leading dims
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- normalization ----
// Over the last axis: x / sqrt(mean(x^2) + eps) * weight. Pass an undefined
// weight for the unweighted variant.
Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps);
// Same, applied independently to each of `heads` equal segments of the last
// axis; weight has segment length and is shared across heads.
Tensor head_rms_norm(const Tensor& x, const Tensor& weight, int64_t heads, float eps);

// ---- attention ----
// q: (B, Sq, H, d) or (Sq, H, d); k, v: matching with Sk rows.
// mask: (Sq, Sk), shared across batch and heads. Masked pairs are never
// computed, so outputs are exactly independent of masked keys.
// Returns (B, Sq, H*d) (or (Sq, H*d) for the 3-D form).
Tensor masked_softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const BoolMatrix& mask, float scale);

// ---- embeddings / shape ops ----
Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids);
Tensor slice_axis(const Tensor& x, int axis, int64_t from, int64_t to);
Tensor concat_axis(const Tensor& a, const Tensor& b, int axis);
// Each index along `axis` repeated `times` times (block -> token expansion).
Tensor repeat_interleave(const Tensor& x, int axis, int64_t times);
Tensor reshape(const Tensor& x, Shape shape);

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mse_loss(const Tensor& a, const Tensor& b);

// Reverse-mode sweep from a scalar loss. Populates grad on every
// requires-grad node on the path; errors on non-scalar input.
void backward(const Tensor& loss);

}  // namespace acdit
