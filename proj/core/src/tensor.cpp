#include "acdit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace acdit {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& s, const char* where) {
    for (int64_t d : s) {
        if (d <= 0) throw ShapeError(std::string(where) + ": non-positive extent in " + shape_str(s));
    }
}

std::shared_ptr<TensorNode> new_leaf(Shape shape, std::vector<float> data, bool requires_grad) {
    validate_shape(shape, "tensor");
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("tensor: data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    return n;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void check_finite(std::span<const float> v, const char* op) {
    for (size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw NumericError(std::string(op) + ": non-finite value " + std::to_string(v[i]) +
                               " at flat index " + std::to_string(i));
        }
    }
}

Tensor Tensor::zeros(const Shape& shape) {
    return wrap(new_leaf(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), 0.0f), false));
}

Tensor Tensor::full(const Shape& shape, float v) {
    return wrap(new_leaf(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), v), false));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data) {
    check_finite({data.data(), data.size()}, "from_data");
    return wrap(new_leaf(shape, std::move(data), false));
}

Tensor Tensor::param(const Shape& shape, std::vector<float> data) {
    check_finite({data.data(), data.size()}, "param");
    return wrap(new_leaf(shape, std::move(data), true));
}

std::span<float> Tensor::mutable_data() {
    if (!n_->is_leaf) throw Error("mutable_data: only leaf tensors may be mutated");
    return {n_->value.data(), n_->value.size()};
}

float Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return n_->value[0];
}

Tensor Tensor::detach() const {
    return wrap(new_leaf(n_->shape, n_->value, false));
}

namespace detail {

Tensor make_op(Shape shape, std::vector<Tensor> parents,
               const std::function<void(std::span<float>)>& compute,
               std::function<void(TensorNode&)> backward, const char* name) {
    validate_shape(shape, name);
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.resize(static_cast<size_t>(shape_numel(n->shape)));
    compute({n->value.data(), n->value.size()});
    check_finite({n->value.data(), n->value.size()}, name);

    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
    }
    if (needs_grad) {
        n->requires_grad = true;
        n->is_leaf = false;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward);
    }
    return Tensor::wrap(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <class Fwd, class Bwd>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, name);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op(
        a.shape(), {a, b},
        [&](std::span<float> out) {
            const float* pa = an->value.data();
            const float* pb = bn->value.data();
            for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
        },
        [an, bn, bwd](TensorNode& self) {
            const float* g = self.grad.data();
            const size_t n = self.value.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    an->grad[i] += bwd(g[i], an->value[i], bn->value[i], true);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    bn->grad[i] += bwd(g[i], an->value[i], bn->value[i], false);
            }
        },
        name);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "add", [](float x, float y) { return x + y; },
                     [](float g, float, float, bool) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "sub", [](float x, float y) { return x - y; },
                     [](float g, float, float, bool wrt_a) { return wrt_a ? g : -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "mul", [](float x, float y) { return x * y; },
                     [](float g, float x, float y, bool wrt_a) { return wrt_a ? g * y : g * x; });
}

Tensor scale(const Tensor& a, float s) {
    auto an = a.node();
    return detail::make_op(
        a.shape(), {a},
        [&, s](std::span<float> out) {
            const float* p = an->value.data();
            for (size_t i = 0; i < out.size(); ++i) out[i] = p[i] * s;
        },
        [an, s](TensorNode& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) an->grad[i] += self.grad[i] * s;
        },
        "scale");
}

Tensor add_scalar(const Tensor& a, float s) {
    auto an = a.node();
    return detail::make_op(
        a.shape(), {a},
        [&, s](std::span<float> out) {
            const float* p = an->value.data();
            for (size_t i = 0; i < out.size(); ++i) out[i] = p[i] + s;
        },
        [an](TensorNode& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) an->grad[i] += self.grad[i];
        },
        "add_scalar");
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
    auto xn = x.node();
    return detail::make_op(
        x.shape(), {x},
        [&](std::span<float> out) {
            const float* p = xn->value.data();
            for (size_t i = 0; i < out.size(); ++i) {
                const float v = p[i];
                out[i] = 0.5f * v * (1.0f + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
            }
        },
        [xn](TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) {
                const float v = xn->value[i];
                const float u = kGeluC * (v + kGeluA * v * v * v);
                const float t = std::tanh(u);
                const float du = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
                const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
                xn->grad[i] += self.grad[i] * d;
            }
        },
        "gelu");
}

Tensor silu(const Tensor& x) {
    auto xn = x.node();
    return detail::make_op(
        x.shape(), {x},
        [&](std::span<float> out) {
            const float* p = xn->value.data();
            for (size_t i = 0; i < out.size(); ++i) {
                const float v = p[i];
                out[i] = v / (1.0f + std::exp(-v));
            }
        },
        [xn](TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) {
                const float v = xn->value[i];
                const float s = 1.0f / (1.0f + std::exp(-v));
                xn->grad[i] += self.grad[i] * (s * (1.0f + v * (1.0f - s)));
            }
        },
        "silu");
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

// C(M,N) += A(M,K) * B(K,N)
void gemm_nn(float* c, const float* a, const float* b, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for if (M * K * N > 16384)
    for (int64_t m = 0; m < M; ++m) {
        float* crow = c + m * N;
        const float* arow = a + m * K;
        for (int64_t k = 0; k < K; ++k) {
            const float av = arow[k];
            const float* brow = b + k * N;
            for (int64_t n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

// C(M,K) += A(M,N) * B(K,N)^T
void gemm_nt(float* c, const float* a, const float* b, int64_t M, int64_t N, int64_t K) {
#pragma omp parallel for if (M * K * N > 16384)
    for (int64_t m = 0; m < M; ++m) {
        const float* arow = a + m * N;
        float* crow = c + m * K;
        for (int64_t k = 0; k < K; ++k) {
            const float* brow = b + k * N;
            float acc = 0.0f;
            for (int64_t n = 0; n < N; ++n) acc += arow[n] * brow[n];
            crow[k] += acc;
        }
    }
}

// C(K,N) += A(M,K)^T * B(M,N)
void gemm_tn(float* c, const float* a, const float* b, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for if (M * K * N > 16384)
    for (int64_t k = 0; k < K; ++k) {
        float* crow = c + k * N;
        for (int64_t m = 0; m < M; ++m) {
            const float av = a[m * K + k];
            const float* brow = b + m * N;
            for (int64_t n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != 2) {
        throw ShapeError("matmul: need a rank>=2 and b rank==2, got " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const int64_t K = a.dim(a.rank() - 1);
    if (K != b.dim(0)) {
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int64_t N = b.dim(1);
    const int64_t M = a.size() / K;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(N);

    auto an = a.node();
    auto bn = b.node();
    return detail::make_op(
        std::move(out_shape), {a, b},
        [&](std::span<float> out) {
            std::fill(out.begin(), out.end(), 0.0f);
            gemm_nn(out.data(), an->value.data(), bn->value.data(), M, K, N);
        },
        [an, bn, M, K, N](TensorNode& self) {
            const float* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                gemm_nt(an->grad.data(), g, bn->value.data(), M, N, K);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                gemm_tn(bn->grad.data(), an->value.data(), g, M, K, N);
            }
        },
        "matmul");
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (b.rank() != 1 || b.dim(0) != x.dim(x.rank() - 1)) {
        throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
    }
    const int64_t C = b.dim(0);
    const int64_t R = x.size() / C;
    auto xn = x.node();
    auto bn = b.node();
    return detail::make_op(
        x.shape(), {x, b},
        [&](std::span<float> out) {
            const float* px = xn->value.data();
            const float* pb = bn->value.data();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) out[static_cast<size_t>(r * C + c)] = px[r * C + c] + pb[c];
        },
        [xn, bn, R, C](TensorNode& self) {
            const float* g = self.grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < self.value.size(); ++i) xn->grad[i] += g[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < C; ++c) bn->grad[static_cast<size_t>(c)] += g[r * C + c];
            }
        },
        "add_bias");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    return b.defined() ? add_bias(y, b) : y;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

namespace {

Tensor rms_norm_impl(const Tensor& x, const Tensor& weight, int64_t seg, float eps, const char* name) {
    const int64_t total = x.size();
    const int64_t rows = total / seg;
    if (weight.defined() && (weight.rank() != 1 || weight.dim(0) != seg)) {
        throw ShapeError(std::string(name) + ": weight " + shape_str(weight.shape()) +
                         " does not match segment length " + std::to_string(seg));
    }
    auto xn = x.node();
    auto wn = weight.defined() ? weight.node() : nullptr;
    std::vector<Tensor> parents = {x};
    if (weight.defined()) parents.push_back(weight);
    return detail::make_op(
        x.shape(), std::move(parents),
        [&](std::span<float> out) {
            const float* px = xn->value.data();
            const float* pw = wn ? wn->value.data() : nullptr;
#pragma omp parallel for if (rows * seg > 16384)
            for (int64_t r = 0; r < rows; ++r) {
                const float* xr = px + r * seg;
                float ms = 0.0f;
                for (int64_t c = 0; c < seg; ++c) ms += xr[c] * xr[c];
                ms /= static_cast<float>(seg);
                const float inv = 1.0f / std::sqrt(ms + eps);
                float* orow = out.data() + r * seg;
                if (pw)
                    for (int64_t c = 0; c < seg; ++c) orow[c] = xr[c] * inv * pw[c];
                else
                    for (int64_t c = 0; c < seg; ++c) orow[c] = xr[c] * inv;
            }
        },
        [xn, wn, rows, seg, eps](TensorNode& self) {
            const float* g = self.grad.data();
            const float* px = xn->value.data();
            const float* pw = wn ? wn->value.data() : nullptr;
            if (xn->requires_grad) {
                xn->ensure_grad();
#pragma omp parallel for if (rows * seg > 16384)
                for (int64_t r = 0; r < rows; ++r) {
                    const float* xr = px + r * seg;
                    const float* gr = g + r * seg;
                    float ms = 0.0f;
                    for (int64_t c = 0; c < seg; ++c) ms += xr[c] * xr[c];
                    ms /= static_cast<float>(seg);
                    const float inv = 1.0f / std::sqrt(ms + eps);
                    float dot = 0.0f;
                    for (int64_t c = 0; c < seg; ++c) {
                        const float w = pw ? pw[c] : 1.0f;
                        dot += gr[c] * w * xr[c];
                    }
                    const float k = inv * inv * inv * dot / static_cast<float>(seg);
                    float* gx = xn->grad.data() + r * seg;
                    for (int64_t c = 0; c < seg; ++c) {
                        const float w = pw ? pw[c] : 1.0f;
                        gx[c] += gr[c] * w * inv - k * xr[c];
                    }
                }
            }
            if (wn && wn->requires_grad) {
                wn->ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const float* xr = px + r * seg;
                    const float* gr = g + r * seg;
                    float ms = 0.0f;
                    for (int64_t c = 0; c < seg; ++c) ms += xr[c] * xr[c];
                    ms /= static_cast<float>(seg);
                    const float inv = 1.0f / std::sqrt(ms + eps);
                    for (int64_t c = 0; c < seg; ++c) wn->grad[static_cast<size_t>(c)] += gr[c] * xr[c] * inv;
                }
            }
        },
        name);
}

}  // namespace

Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps) {
    const int64_t seg = x.dim(x.rank() - 1);
    return rms_norm_impl(x, weight, seg, eps, "rms_norm");
}

Tensor head_rms_norm(const Tensor& x, const Tensor& weight, int64_t heads, float eps) {
    const int64_t last = x.dim(x.rank() - 1);
    if (last % heads != 0) {
        throw ShapeError("head_rms_norm: last axis " + std::to_string(last) +
                         " not divisible by heads " + std::to_string(heads));
    }
    return rms_norm_impl(x, weight, last / heads, eps, "head_rms_norm");
}

// ---------------------------------------------------------------------------
// masked softmax attention
// ---------------------------------------------------------------------------

Tensor masked_softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const BoolMatrix& mask, float scale) {
    const bool batched = q.rank() == 4;
    if (!(q.rank() == 3 || q.rank() == 4) || k.rank() != q.rank() || v.rank() != q.rank()) {
        throw ShapeError("attention: q/k/v must all be rank 3 or rank 4");
    }
    const int64_t B = batched ? q.dim(0) : 1;
    const int off = batched ? 1 : 0;
    const int64_t Sq = q.dim(off), H = q.dim(off + 1), D = q.dim(off + 2);
    const int64_t Sk = k.dim(off);
    if (k.dim(off + 1) != H || k.dim(off + 2) != D || v.dim(off + 1) != H || v.dim(off + 2) != D ||
        v.dim(off) != Sk || (batched && (k.dim(0) != B || v.dim(0) != B))) {
        throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " disagree");
    }
    if (mask.rows != Sq || mask.cols != Sk) {
        throw ShapeError("attention: mask " + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + " does not cover " + std::to_string(Sq) + "x" +
                         std::to_string(Sk));
    }
    for (int64_t i = 0; i < Sq; ++i) {
        bool any = false;
        for (int64_t j = 0; j < Sk && !any; ++j) any = mask.at(i, j) != 0;
        if (!any) throw ShapeError("attention: query row " + std::to_string(i) + " has no permitted keys");
    }

    Shape out_shape = batched ? Shape{B, Sq, H * D} : Shape{Sq, H * D};
    auto qn = q.node();
    auto kn = k.node();
    auto vn = v.node();

    const bool save_probs = g_grad_enabled && (q.requires_grad() || k.requires_grad() || v.requires_grad());
    // probs: (B, H, Sq, Sk); zero at masked pairs. Reused as the dlogit
    // buffer inside backward once dv has consumed it.
    auto probs = save_probs
                     ? std::make_shared<std::vector<float>>(static_cast<size_t>(B * H * Sq * Sk), 0.0f)
                     : nullptr;
    // Backward may run long after the caller's mask is gone.
    auto mask_copy = std::make_shared<std::vector<uint8_t>>(mask.data);

    auto fwd = [=](std::span<float> out) {
        const uint8_t* m = mask_copy->data();
        std::vector<float> scratch;  // per-row logits when probs are not saved
#pragma omp parallel for collapse(2) private(scratch) if (B * H * Sq > 64)
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t h = 0; h < H; ++h) {
                for (int64_t i = 0; i < Sq; ++i) {
                    const float* qrow = qn->value.data() + ((b * Sq + i) * H + h) * D;
                    float* prow;
                    if (probs) {
                        prow = probs->data() + ((b * H + h) * Sq + i) * Sk;
                    } else {
                        scratch.assign(static_cast<size_t>(Sk), 0.0f);
                        prow = scratch.data();
                    }
                    const uint8_t* mrow = m + i * Sk;
                    float mx = -std::numeric_limits<float>::infinity();
                    for (int64_t j = 0; j < Sk; ++j) {
                        if (!mrow[j]) continue;
                        const float* krow = kn->value.data() + ((b * Sk + j) * H + h) * D;
                        float acc = 0.0f;
                        for (int64_t d = 0; d < D; ++d) acc += qrow[d] * krow[d];
                        const float logit = acc * scale;
                        prow[j] = logit;
                        mx = std::max(mx, logit);
                    }
                    float z = 0.0f;
                    for (int64_t j = 0; j < Sk; ++j) {
                        if (!mrow[j]) continue;
                        const float e = std::exp(prow[j] - mx);
                        prow[j] = e;
                        z += e;
                    }
                    const float inv_z = 1.0f / z;
                    float* orow = out.data() + (b * Sq + i) * (H * D) + h * D;
                    std::fill(orow, orow + D, 0.0f);
                    for (int64_t j = 0; j < Sk; ++j) {
                        if (!mrow[j]) continue;
                        const float p = prow[j] * inv_z;
                        prow[j] = p;
                        const float* vrow = vn->value.data() + ((b * Sk + j) * H + h) * D;
                        for (int64_t d = 0; d < D; ++d) orow[d] += p * vrow[d];
                    }
                }
            }
        }
    };

    // dv first (it consumes the probabilities); the prob buffer is then
    // overwritten row-by-row with dlogit, which dq and dk read.
    auto bwd = [=](TensorNode& self) {
        const uint8_t* m = mask_copy->data();
        const float* g = self.grad.data();
        float* pr = probs->data();
        if (vn->requires_grad) {
            vn->ensure_grad();
#pragma omp parallel for collapse(2) if (B * H * Sk > 64)
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t h = 0; h < H; ++h) {
                    for (int64_t j = 0; j < Sk; ++j) {
                        float* gv = vn->grad.data() + ((b * Sk + j) * H + h) * D;
                        for (int64_t i = 0; i < Sq; ++i) {
                            const float p = pr[((b * H + h) * Sq + i) * Sk + j];
                            if (p == 0.0f) continue;
                            const float* grow = g + (b * Sq + i) * (H * D) + h * D;
                            for (int64_t d = 0; d < D; ++d) gv[d] += p * grow[d];
                        }
                    }
                }
            }
        }
        std::vector<float> dprow;
#pragma omp parallel for collapse(2) private(dprow) if (B * H * Sq > 64)
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t h = 0; h < H; ++h) {
                for (int64_t i = 0; i < Sq; ++i) {
                    float* prow = pr + ((b * H + h) * Sq + i) * Sk;
                    const uint8_t* mrow = m + i * Sk;
                    const float* grow = g + (b * Sq + i) * (H * D) + h * D;
                    // only permitted entries are written and read back
                    if (dprow.size() != static_cast<size_t>(Sk)) dprow.resize(static_cast<size_t>(Sk));
                    float s = 0.0f;
                    for (int64_t j = 0; j < Sk; ++j) {
                        if (!mrow[j]) continue;
                        const float* vrow = vn->value.data() + ((b * Sk + j) * H + h) * D;
                        float dp = 0.0f;
                        for (int64_t d = 0; d < D; ++d) dp += grow[d] * vrow[d];
                        dprow[j] = dp;
                        s += prow[j] * dp;
                    }
                    for (int64_t j = 0; j < Sk; ++j) {
                        if (!mrow[j]) {
                            prow[j] = 0.0f;
                            continue;
                        }
                        prow[j] = prow[j] * (dprow[j] - s);  // dlogit
                    }
                }
            }
        }
        if (qn->requires_grad) {
            qn->ensure_grad();
#pragma omp parallel for collapse(2) if (B * H * Sq > 64)
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t h = 0; h < H; ++h) {
                    for (int64_t i = 0; i < Sq; ++i) {
                        const float* dlrow = pr + ((b * H + h) * Sq + i) * Sk;
                        const uint8_t* mrow = m + i * Sk;
                        float* gq = qn->grad.data() + ((b * Sq + i) * H + h) * D;
                        for (int64_t j = 0; j < Sk; ++j) {
                            if (!mrow[j]) continue;
                            const float dl = dlrow[j] * scale;
                            if (dl == 0.0f) continue;
                            const float* krow = kn->value.data() + ((b * Sk + j) * H + h) * D;
                            for (int64_t d = 0; d < D; ++d) gq[d] += dl * krow[d];
                        }
                    }
                }
            }
        }
        if (kn->requires_grad) {
            kn->ensure_grad();
#pragma omp parallel for collapse(2) if (B * H * Sk > 64)
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t h = 0; h < H; ++h) {
                    for (int64_t j = 0; j < Sk; ++j) {
                        float* gk = kn->grad.data() + ((b * Sk + j) * H + h) * D;
                        for (int64_t i = 0; i < Sq; ++i) {
                            if (!m[i * Sk + j]) continue;
                            const float dl = pr[((b * H + h) * Sq + i) * Sk + j] * scale;
                            if (dl == 0.0f) continue;
                            const float* qrow = qn->value.data() + ((b * Sq + i) * H + h) * D;
                            for (int64_t d = 0; d < D; ++d) gk[d] += dl * qrow[d];
                        }
                    }
                }
            }
        }
    };

    return detail::make_op(std::move(out_shape), {q, k, v}, fwd, bwd, "masked_softmax_attention");
}

// ---------------------------------------------------------------------------
// embeddings / shape ops
// ---------------------------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2");
    const int64_t R = table.dim(0), C = table.dim(1);
    for (int64_t id : ids) {
        if (id < 0 || id >= R)
            throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(R) + ")");
    }
    const int64_t L = static_cast<int64_t>(ids.size());
    auto tn = table.node();
    auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
    return detail::make_op(
        {L, C}, {table},
        [&](std::span<float> out) {
            for (int64_t i = 0; i < L; ++i)
                std::memcpy(out.data() + i * C, tn->value.data() + ids[static_cast<size_t>(i)] * C,
                            static_cast<size_t>(C) * sizeof(float));
        },
        [tn, ids_copy, C](TensorNode& self) {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            const float* g = self.grad.data();
            for (size_t i = 0; i < ids_copy->size(); ++i) {
                float* row = tn->grad.data() + (*ids_copy)[i] * C;
                for (int64_t c = 0; c < C; ++c) row[c] += g[static_cast<int64_t>(i) * C + c];
            }
        },
        "embedding_lookup");
}

namespace {

// Decomposes shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
    int64_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& s, int axis) {
    AxisSplit r{1, s[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace

Tensor slice_axis(const Tensor& x, int axis, int64_t from, int64_t to) {
    if (axis < 0 || axis >= x.rank()) throw ShapeError("slice_axis: bad axis");
    const auto sp = split_axis(x.shape(), axis);
    if (from < 0 || to <= from || to > sp.extent) {
        throw ShapeError("slice_axis: range [" + std::to_string(from) + "," + std::to_string(to) +
                         ") out of extent " + std::to_string(sp.extent));
    }
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = to - from;
    const int64_t span = to - from;
    auto xn = x.node();
    return detail::make_op(
        std::move(out_shape), {x},
        [&](std::span<float> out) {
            const float* px = xn->value.data();
            for (int64_t o = 0; o < sp.outer; ++o)
                std::memcpy(out.data() + o * span * sp.inner, px + (o * sp.extent + from) * sp.inner,
                            static_cast<size_t>(span * sp.inner) * sizeof(float));
        },
        [xn, sp, from, span](TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float* g = self.grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                float* dst = xn->grad.data() + (o * sp.extent + from) * sp.inner;
                const float* src = g + o * span * sp.inner;
                for (int64_t i = 0; i < span * sp.inner; ++i) dst[i] += src[i];
            }
        },
        "slice_axis");
}

Tensor concat_axis(const Tensor& a, const Tensor& b, int axis) {
    if (axis < 0 || axis >= a.rank() || a.rank() != b.rank())
        throw ShapeError("concat_axis: rank mismatch or bad axis");
    for (int i = 0; i < a.rank(); ++i) {
        if (i != axis && a.dim(i) != b.dim(i))
            throw ShapeError("concat_axis: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ off-axis");
    }
    const auto sa = split_axis(a.shape(), axis);
    const auto sb = split_axis(b.shape(), axis);
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = sa.extent + sb.extent;
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op(
        std::move(out_shape), {a, b},
        [&](std::span<float> out) {
            const int64_t row = (sa.extent + sb.extent) * sa.inner;
            for (int64_t o = 0; o < sa.outer; ++o) {
                std::memcpy(out.data() + o * row, an->value.data() + o * sa.extent * sa.inner,
                            static_cast<size_t>(sa.extent * sa.inner) * sizeof(float));
                std::memcpy(out.data() + o * row + sa.extent * sa.inner,
                            bn->value.data() + o * sb.extent * sb.inner,
                            static_cast<size_t>(sb.extent * sb.inner) * sizeof(float));
            }
        },
        [an, bn, sa, sb](TensorNode& self) {
            const float* g = self.grad.data();
            const int64_t row = (sa.extent + sb.extent) * sa.inner;
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t o = 0; o < sa.outer; ++o) {
                    float* dst = an->grad.data() + o * sa.extent * sa.inner;
                    const float* src = g + o * row;
                    for (int64_t i = 0; i < sa.extent * sa.inner; ++i) dst[i] += src[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t o = 0; o < sa.outer; ++o) {
                    float* dst = bn->grad.data() + o * sb.extent * sb.inner;
                    const float* src = g + o * row + sa.extent * sa.inner;
                    for (int64_t i = 0; i < sb.extent * sb.inner; ++i) dst[i] += src[i];
                }
            }
        },
        "concat_axis");
}

Tensor repeat_interleave(const Tensor& x, int axis, int64_t times) {
    if (axis < 0 || axis >= x.rank()) throw ShapeError("repeat_interleave: bad axis");
    if (times < 1) throw ShapeError("repeat_interleave: times must be >= 1");
    const auto sp = split_axis(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = sp.extent * times;
    auto xn = x.node();
    return detail::make_op(
        std::move(out_shape), {x},
        [&](std::span<float> out) {
            const float* px = xn->value.data();
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t e = 0; e < sp.extent; ++e)
                    for (int64_t t = 0; t < times; ++t)
                        std::memcpy(out.data() + ((o * sp.extent + e) * times + t) * sp.inner,
                                    px + (o * sp.extent + e) * sp.inner,
                                    static_cast<size_t>(sp.inner) * sizeof(float));
        },
        [xn, sp, times](TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float* g = self.grad.data();
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t e = 0; e < sp.extent; ++e) {
                    float* dst = xn->grad.data() + (o * sp.extent + e) * sp.inner;
                    for (int64_t t = 0; t < times; ++t) {
                        const float* src = g + ((o * sp.extent + e) * times + t) * sp.inner;
                        for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
                    }
                }
        },
        "repeat_interleave");
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto xn = x.node();
    return detail::make_op(
        std::move(shape), {x},
        [&](std::span<float> out) {
            std::memcpy(out.data(), xn->value.data(), out.size() * sizeof(float));
        },
        [xn](TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) xn->grad[i] += self.grad[i];
        },
        "reshape");
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    auto xn = x.node();
    return detail::make_op(
        {1}, {x},
        [&](std::span<float> out) {
            double acc = 0.0;
            for (float v : xn->value) acc += v;
            out[0] = static_cast<float>(acc);
        },
        [xn](TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float g = self.grad[0];
            for (auto& gv : xn->grad) gv += g;
        },
        "sum_all");
}

Tensor mean_all(const Tensor& x) {
    const int64_t n = x.size();
    auto xn = x.node();
    return detail::make_op(
        {1}, {x},
        [&](std::span<float> out) {
            double acc = 0.0;
            for (float v : xn->value) acc += v;
            out[0] = static_cast<float>(acc / static_cast<double>(n));
        },
        [xn, n](TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float g = self.grad[0] / static_cast<float>(n);
            for (auto& gv : xn->grad) gv += g;
        },
        "mean_all");
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse_loss");
    const int64_t n = a.size();
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op(
        {1}, {a, b},
        [&](std::span<float> out) {
            double acc = 0.0;
            const float* pa = an->value.data();
            const float* pb = bn->value.data();
            for (int64_t i = 0; i < n; ++i) {
                const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
                acc += d * d;
            }
            out[0] = static_cast<float>(acc / static_cast<double>(n));
        },
        [an, bn, n](TensorNode& self) {
            const float g = self.grad[0] * 2.0f / static_cast<float>(n);
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i) an->grad[i] += g * (an->value[i] - bn->value[i]);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) bn->grad[i] -= g * (an->value[i] - bn->value[i]);
            }
        },
        "mse_loss");
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined()) throw Error("backward: undefined tensor");
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Iterative postorder DFS over parents.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

}  // namespace acdit
