#include "acdit/rope.hpp"

#include <cmath>
#include <string>

namespace acdit {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

int64_t RopeNdConfig::head_dim() const {
    int64_t s = 0;
    for (int64_t d : segment_dims) s += d;
    return s;
}

void RopeNdConfig::validate() const {
    if (dims < 1 || segment_dims.size() != static_cast<size_t>(dims) ||
        bases.size() != static_cast<size_t>(dims) ||
        max_positions.size() != static_cast<size_t>(dims)) {
        throw ShapeError("rope: inconsistent config arity");
    }
    for (int64_t d : segment_dims) {
        if (d <= 0 || d % 2 != 0) throw ShapeError("rope: segment dims must be positive even");
    }
    for (double b : bases) {
        if (!(b > 0.0)) throw ShapeError("rope: bases must be positive");
    }
}

double derive_base(int64_t max_position) {
    if (max_position < 1) throw ShapeError("derive_base: max position must be >= 1");
    return 100.0 * std::ceil(8.0 * static_cast<double>(max_position) / (100.0 * kPi));
}

std::vector<int64_t> split_segments(int64_t head_dim, int dims) {
    if (dims < 1 || head_dim < 2 * dims || head_dim % 2 != 0) {
        throw ShapeError("split_segments: head dim " + std::to_string(head_dim) +
                         " cannot host " + std::to_string(dims) + " even segments");
    }
    const int64_t base = (head_dim / dims) & ~int64_t{1};
    std::vector<int64_t> segs(static_cast<size_t>(dims), base);
    int64_t rem = head_dim - base * dims;
    for (size_t j = 0; rem > 0; ++j, rem -= 2) segs[j] += 2;
    return segs;
}

RopeNdConfig make_rope_config(int64_t head_dim, const std::vector<int64_t>& max_positions) {
    RopeNdConfig cfg;
    cfg.dims = static_cast<int>(max_positions.size());
    cfg.segment_dims = split_segments(head_dim, cfg.dims);
    cfg.max_positions = max_positions;
    cfg.bases.reserve(max_positions.size());
    for (int64_t L : max_positions) cfg.bases.push_back(derive_base(L));
    cfg.validate();
    return cfg;
}

RopeTable build_rope_table(const RopeNdConfig& cfg,
                           const std::vector<std::vector<int64_t>>& positions) {
    cfg.validate();
    const int64_t hd = cfg.head_dim();
    RopeTable tbl;
    tbl.tokens = static_cast<int64_t>(positions.size());
    tbl.half_dim = hd / 2;
    tbl.cos_v.resize(static_cast<size_t>(tbl.tokens * tbl.half_dim));
    tbl.sin_v.resize(static_cast<size_t>(tbl.tokens * tbl.half_dim));
    for (int64_t r = 0; r < tbl.tokens; ++r) {
        const auto& pos = positions[static_cast<size_t>(r)];
        if (pos.size() != static_cast<size_t>(cfg.dims)) {
            throw ShapeError("rope: position arity mismatch at token " + std::to_string(r));
        }
        int64_t pair = 0;
        for (int j = 0; j < cfg.dims; ++j) {
            const int64_t m = pos[static_cast<size_t>(j)];
            if (m < 0 || m >= cfg.max_positions[static_cast<size_t>(j)]) {
                throw ShapeError("rope: position " + std::to_string(m) + " outside [0," +
                                 std::to_string(cfg.max_positions[static_cast<size_t>(j)]) +
                                 ") in dimension " + std::to_string(j));
            }
            const int64_t dj = cfg.segment_dims[static_cast<size_t>(j)];
            const double bj = cfg.bases[static_cast<size_t>(j)];
            for (int64_t i = 0; i < dj / 2; ++i, ++pair) {
                const double theta = std::pow(bj, -2.0 * static_cast<double>(i) / static_cast<double>(dj));
                const double angle = static_cast<double>(m) * theta;
                tbl.cos_v[static_cast<size_t>(r * tbl.half_dim + pair)] = static_cast<float>(std::cos(angle));
                tbl.sin_v[static_cast<size_t>(r * tbl.half_dim + pair)] = static_cast<float>(std::sin(angle));
            }
        }
    }
    return tbl;
}

Tensor apply_rope_nd(const Tensor& x, const RopeTable& table) {
    const bool batched = x.rank() == 4;
    if (!(x.rank() == 3 || x.rank() == 4)) {
        throw ShapeError("apply_rope_nd: x must be (B,T,H,d) or (T,H,d)");
    }
    const int off = batched ? 1 : 0;
    const int64_t B = batched ? x.dim(0) : 1;
    const int64_t T = x.dim(off), H = x.dim(off + 1), D = x.dim(off + 2);
    if (D != table.half_dim * 2) {
        throw ShapeError("apply_rope_nd: head dim " + std::to_string(D) + " != 2 * " +
                         std::to_string(table.half_dim));
    }
    if (T != table.tokens) {
        throw ShapeError("apply_rope_nd: " + std::to_string(T) + " tokens vs table for " +
                         std::to_string(table.tokens));
    }
    auto xn = x.node();
    // Backward can outlive the caller's table; hold a copy.
    auto tbl = std::make_shared<RopeTable>(table);
    const int64_t half = table.half_dim;
    return detail::make_op(
        x.shape(), {x},
        [=](std::span<float> out) {
            const float* cs = tbl->cos_v.data();
            const float* sn = tbl->sin_v.data();
            const float* px = xn->value.data();
#pragma omp parallel for if (B * T * H > 256)
            for (int64_t bt = 0; bt < B * T; ++bt) {
                const int64_t t = bt % T;
                const float* crow = cs + t * half;
                const float* srow = sn + t * half;
                for (int64_t h = 0; h < H; ++h) {
                    const float* xr = px + (bt * H + h) * D;
                    float* orow = out.data() + (bt * H + h) * D;
                    for (int64_t p = 0; p < half; ++p) {
                        const float c = crow[p], s = srow[p];
                        const float a = xr[2 * p], b = xr[2 * p + 1];
                        orow[2 * p] = a * c - b * s;
                        orow[2 * p + 1] = a * s + b * c;
                    }
                }
            }
        },
        [=](TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const float* cs = tbl->cos_v.data();
            const float* sn = tbl->sin_v.data();
            const float* g = self.grad.data();
#pragma omp parallel for if (B * T * H > 256)
            for (int64_t bt = 0; bt < B * T; ++bt) {
                const int64_t t = bt % T;
                const float* crow = cs + t * half;
                const float* srow = sn + t * half;
                for (int64_t h = 0; h < H; ++h) {
                    const float* gr = g + (bt * H + h) * D;
                    float* gx = xn->grad.data() + (bt * H + h) * D;
                    for (int64_t p = 0; p < half; ++p) {
                        const float c = crow[p], s = srow[p];
                        const float ga = gr[2 * p], gb = gr[2 * p + 1];
                        gx[2 * p] += ga * c + gb * s;
                        gx[2 * p + 1] += -ga * s + gb * c;
                    }
                }
            }
        },
        "apply_rope_nd");
}

}  // namespace acdit
