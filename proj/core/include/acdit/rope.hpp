#pragma once

#include <cstdint>
#include <vector>

#include "acdit/tensor.hpp"

namespace acdit {

// Rotary encoding over D position dimensions: the head dimension is split
// into one even segment per dimension, each rotated with its own base.
struct RopeNdConfig {
    int dims = 0;
    std::vector<int64_t> segment_dims;   // even, sum to head dim
    std::vector<double> bases;           // b_j
    std::vector<int64_t> max_positions;  // L_j

    int64_t head_dim() const;
    void validate() const;
};

// 100 * ceil(8 * L / (100 * pi)); keeps the longest wavelength near 8x the
// maximum position.
double derive_base(int64_t max_position);

// Head dim split as evenly as possible into D even parts, remainder (in twos)
// to the leading dimensions.
std::vector<int64_t> split_segments(int64_t head_dim, int dims);

// Config with auto-derived segment split and bases.
RopeNdConfig make_rope_config(int64_t head_dim, const std::vector<int64_t>& max_positions);

// Rotation angles frozen for a fixed token -> position assignment. Pair p of
// token row r rotates by angle[r * head_dim/2 + p].
struct RopeTable {
    int64_t tokens = 0;
    int64_t half_dim = 0;
    std::vector<float> cos_v;  // (tokens, half_dim)
    std::vector<float> sin_v;
};

RopeTable build_rope_table(const RopeNdConfig& cfg,
                           const std::vector<std::vector<int64_t>>& positions);

// x: (B, T, H, d) or (T, H, d); interleaved pairs (2p, 2p+1) rotated in place
// per token row. Norm of every head vector is preserved.
Tensor apply_rope_nd(const Tensor& x, const RopeTable& table);

}  // namespace acdit
